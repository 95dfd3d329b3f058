#ifndef SMS_CG_HPP
#define SMS_CG_HPP

#include <functional>
#include <vector>

#include "sms/tensor.hpp"

namespace sms {

struct OperatorDefectError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using LinOp = std::function<Tensor4(const Tensor4&)>;

struct CgResult {
  Tensor4 x;
  int iters = 0;
  double rel_residual = 0;
  bool converged = false;
  std::vector<double> residual_history;
};

/// Conjugate gradients for Hermitian positive semidefinite A.  Curvature
/// below -1e-10 * ||p||^2 signals a defective operator.
inline CgResult conjugate_gradient(
    const LinOp& A, const Tensor4& b, int max_iters, double tol,
    const Tensor4* x0 = nullptr,
    const std::function<void(int, const Tensor4&)>& per_iter = nullptr) {
  CgResult res;
  res.x = x0 ? *x0 : Tensor4(b.dims(), b.domain());
  Tensor4 r = b;
  if (x0) r.vec() -= A(res.x).vec();
  const double bnorm = norm2(b);
  const double stop = tol * (bnorm > 0 ? bnorm : 1.0);
  Tensor4 p = r;
  double rho = std::real(inner(r, r));
  res.residual_history.push_back(std::sqrt(rho));
  for (int it = 0; it < max_iters; ++it) {
    if (std::sqrt(rho) <= stop) {
      res.converged = true;
      break;
    }
    Tensor4 Ap = A(p);
    const double curvature = std::real(inner(p, Ap));
    const double p2 = std::real(inner(p, p));
    if (curvature < -1e-10 * p2)
      throw OperatorDefectError("cg: non-positive curvature; operator is not PSD");
    if (curvature <= 0) break;  // semidefinite stall
    const double alpha = rho / curvature;
    res.x.vec() += alpha * p.vec();
    r.vec() -= alpha * Ap.vec();
    const double rho_next = std::real(inner(r, r));
    p.vec() = r.vec() + (rho_next / rho) * p.vec();
    rho = rho_next;
    res.iters = it + 1;
    res.residual_history.push_back(std::sqrt(rho));
    if (per_iter) per_iter(it, res.x);
  }
  if (std::sqrt(rho) <= stop) res.converged = true;
  res.rel_residual = bnorm > 0 ? std::sqrt(rho) / bnorm : std::sqrt(rho);
  return res;
}

}  // namespace sms

#endif  // SMS_CG_HPP
