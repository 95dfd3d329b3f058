#ifndef SMS_SGSP_HPP
#define SMS_SGSP_HPP

#include <vector>

#include "sms/cg.hpp"
#include "sms/operators.hpp"

namespace sms {

struct StepSizeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class SgspSolver { gradient, cg };

struct SgspConfig {
  int max_iters = 50;
  double step = kAutoStep;  // gradient mode; auto = backtracking from 1/L
  double lambda = 1.0;
  double tol = 1e-10;  // relative objective decrease
  SgspSolver solver = SgspSolver::cg;

  static constexpr double kAutoStep = -1.0;
};

struct SgspLog {
  std::vector<double> objective;
  int iters = 0;
  bool converged = false;
};

/// ||(H - I) F x||^2 + lambda ||D F x - y||^2.
inline double sgsp_objective(const Tensor4& x, const Tensor4& y,
                             const SamplingPlan& plan, const CompositeH& H,
                             double lambda) {
  const Tensor4 k = fft2c(x);
  const Tensor4 r = H.residual(k);
  Tensor4 dc = apply_D(k, plan);
  dc.vec() -= y.vec();
  const double a = norm2(r), b = norm2(dc);
  return a * a + lambda * b * b;
}

/// Gradient of the objective: 2 Psi(x) + 2 lambda F^-1 D* (D F x - y).
inline Tensor4 sgsp_gradient(const Tensor4& x, const Tensor4& y,
                             const SamplingPlan& plan, const CompositeH& H,
                             double lambda) {
  const Tensor4 k = fft2c(x);
  Tensor4 dc = apply_D(k, plan);
  dc.vec() -= y.vec();
  Tensor4 g = H.adjoint_residual(H.residual(k));
  g.vec() += lambda * adjoint_D(dc, plan, x.dims().n_slice).vec();
  g = ifft2c(g);
  g.vec() *= 2.0;
  return g;
}

/// Normal operator of the objective, image domain:
/// A x = Psi(x) + lambda F^-1 D* D F x.
inline Tensor4 sgsp_normal_op(const Tensor4& x, const SamplingPlan& plan,
                              const CompositeH& H, double lambda) {
  const Tensor4 k = fft2c(x);
  Tensor4 g = H.adjoint_residual(H.residual(k));
  g.vec() += lambda * adjoint_D(apply_D(k, plan), plan, x.dims().n_slice).vec();
  return ifft2c(g);
}

/// Largest-eigenvalue estimate of the normal operator by power iteration.
inline double sgsp_lipschitz(const SamplingPlan& plan, const CompositeH& H,
                             double lambda, int iters = 20,
                             std::uint64_t seed = 12345) {
  Rng rng(seed);
  Tensor4 v = gaussian_tensor(H.dims(), Domain::image, rng);
  double lam = 1.0;
  for (int i = 0; i < iters; ++i) {
    Tensor4 w = sgsp_normal_op(v, plan, H, lambda);
    const double n = norm2(w);
    if (n == 0) return 0.0;
    lam = n / norm2(v);
    w.vec() /= n;
    v = std::move(w);
  }
  return lam;
}

/// Baseline SGSP reconstruction.  cg mode solves the normal equations
/// (Psi + lambda F^-1 D* D F) x = lambda F^-1 D* y; gradient mode descends
/// with a fixed or backtracked step.  Initialization is the zero-filled
/// adjoint.
inline Tensor4 sgsp_reconstruct(const Tensor4& y, const SamplingPlan& plan,
                                const CompositeH& H, const SgspConfig& cfg,
                                SgspLog* log = nullptr) {
  if (cfg.lambda <= 0) throw std::invalid_argument("sgsp: lambda must be > 0");
  if (cfg.max_iters < 1) throw std::invalid_argument("sgsp: max_iters >= 1");
  const std::int64_t n_slice = H.dims().n_slice;
  Tensor4 x0 = ifft2c(adjoint_D(y, plan, n_slice));
  SgspLog local;
  SgspLog& lg = log ? *log : local;
  lg.objective.push_back(sgsp_objective(x0, y, plan, H, cfg.lambda));

  if (cfg.solver == SgspSolver::cg) {
    Tensor4 b = ifft2c(adjoint_D(y, plan, n_slice));
    b.vec() *= cfg.lambda;
    auto A = [&](const Tensor4& v) {
      return sgsp_normal_op(v, plan, H, cfg.lambda);
    };
    auto cb = [&](int, const Tensor4& xi) {
      lg.objective.push_back(sgsp_objective(xi, y, plan, H, cfg.lambda));
    };
    CgResult res = conjugate_gradient(A, b, cfg.max_iters, 1e-12, &x0, cb);
    lg.iters = res.iters;
    lg.converged = res.converged;
    return res.x;
  }

  // Gradient descent with optional backtracking.
  const bool auto_step = cfg.step == SgspConfig::kAutoStep;
  double eta = auto_step
                   ? 1.0 / (2.0 * std::max(sgsp_lipschitz(plan, H, cfg.lambda), 1e-12))
                   : cfg.step;
  if (eta <= 0) throw std::invalid_argument("sgsp: step must be > 0 or auto");
  Tensor4 x = x0;
  double obj = lg.objective.back();
  int bad_steps = 0;
  for (int it = 0; it < cfg.max_iters; ++it) {
    const Tensor4 g = sgsp_gradient(x, y, plan, H, cfg.lambda);
    Tensor4 xn = x;
    xn.vec() -= eta * g.vec();
    double next = sgsp_objective(xn, y, plan, H, cfg.lambda);
    if (auto_step) {
      int bt = 0;
      while (next > obj && bt < 30) {
        eta *= 0.5;
        xn = x;
        xn.vec() -= eta * g.vec();
        next = sgsp_objective(xn, y, plan, H, cfg.lambda);
        ++bt;
      }
    }
    if (next > obj) {
      if (++bad_steps >= 5)
        throw StepSizeError("sgsp: objective increased 5 consecutive steps; "
                            "reduce the step size");
    } else {
      bad_steps = 0;
    }
    const double rel = obj > 0 ? (obj - next) / obj : 0.0;
    x = std::move(xn);
    obj = next;
    lg.objective.push_back(obj);
    lg.iters = it + 1;
    if (rel >= 0 && rel < cfg.tol) {
      lg.converged = true;
      break;
    }
  }
  return x;
}

}  // namespace sms

#endif  // SMS_SGSP_HPP
