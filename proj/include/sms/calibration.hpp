#ifndef SMS_CALIBRATION_HPP
#define SMS_CALIBRATION_HPP

#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <json.hpp>

#include "sms/io.hpp"
#include "sms/phantom.hpp"
#include "sms/tensor.hpp"

namespace sms {

struct CalibrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Auto value for the Tikhonov weight: 1e-4 * ||A||_F^2 / n_rows.
constexpr double kAutoLambda = -1.0;

/// One convolution kernel: taps[co][ci][dy][dx] with offsets centered at
/// (kh/2, kw/2).  Output coil co at point p sums taps * input(p + offset).
struct Kernel {
  std::int64_t n_coil_out = 0, n_coil_in = 0, kh = 0, kw = 0;
  std::vector<cd> taps;

  Kernel() = default;
  Kernel(std::int64_t co, std::int64_t ci, std::int64_t h, std::int64_t w)
      : n_coil_out(co), n_coil_in(ci), kh(h), kw(w),
        taps(static_cast<std::size_t>(co * ci * h * w), cd(0)) {}

  cd& at(std::int64_t co, std::int64_t ci, std::int64_t dy, std::int64_t dx) {
    return taps[static_cast<std::size_t>(((co * n_coil_in + ci) * kh + dy) * kw + dx)];
  }
  cd at(std::int64_t co, std::int64_t ci, std::int64_t dy, std::int64_t dx) const {
    return taps[static_cast<std::size_t>(((co * n_coil_in + ci) * kh + dy) * kw + dx)];
  }

  /// Identity kernel (delta at the center of each self-coil tap).
  static Kernel identity(std::int64_t n_coil, std::int64_t h = 1, std::int64_t w = 1) {
    Kernel k(n_coil, n_coil, h, w);
    for (std::int64_t c = 0; c < n_coil; ++c) k.at(c, c, h / 2, w / 2) = 1.0;
    return k;
  }
};

struct SpiritKernelSet {
  std::vector<Kernel> slices;  // G_i, zero center self-tap
  double lambda = 0;
  std::vector<double> fit_residual;  // relative, per slice
};

struct SliceGrappaKernelSet {
  std::vector<Kernel> slices;  // K_i: collapsed -> slice i
  double lambda = 0;
  std::vector<double> fit_residual;
};

/// Rectangular calibration window inside a full k-space grid.
struct AcsRegion {
  std::int64_t ky0 = 0, n_ky = 0, kx0 = 0, n_kx = 0;

  static AcsRegion full(const Dims4& d) { return {0, d.n_ky, 0, d.n_kx}; }
  static AcsRegion from_plan(const SamplingPlan& plan) {
    return {plan.acs_start(), plan.acs_lines, 0, plan.n_kx};
  }
};

namespace detail {

struct CalibSystem {
  Eigen::MatrixXcd A;  // targets x (n_coil_in * kh * kw)
  Eigen::MatrixXcd B;  // targets x n_coil_out
};

/// Rows: interior calibration targets whose full kernel neighborhood lies
/// inside the region.  Columns: source (coil, dy, dx) neighborhood values.
inline CalibSystem build_system(const Tensor4& src, std::int64_t src_slice,
                                const Tensor4& tgt, std::int64_t tgt_slice,
                                const AcsRegion& r, std::int64_t kh,
                                std::int64_t kw) {
  if (kh % 2 == 0 || kw % 2 == 0)
    throw std::invalid_argument("calibration: kernel dims must be odd");
  if (r.n_ky < kh + 2 || r.n_kx < kw + 2)
    throw CalibrationError("calibration: ACS region smaller than (kh+2)x(kw+2)");
  const std::int64_t hh = kh / 2, hw = kw / 2;
  const std::int64_t ty0 = r.ky0 + hh, ty1 = r.ky0 + r.n_ky - hh;
  const std::int64_t tx0 = r.kx0 + hw, tx1 = r.kx0 + r.n_kx - hw;
  const std::int64_t n_rows = (ty1 - ty0) * (tx1 - tx0);
  const std::int64_t nc_in = src.dims().n_coil;
  const std::int64_t nc_out = tgt.dims().n_coil;
  const std::int64_t n_cols = nc_in * kh * kw;
  if (n_rows < 1) throw CalibrationError("calibration: no interior ACS targets");

  CalibSystem sys;
  sys.A.resize(n_rows, n_cols);
  sys.B.resize(n_rows, nc_out);
  std::int64_t row = 0;
  for (std::int64_t y = ty0; y < ty1; ++y) {
    for (std::int64_t x = tx0; x < tx1; ++x, ++row) {
      std::int64_t col = 0;
      for (std::int64_t ci = 0; ci < nc_in; ++ci)
        for (std::int64_t dy = -hh; dy <= hh; ++dy)
          for (std::int64_t dx = -hw; dx <= hw; ++dx, ++col)
            sys.A(row, col) = src.at(src_slice, ci, y + dy, x + dx);
      for (std::int64_t co = 0; co < nc_out; ++co)
        sys.B(row, co) = tgt.at(tgt_slice, co, y, x);
    }
  }
  return sys;
}

inline double resolve_lambda(double lambda, const Eigen::MatrixXcd& A) {
  if (lambda == kAutoLambda)
    return 1e-4 * A.squaredNorm() / static_cast<double>(A.rows());
  if (lambda < 0) throw std::invalid_argument("calibration: lambda_t must be >= 0");
  return lambda;
}

/// Ridge least squares via normal equations.  lambda == 0 with a singular
/// normal matrix is an error; ill-conditioned but positive systems fall
/// back to a dense orthogonal factorization.
inline Eigen::VectorXcd solve_ridge(const Eigen::MatrixXcd& A,
                                    const Eigen::VectorXcd& b, double lambda) {
  if (lambda == 0.0) {
    if (A.rows() < A.cols())
      throw CalibrationError(
          "calibration: under-determined system (too few ACS rows)");
    // rank-revealing factorization so exact singularity is reported rather
    // than silently producing a huge kernel
    Eigen::ColPivHouseholderQR<Eigen::MatrixXcd> qr(A);
    if (qr.rank() < A.cols())
      throw SolverError(
          "calibration: singular normal matrix with lambda_t = 0; rerun with "
          "lambda_t > 0");
    return qr.solve(b);
  }
  Eigen::MatrixXcd N = A.adjoint() * A;
  N.diagonal().array() += lambda;
  Eigen::LLT<Eigen::MatrixXcd> llt(N);
  if (llt.info() == Eigen::Success) return llt.solve(A.adjoint() * b);
  return N.completeOrthogonalDecomposition().solve(A.adjoint() * b);
}

}  // namespace detail

/// SPIRiT calibration for one slice: G minimizing
/// sum_p ||G (*) acs(p) - acs(p)||^2 + lambda ||G||^2 with the center
/// self-coil tap constrained to zero.
inline Kernel fit_spirit_slice(const Tensor4& acs, std::int64_t slice,
                               const AcsRegion& region, std::int64_t kh,
                               std::int64_t kw, double lambda_t,
                               double* residual_out = nullptr) {
  if (acs.domain() != Domain::kspace)
    throw std::invalid_argument("fit_spirit: expects kspace calibration data");
  auto sys = detail::build_system(acs, slice, acs, slice, region, kh, kw);
  const double lambda = detail::resolve_lambda(lambda_t, sys.A);
  const std::int64_t nc = acs.dims().n_coil;
  const std::int64_t n_cols = sys.A.cols();
  Kernel g(nc, nc, kh, kw);
  double res2 = 0, tgt2 = 0;
  for (std::int64_t co = 0; co < nc; ++co) {
    // Drop the target coil's own center tap.
    const std::int64_t drop = (co * kh + kh / 2) * kw + kw / 2;
    Eigen::MatrixXcd Ac(sys.A.rows(), n_cols - 1);
    Ac.leftCols(drop) = sys.A.leftCols(drop);
    Ac.rightCols(n_cols - 1 - drop) = sys.A.rightCols(n_cols - 1 - drop);
    const Eigen::VectorXcd b = sys.B.col(co);
    const Eigen::VectorXcd w = detail::solve_ridge(Ac, b, lambda);
    std::int64_t col = 0;
    for (std::int64_t ci = 0; ci < nc; ++ci)
      for (std::int64_t dy = 0; dy < kh; ++dy)
        for (std::int64_t dx = 0; dx < kw; ++dx) {
          const std::int64_t full = (ci * kh + dy) * kw + dx;
          if (full == drop) continue;  // center self-tap stays exactly 0
          g.at(co, ci, dy, dx) = w(col++);
        }
    res2 += (Ac * w - b).squaredNorm();
    tgt2 += b.squaredNorm();
  }
  if (residual_out) *residual_out = tgt2 > 0 ? std::sqrt(res2 / tgt2) : 0.0;
  return g;
}

inline SpiritKernelSet fit_spirit(const Tensor4& acs, const AcsRegion& region,
                                  std::int64_t kh = 5, std::int64_t kw = 5,
                                  double lambda_t = kAutoLambda) {
  SpiritKernelSet set;
  set.lambda = lambda_t;
  for (std::int64_t s = 0; s < acs.dims().n_slice; ++s) {
    double res = 0;
    set.slices.push_back(fit_spirit_slice(acs, s, region, kh, kw, lambda_t, &res));
    set.fit_residual.push_back(res);
  }
  return set;
}

/// Slice-GRAPPA calibration: K_i mapping collapsed multi-coil k-space to
/// slice-i multi-coil k-space over interior ACS targets.
inline SliceGrappaKernelSet fit_slice_grappa(const Tensor4& calib_slices,
                                             const Tensor4& calib_collapsed,
                                             const AcsRegion& region,
                                             std::int64_t kh = 5,
                                             std::int64_t kw = 5,
                                             double lambda_t = kAutoLambda) {
  if (calib_slices.domain() != Domain::kspace ||
      calib_collapsed.domain() != Domain::kspace)
    throw std::invalid_argument("fit_slice_grappa: expects kspace data");
  if (calib_collapsed.dims().n_slice != 1 ||
      calib_collapsed.dims().n_coil != calib_slices.dims().n_coil ||
      calib_collapsed.dims().n_ky != calib_slices.dims().n_ky ||
      calib_collapsed.dims().n_kx != calib_slices.dims().n_kx)
    throw std::invalid_argument("fit_slice_grappa: geometry mismatch");

  SliceGrappaKernelSet set;
  set.lambda = lambda_t;
  const std::int64_t nc = calib_slices.dims().n_coil;
  for (std::int64_t s = 0; s < calib_slices.dims().n_slice; ++s) {
    auto sys = detail::build_system(calib_collapsed, 0, calib_slices, s, region,
                                    kh, kw);
    const double lambda = detail::resolve_lambda(lambda_t, sys.A);
    Kernel k(nc, nc, kh, kw);
    double res2 = 0, tgt2 = 0;
    for (std::int64_t co = 0; co < nc; ++co) {
      const Eigen::VectorXcd b = sys.B.col(co);
      const Eigen::VectorXcd w = detail::solve_ridge(sys.A, b, lambda);
      std::int64_t col = 0;
      for (std::int64_t ci = 0; ci < nc; ++ci)
        for (std::int64_t dy = 0; dy < kh; ++dy)
          for (std::int64_t dx = 0; dx < kw; ++dx) k.at(co, ci, dy, dx) = w(col++);
      res2 += (sys.A * w - b).squaredNorm();
      tgt2 += b.squaredNorm();
    }
    set.slices.push_back(std::move(k));
    set.fit_residual.push_back(tgt2 > 0 ? std::sqrt(res2 / tgt2) : 0.0);
  }
  return set;
}

// ---- serialization: CT4F payload + JSON sidecar -------------------------

namespace detail {

template <typename Set>
inline void save_kernels(const Set& set, const std::string& base,
                         const char* kind) {
  if (set.slices.empty()) throw std::invalid_argument("save_kernels: empty set");
  const Kernel& k0 = set.slices.front();
  const std::int64_t ns = static_cast<std::int64_t>(set.slices.size());
  Tensor4 payload({ns * k0.n_coil_out, k0.n_coil_in, k0.kh, k0.kw},
                  Domain::kspace);
  std::int64_t idx = 0;
  for (const auto& k : set.slices)
    for (const cd& v : k.taps) payload[idx++] = v;
  write_tensor(payload, base + ".ct4f");

  nlohmann::json meta{{"kind", kind},
                      {"n_slice", ns},
                      {"n_coil_out", k0.n_coil_out},
                      {"n_coil_in", k0.n_coil_in},
                      {"kh", k0.kh},
                      {"kw", k0.kw},
                      {"lambda", set.lambda},
                      {"fit_residual", set.fit_residual}};
  write_file_bytes(base + ".json", meta.dump(2) + "\n");
}

template <typename Set>
inline Set load_kernels(const std::string& base, const char* kind) {
  const auto meta = nlohmann::json::parse(read_file_bytes(base + ".json"));
  if (meta.at("kind").get<std::string>() != kind)
    throw FormatError(std::string("kernel file kind mismatch, expected ") + kind);
  const Tensor4 payload = read_tensor(base + ".ct4f");
  Set set;
  set.lambda = meta.at("lambda").get<double>();
  set.fit_residual = meta.at("fit_residual").get<std::vector<double>>();
  const std::int64_t ns = meta.at("n_slice").get<std::int64_t>();
  const std::int64_t nco = meta.at("n_coil_out").get<std::int64_t>();
  const std::int64_t nci = meta.at("n_coil_in").get<std::int64_t>();
  const std::int64_t kh = meta.at("kh").get<std::int64_t>();
  const std::int64_t kw = meta.at("kw").get<std::int64_t>();
  if (payload.dims().count() != ns * nco * nci * kh * kw)
    throw FormatError("kernel payload size does not match metadata");
  std::int64_t idx = 0;
  for (std::int64_t s = 0; s < ns; ++s) {
    Kernel k(nco, nci, kh, kw);
    for (auto& v : k.taps) v = payload[idx++];
    set.slices.push_back(std::move(k));
  }
  return set;
}

}  // namespace detail

inline void save_spirit(const SpiritKernelSet& s, const std::string& base) {
  detail::save_kernels(s, base, "spirit");
}
inline SpiritKernelSet load_spirit(const std::string& base) {
  return detail::load_kernels<SpiritKernelSet>(base, "spirit");
}
inline void save_slice_grappa(const SliceGrappaKernelSet& s,
                              const std::string& base) {
  detail::save_kernels(s, base, "slice_grappa");
}
inline SliceGrappaKernelSet load_slice_grappa(const std::string& base) {
  return detail::load_kernels<SliceGrappaKernelSet>(base, "slice_grappa");
}

}  // namespace sms

#endif  // SMS_CALIBRATION_HPP
