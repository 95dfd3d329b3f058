#ifndef SMS_DIFFUSION_HPP
#define SMS_DIFFUSION_HPP

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "sms/cg.hpp"
#include "sms/operators.hpp"
#include "sms/random.hpp"

namespace sms {

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Variance-exploding schedule: sigma(t) = sigma_min (sigma_max/sigma_min)^t
/// for t > 0, sigma(0) = 0; beta = d sigma^2 / dt; eta = kappa * beta.
struct NoiseSchedule {
  double sigma_min = 0.01;
  double sigma_max = 10.0;
  double kappa = 1.0;
  int n_steps = 500;
  double eps = 1e-3;

  double sigma(double t) const {
    if (t <= 0 || sigma_max <= 0 || sigma_min <= 0) return 0.0;
    return sigma_min * std::pow(sigma_max / sigma_min, t);
  }
  double beta(double t) const {
    if (sigma_max <= 0 || sigma_min <= 0) return 0.0;
    const double s = sigma(t);
    return 2.0 * std::log(sigma_max / sigma_min) * s * s;
  }
  double eta(double t) const { return kappa * beta(t); }
};

struct ProjectionConfig {
  double mu = 1e-2;
  int max_iters = 10;
  double tol = 1e-6;
};

struct ProjectionInfo {
  bool converged = false;
  int iters = 0;
};

/// Self-consistency projection: the minimizer of
/// ||(H - I) F z'||^2 + mu ||z' - z||^2, i.e. (Psi + mu I) z' = mu z,
/// solved by CG started at z.  Contracts the consistency residual at every
/// CG iterate; linear in z once converged.
inline Tensor4 project_T(const Tensor4& z, const CompositeH& H,
                         const ProjectionConfig& cfg,
                         ProjectionInfo* info = nullptr) {
  if (z.domain() != Domain::image)
    throw std::invalid_argument("project_T: expects image-domain input");
  if (!z.vec().allFinite())
    throw std::invalid_argument("project_T: non-finite input");
  if (cfg.max_iters < 1 || cfg.mu <= 0)
    throw std::invalid_argument("project_T: mu > 0 and m >= 1 required");
  auto A = [&](const Tensor4& v) {
    Tensor4 r = H.normal_psi(v);
    r.vec() += cfg.mu * v.vec();
    return r;
  };
  Tensor4 b = z;
  b.vec() *= cfg.mu;
  CgResult res = conjugate_gradient(A, b, cfg.max_iters, cfg.tol, &z);
  if (info) {
    info->converged = res.converged;
    info->iters = res.iters;
  }
  return res.x;
}

struct Perturbation {
  Tensor4 x_t;
  Tensor4 z;  // the raw white noise used
};

/// Draws from the structured perturbation kernel: x_t = x0 + sigma(t) T(z)
/// with z white, so cov(x_t - x0) = sigma^2 T T*.
inline Perturbation perturb(const Tensor4& x0, double t,
                            const NoiseSchedule& sched, const CompositeH& H,
                            const ProjectionConfig& cfg, Rng& rng) {
  if (t < 0 || t > 1)
    throw std::invalid_argument("perturb: t must be in [0, 1]");
  Perturbation p{x0, gaussian_tensor(x0.dims(), Domain::image, rng)};
  const double s = sched.sigma(t);
  if (s > 0) {
    Tensor4 tz = project_T(p.z, H, cfg);
    p.x_t.vec() += s * tz.vec();
  }
  return p;
}

using ScoreFn = std::function<Tensor4(const Tensor4& x, double t)>;

/// Brownian increment over [t1, t0] (t1 < t0); defaults to an independent
/// draw with per-component variance |t0 - t1|.
using NoiseSource = std::function<Tensor4(double t0, double t1, Rng& rng)>;

struct SamplerConfig {
  NoiseSchedule sched;
  ProjectionConfig proj;
  double lambda_dc = 1.0;
  bool hard_dc = true;
  int corrector_steps = 0;  // Langevin corrector, default off
  double corrector_snr = 0.16;
  std::uint64_t seed = 0;
  std::optional<Tensor4> init_base;  // default: zero-filled adjoint
  NoiseSource noise_source;          // optional coupled-path override
};

struct SampleLog {
  std::vector<double> t;
  std::vector<double> consistency;  // ||(H-I)Fx|| / ||x||
};

namespace detail {

inline double consistency_ratio(const CompositeH& H, const Tensor4& x) {
  const double nx = norm2(x);
  if (nx == 0) return 0;
  return norm2(H.residual(fft2c(x))) / nx;
}

}  // namespace detail

/// Euler-Maruyama integration of the reverse SDE from t = 1 down to eps.
/// The conditional score is s(x, t) + lambda_dc F^-1 D* (y - D F x) /
/// sigma^2(t); score and noise are both passed through the projection T.
inline Tensor4 reverse_sample(const Tensor4& y, const SamplingPlan& plan,
                              const CompositeH& H, const ScoreFn& score,
                              const SamplerConfig& cfg,
                              SampleLog* log = nullptr) {
  if (cfg.lambda_dc < 0)
    throw std::invalid_argument("reverse_sample: lambda_dc >= 0 required");
  const std::int64_t n_slice = H.dims().n_slice;
  const NoiseSchedule& sc = cfg.sched;
  const int N = sc.n_steps;
  if (N < 1) throw std::invalid_argument("reverse_sample: n_steps >= 1");
  const double dt = (sc.eps - 1.0) / N;

  Rng rng(mix_seed(cfg.seed, 0xd1f));
  Tensor4 x = cfg.init_base ? *cfg.init_base
                            : ifft2c(adjoint_D(y, plan, n_slice));
  if (!(x.dims() == H.dims()))
    throw std::invalid_argument("reverse_sample: init/grid mismatch");
  const double s1 = sc.sigma(1.0);
  if (s1 > 0) {
    Tensor4 z = gaussian_tensor(x.dims(), Domain::image, rng);
    x.vec() += s1 * project_T(z, H, cfg.proj).vec();
  }

  auto conditional_score = [&](const Tensor4& xi, double t) {
    Tensor4 g = score(xi, t);
    const double s2 = sc.sigma(t) * sc.sigma(t);
    if (cfg.lambda_dc > 0 && s2 > 0) {
      Tensor4 k = fft2c(xi);
      Tensor4 r = y;
      r.vec() -= apply_D(k, plan).vec();
      g.vec() += (cfg.lambda_dc / s2) *
                 ifft2c(adjoint_D(r, plan, n_slice)).vec();
    }
    return g;
  };

  for (int kstep = 0; kstep < N; ++kstep) {
    const double t = 1.0 + kstep * dt;
    const double t_next = 1.0 + (kstep + 1) * dt;
    const double beta = sc.beta(t);
    const double eta = sc.eta(t);

    Tensor4 drift(x.dims(), Domain::image);
    if (eta != 0) drift.vec() += (eta / 2.0) * H.normal_psi(x).vec();
    if (beta != 0) {
      Tensor4 g = conditional_score(x, t);
      if (!g.vec().allFinite())
        throw DivergenceError("reverse_sample: non-finite score at step " +
                              std::to_string(kstep) + " (t = " +
                              std::to_string(t) + ")");
      Tensor4 ts = project_T(g, H, cfg.proj);
      drift.vec() -= beta * ts.vec();
    }
    x.vec() += dt * drift.vec();

    if (beta > 0) {
      Tensor4 dw = cfg.noise_source
                       ? cfg.noise_source(t, t_next, rng)
                       : [&] {
                           Tensor4 w = gaussian_tensor(x.dims(), Domain::image, rng);
                           w.vec() *= std::sqrt(-dt);
                           return w;
                         }();
      Tensor4 tw = project_T(dw, H, cfg.proj);
      x.vec() += std::sqrt(beta) * tw.vec();
    }

    for (int j = 0; j < cfg.corrector_steps; ++j) {
      Tensor4 gc = conditional_score(x, t_next);
      if (!gc.vec().allFinite())
        throw DivergenceError("reverse_sample: non-finite score at step " +
                              std::to_string(kstep) + " (corrector)");
      Tensor4 g = project_T(gc, H, cfg.proj);
      Tensor4 w = gaussian_tensor(x.dims(), Domain::image, rng);
      const double gn = norm2(g), wn = norm2(w);
      if (gn == 0) break;
      const double delta = 2.0 * std::pow(cfg.corrector_snr * wn / gn, 2);
      x.vec() += delta * g.vec() +
                 std::sqrt(2.0 * delta) * project_T(w, H, cfg.proj).vec();
    }

    if (!x.vec().allFinite())
      throw DivergenceError("reverse_sample: non-finite iterate at step " +
                            std::to_string(kstep) + " (t = " + std::to_string(t) +
                            ")");
    if (log) {
      log->t.push_back(t_next);
      log->consistency.push_back(detail::consistency_ratio(H, x));
    }
  }

  if (cfg.hard_dc) {
    // One hard replacement on sampled lines: D F x = y exactly afterwards.
    Tensor4 k = fft2c(x);
    Tensor4 r = y;
    r.vec() -= apply_D(k, plan).vec();
    k.vec() += (1.0 / static_cast<double>(n_slice)) *
               adjoint_D(r, plan, n_slice).vec();
    x = ifft2c(k);
  }
  return x;
}

}  // namespace sms

#endif  // SMS_DIFFUSION_HPP
