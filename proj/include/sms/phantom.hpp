#ifndef SMS_PHANTOM_HPP
#define SMS_PHANTOM_HPP

#include <cmath>
#include <numbers>
#include <string>

#include <json.hpp>

#include "sms/random.hpp"
#include "sms/tensor.hpp"

namespace sms {

enum class ShapeFamily { ellipses, blobs };

struct PhantomSpec {
  std::int64_t n_slice = 3;
  std::int64_t n_coil = 8;
  std::int64_t n_ky = 64;
  std::int64_t n_kx = 64;
  std::uint64_t seed = 0;
  ShapeFamily shape_family = ShapeFamily::ellipses;
};

struct Phantom {
  Tensor4 slices;           // (n_slice, 1, ky, kx), image domain
  std::vector<std::uint8_t> support;  // per slice, row-major ky*kx
  bool on_support(std::int64_t s, std::int64_t y, std::int64_t x) const {
    const auto& d = slices.dims();
    return support[static_cast<std::size_t>((s * d.n_ky + y) * d.n_kx + x)] != 0;
  }
};

namespace detail {

struct Ellipse {
  double cy, cx, ay, ax, angle;
  bool contains(double y, double x) const {
    const double dy = y - cy;
    const double dx = x - cx;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = c * dy + s * dx;
    const double v = -s * dy + c * dx;
    return (u * u) / (ay * ay) + (v * v) / (ax * ax) <= 1.0;
  }
};

}  // namespace detail

/// Deterministic synthetic multi-slice phantom.  Structures differ across
/// slices; magnitudes lie in [0, 1]; exactly zero outside the per-slice
/// support ellipse.
inline Phantom make_phantom(const PhantomSpec& spec) {
  if (spec.n_slice < 1) throw std::invalid_argument("make_phantom: n_slice >= 1");
  if (spec.n_ky < 8 || spec.n_kx < 8)
    throw std::invalid_argument("make_phantom: grid dims must be >= 8");

  const std::int64_t ny = spec.n_ky, nx = spec.n_kx;
  Phantom ph{Tensor4({spec.n_slice, 1, ny, nx}, Domain::image),
             std::vector<std::uint8_t>(
                 static_cast<std::size_t>(spec.n_slice * ny * nx), 0)};

  for (std::int64_t s = 0; s < spec.n_slice; ++s) {
    Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(s) + 101));
    const double cy = 0.5 * (ny - 1), cx = 0.5 * (nx - 1);
    detail::Ellipse outer{cy, cx, 0.42 * ny, 0.36 * nx,
                          0.15 * static_cast<double>(s) + rng.uniform(-0.1, 0.1)};

    const int n_inner = 3 + static_cast<int>(rng.index(4));
    std::vector<detail::Ellipse> inner;
    std::vector<double> amp;
    for (int k = 0; k < n_inner; ++k) {
      inner.push_back({cy + rng.uniform(-0.2, 0.2) * ny,
                       cx + rng.uniform(-0.2, 0.2) * nx,
                       rng.uniform(0.05, 0.18) * ny, rng.uniform(0.05, 0.18) * nx,
                       rng.uniform(0.0, std::numbers::pi)});
      amp.push_back(rng.uniform(-0.35, 0.45));
    }
    // Gaussian bump parameters for the blobs family.
    std::vector<std::array<double, 4>> bumps;  // cy, cx, width, amp
    for (int k = 0; k < n_inner + 2; ++k) {
      bumps.push_back({cy + rng.uniform(-0.25, 0.25) * ny,
                       cx + rng.uniform(-0.25, 0.25) * nx,
                       rng.uniform(0.06, 0.2) * std::min(ny, nx),
                       rng.uniform(0.1, 0.5)});
    }
    const double phase_a = rng.uniform(-1.5, 1.5) / ny;
    const double phase_b = rng.uniform(-1.5, 1.5) / nx;

    for (std::int64_t y = 0; y < ny; ++y) {
      for (std::int64_t x = 0; x < nx; ++x) {
        const double fy = static_cast<double>(y), fx = static_cast<double>(x);
        if (!outer.contains(fy, fx)) continue;
        ph.support[static_cast<std::size_t>((s * ny + y) * nx + x)] = 1;
        double v = 0.5;
        if (spec.shape_family == ShapeFamily::ellipses) {
          for (int k = 0; k < n_inner; ++k)
            if (inner[static_cast<std::size_t>(k)].contains(fy, fx))
              v += amp[static_cast<std::size_t>(k)];
        } else {
          v = 0.25;
          for (const auto& b : bumps) {
            const double d2 = (fy - b[0]) * (fy - b[0]) + (fx - b[1]) * (fx - b[1]);
            v += b[3] * std::exp(-d2 / (2.0 * b[2] * b[2]));
          }
        }
        v = std::clamp(v, 0.05, 1.0);
        const double phase = 2 * std::numbers::pi * (phase_a * fy + phase_b * fx);
        ph.slices.at(s, 0, y, x) = v * std::polar(1.0, phase);
      }
    }
  }
  return ph;
}

/// Smooth complex coil sensitivity maps, (1, n_coil, ky, kx), normalized so
/// the sum-of-squares magnitude is 1 at every pixel.
inline Tensor4 make_coils(std::int64_t n_coil, std::int64_t n_ky,
                          std::int64_t n_kx, std::uint64_t seed = 0) {
  if (n_coil < 2)
    throw std::invalid_argument(
        "make_coils: n_coil >= 2 required (single-coil degenerates the "
        "parallel-imaging operators)");
  Tensor4 maps({1, n_coil, n_ky, n_kx}, Domain::image);
  Rng rng(mix_seed(seed, 7));
  const double cy = 0.5 * (n_ky - 1), cx = 0.5 * (n_kx - 1);
  const double rad = 0.55 * std::max(n_ky, n_kx);
  const double width = 0.8 * std::max(n_ky, n_kx);
  for (std::int64_t c = 0; c < n_coil; ++c) {
    const double theta =
        2 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(n_coil);
    const double ccy = cy + rad * std::sin(theta);
    const double ccx = cx + rad * std::cos(theta);
    const double phi0 = rng.uniform(0, 2 * std::numbers::pi);
    const double py = rng.uniform(-0.5, 0.5) / n_ky;
    const double px = rng.uniform(-0.5, 0.5) / n_kx;
    for (std::int64_t y = 0; y < n_ky; ++y) {
      for (std::int64_t x = 0; x < n_kx; ++x) {
        const double d2 = (y - ccy) * (y - ccy) + (x - ccx) * (x - ccx);
        const double mag = 0.05 + std::exp(-d2 / (2 * width * width));
        const double phase =
            phi0 + 2 * std::numbers::pi * (py * (y - cy) + px * (x - cx));
        maps.at(0, c, y, x) = mag * std::polar(1.0, phase);
      }
    }
  }
  // Normalize sum-of-squares to 1 pointwise; stays smooth, keeps SoS
  // bounded away from 0 everywhere.
  for (std::int64_t y = 0; y < n_ky; ++y) {
    for (std::int64_t x = 0; x < n_kx; ++x) {
      double sos = 0;
      for (std::int64_t c = 0; c < n_coil; ++c) sos += std::norm(maps.at(0, c, y, x));
      const double inv = 1.0 / std::sqrt(sos);
      for (std::int64_t c = 0; c < n_coil; ++c) maps.at(0, c, y, x) *= inv;
    }
  }
  return maps;
}

/// Per-slice coil-weighted images: out[s,c] = coils[c] * phantom[s].
inline Tensor4 apply_coils(const Tensor4& phantom, const Tensor4& coils) {
  const auto& pd = phantom.dims();
  const auto& cdms = coils.dims();
  if (pd.n_ky != cdms.n_ky || pd.n_kx != cdms.n_kx || pd.n_coil != 1)
    throw std::invalid_argument("apply_coils: geometry mismatch");
  Tensor4 out({pd.n_slice, cdms.n_coil, pd.n_ky, pd.n_kx}, Domain::image);
  for (std::int64_t s = 0; s < pd.n_slice; ++s)
    for (std::int64_t c = 0; c < cdms.n_coil; ++c)
      for (std::int64_t y = 0; y < pd.n_ky; ++y)
        for (std::int64_t x = 0; x < pd.n_kx; ++x)
          out.at(s, c, y, x) = coils.at(0, c, y, x) * phantom.at(s, 0, y, x);
  return out;
}

struct SamplingPlan {
  std::int64_t n_ky = 0;
  std::int64_t n_kx = 0;
  std::int64_t accel = 1;
  std::int64_t acs_lines = 0;
  double caipi_increment = 0.0;  // radians per centered ky index per slice
  std::vector<std::uint8_t> line_mask;  // per ky line; kx fully sampled

  std::int64_t acs_start() const { return (n_ky - acs_lines) / 2; }
  bool sampled(std::int64_t ky) const {
    return line_mask[static_cast<std::size_t>(ky)] != 0;
  }
  std::int64_t n_sampled_lines() const {
    std::int64_t n = 0;
    for (auto m : line_mask) n += m;
    return n;
  }
};

inline SamplingPlan make_mask(std::int64_t accel, std::int64_t acs_lines,
                              std::int64_t n_ky, std::int64_t n_kx,
                              double caipi_increment = 0.0) {
  if (accel < 1) throw std::invalid_argument("make_mask: R >= 1 required");
  if (acs_lines < 0 || acs_lines > n_ky)
    throw std::invalid_argument("make_mask: acs_lines must be in [0, n_ky]");
  SamplingPlan plan;
  plan.n_ky = n_ky;
  plan.n_kx = n_kx;
  plan.accel = accel;
  plan.acs_lines = acs_lines;
  plan.caipi_increment = caipi_increment;
  plan.line_mask.assign(static_cast<std::size_t>(n_ky), 0);
  for (std::int64_t m = 0; m < n_ky; ++m) {
    const bool uniform = (m % accel) == 0;
    const bool acs = m >= plan.acs_start() && m < plan.acs_start() + acs_lines;
    plan.line_mask[static_cast<std::size_t>(m)] = (uniform || acs) ? 1 : 0;
  }
  return plan;
}

/// Per-slice CAIPIRINHA phase for centered ky index (m - n_ky/2).
inline cd caipi_phase(std::int64_t slice, std::int64_t ky_index,
                      std::int64_t n_ky, double increment) {
  const double mc = static_cast<double>(ky_index - n_ky / 2);
  return std::polar(1.0, static_cast<double>(slice) * mc * increment);
}

/// Multiplies slice j, ky line m by exp(i j (m - n_ky/2) increment); by the
/// shift theorem an increment of 2*pi/3 moves adjacent slices by FOV/3.
inline Tensor4 caipi_modulate(const Tensor4& k, double increment) {
  if (k.domain() != Domain::kspace)
    throw std::invalid_argument("caipi_modulate: expects kspace input");
  Tensor4 out = k;
  const auto& d = k.dims();
  for (std::int64_t s = 0; s < d.n_slice; ++s)
    for (std::int64_t c = 0; c < d.n_coil; ++c)
      for (std::int64_t y = 0; y < d.n_ky; ++y) {
        const cd ph = caipi_phase(s, y, d.n_ky, increment);
        for (std::int64_t x = 0; x < d.n_kx; ++x) out.at(s, c, y, x) *= ph;
      }
  return out;
}

/// y = D * sum over slices; input is already CAIPIRINHA-modulated k-space.
inline Tensor4 sms_collapse(const Tensor4& k, const SamplingPlan& plan) {
  if (k.domain() != Domain::kspace)
    throw std::invalid_argument("sms_collapse: expects kspace input");
  const auto& d = k.dims();
  if (d.n_ky != plan.n_ky || d.n_kx != plan.n_kx)
    throw std::invalid_argument("sms_collapse: plan grid mismatch");
  Tensor4 y({1, d.n_coil, d.n_ky, d.n_kx}, Domain::kspace);
  for (std::int64_t c = 0; c < d.n_coil; ++c)
    for (std::int64_t m = 0; m < d.n_ky; ++m) {
      if (!plan.sampled(m)) continue;
      for (std::int64_t x = 0; x < d.n_kx; ++x) {
        cd acc = 0;
        for (std::int64_t s = 0; s < d.n_slice; ++s) acc += k.at(s, c, m, x);
        y.at(0, c, m, x) = acc;
      }
    }
  return y;
}

inline nlohmann::json plan_to_json(const SamplingPlan& plan) {
  return nlohmann::json{{"n_ky", plan.n_ky},
                        {"n_kx", plan.n_kx},
                        {"accel", plan.accel},
                        {"acs_lines", plan.acs_lines},
                        {"caipi_increment", plan.caipi_increment}};
}

inline SamplingPlan plan_from_json(const nlohmann::json& j) {
  return make_mask(j.at("accel").get<std::int64_t>(),
                   j.at("acs_lines").get<std::int64_t>(),
                   j.at("n_ky").get<std::int64_t>(),
                   j.at("n_kx").get<std::int64_t>(),
                   j.at("caipi_increment").get<double>());
}

}  // namespace sms

#endif  // SMS_PHANTOM_HPP
