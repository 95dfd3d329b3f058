#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numbers>

#include "sms/phantom.hpp"
#include "sms/random.hpp"

using namespace sms;

TEST_CASE("phantom is deterministic in the seed") {
  PhantomSpec spec;
  spec.n_ky = spec.n_kx = 32;
  spec.seed = 7;
  const Phantom a = make_phantom(spec);
  const Phantom b = make_phantom(spec);
  CHECK(a.slices == b.slices);
  CHECK(a.support == b.support);
}

TEST_CASE("phantom background is exactly zero outside support") {
  PhantomSpec spec;
  spec.n_ky = spec.n_kx = 32;
  spec.seed = 3;
  for (auto fam : {ShapeFamily::ellipses, ShapeFamily::blobs}) {
    spec.shape_family = fam;
    const Phantom ph = make_phantom(spec);
    for (std::int64_t s = 0; s < spec.n_slice; ++s)
      for (std::int64_t y = 0; y < spec.n_ky; ++y)
        for (std::int64_t x = 0; x < spec.n_kx; ++x) {
          const double m = std::abs(ph.slices.at(s, 0, y, x));
          if (ph.on_support(s, y, x)) {
            CHECK(m <= 1.0);
          } else {
            CHECK(m == 0.0);
          }
        }
  }
}

TEST_CASE("phantom slices are pairwise distinct") {
  PhantomSpec spec;
  spec.n_ky = spec.n_kx = 32;
  spec.seed = 11;
  const Phantom ph = make_phantom(spec);
  for (std::int64_t i = 0; i < spec.n_slice; ++i)
    for (std::int64_t j = i + 1; j < spec.n_slice; ++j) {
      double d = 0;
      for (std::int64_t y = 0; y < spec.n_ky; ++y)
        for (std::int64_t x = 0; x < spec.n_kx; ++x)
          d += std::norm(ph.slices.at(i, 0, y, x) - ph.slices.at(j, 0, y, x));
      CHECK(std::sqrt(d) > 1e-3);
    }
}

TEST_CASE("phantom rejects tiny grids") {
  PhantomSpec spec;
  spec.n_ky = 4;
  CHECK_THROWS_AS((void)make_phantom(spec), std::invalid_argument);
}

TEST_CASE("coil maps: SoS bounded below, smooth, deterministic") {
  const Tensor4 a = make_coils(4, 32, 32, 5);
  const Tensor4 b = make_coils(4, 32, 32, 5);
  CHECK(a == b);
  double max_grad = 0;
  for (std::int64_t y = 0; y < 32; ++y)
    for (std::int64_t x = 0; x < 32; ++x) {
      double sos = 0;
      for (std::int64_t c = 0; c < 4; ++c) sos += std::norm(a.at(0, c, y, x));
      CHECK(sos >= 0.1);
      for (std::int64_t c = 0; c < 4; ++c) {
        if (y + 1 < 32)
          max_grad = std::max(max_grad,
                              std::abs(a.at(0, c, y + 1, x) - a.at(0, c, y, x)));
        if (x + 1 < 32)
          max_grad = std::max(max_grad,
                              std::abs(a.at(0, c, y, x + 1) - a.at(0, c, y, x)));
      }
    }
  CHECK(max_grad < 0.35);
  CHECK_THROWS_AS((void)make_coils(1, 32, 32), std::invalid_argument);
}

TEST_CASE("caipi modulation: identity at zero, invertible, unit modulus") {
  Rng rng(2);
  const Tensor4 k = gaussian_tensor({3, 2, 12, 12}, Domain::kspace, rng);
  CHECK(caipi_modulate(k, 0.0) == k);
  const Tensor4 fwd = caipi_modulate(k, 0.7);
  CHECK(std::abs(norm2(fwd) - norm2(k)) < 1e-12 * norm2(k));
  const Tensor4 back = caipi_modulate(fwd, -0.7);
  CHECK((back.vec() - k.vec()).norm() < 1e-12 * norm2(k));
}

TEST_CASE("caipi 2pi/3 shifts slice 1 by n_ky/3 rows") {
  PhantomSpec spec;
  spec.n_slice = 3;
  spec.n_coil = 1;
  spec.n_ky = spec.n_kx = 48;
  spec.seed = 9;
  const Phantom ph = make_phantom(spec);
  const double inc = 2 * std::numbers::pi / 3;
  const Tensor4 img = caipi_modulate(fft2c(ph.slices), inc);
  const Tensor4 shifted = ifft2c(img);
  const std::int64_t shift = 48 / 3;
  // modulation by exp(+i j mc inc) shifts the image of slice j by
  // -j*n_ky/3 rows (circularly)
  double err = 0, ref = 0;
  for (std::int64_t y = 0; y < 48; ++y)
    for (std::int64_t x = 0; x < 48; ++x) {
      const cd expect = ph.slices.at(1, 0, (y + shift) % 48, x);
      err += std::norm(shifted.at(1, 0, y, x) - expect);
      ref += std::norm(expect);
    }
  CHECK(std::sqrt(err / ref) < 1e-10);
}

TEST_CASE("make_mask line counts") {
  CHECK(make_mask(1, 0, 16, 16).n_sampled_lines() == 16);
  CHECK(make_mask(3, 0, 12, 12).n_sampled_lines() == 4);

  const SamplingPlan p = make_mask(10, 32, 320, 320);
  std::int64_t expect = 0;
  const std::int64_t a0 = (320 - 32) / 2;
  for (std::int64_t m = 0; m < 320; ++m)
    if (m % 10 == 0 || (m >= a0 && m < a0 + 32)) ++expect;
  CHECK(p.n_sampled_lines() == expect);

  CHECK_THROWS_AS((void)make_mask(3, 20, 16, 16), std::invalid_argument);
  CHECK_THROWS_AS((void)make_mask(0, 0, 16, 16), std::invalid_argument);

  // masks are idempotent projections
  const SamplingPlan q = make_mask(3, 4, 16, 16);
  for (std::int64_t m = 0; m < 16; ++m)
    CHECK((q.sampled(m) && q.sampled(m)) == q.sampled(m));
}

TEST_CASE("sms_collapse basics") {
  Rng rng(4);
  const Tensor4 single = gaussian_tensor({1, 2, 16, 16}, Domain::kspace, rng);
  const SamplingPlan full = make_mask(1, 0, 16, 16);
  CHECK((sms_collapse(single, full).vec() - single.vec()).norm() == 0.0);

  SamplingPlan none = full;
  std::fill(none.line_mask.begin(), none.line_mask.end(), 0);
  CHECK(norm2(sms_collapse(single, none)) == 0.0);

  // 3 slices, R=3, 32 ACS on 64 lines: nonzero ky lines = |ACS u every 3rd|
  const Tensor4 k = gaussian_tensor({3, 2, 64, 64}, Domain::kspace, rng);
  const SamplingPlan p = make_mask(3, 32, 64, 64);
  const Tensor4 y = sms_collapse(k, p);
  std::int64_t nonzero_lines = 0;
  for (std::int64_t m = 0; m < 64; ++m) {
    double line = 0;
    for (std::int64_t c = 0; c < 2; ++c)
      for (std::int64_t x = 0; x < 64; ++x) line += std::norm(y.at(0, c, m, x));
    if (line > 0) ++nonzero_lines;
  }
  std::int64_t expect = 0;
  const std::int64_t a0 = (64 - 32) / 2;
  for (std::int64_t m = 0; m < 64; ++m)
    if (m % 3 == 0 || (m >= a0 && m < a0 + 32)) ++expect;
  CHECK(nonzero_lines == expect);

  // adjoint (mask then copy to every slice) passes the inner-product test
  const Tensor4 v = gaussian_tensor({1, 2, 64, 64}, Domain::kspace, rng);
  Tensor4 adj({3, 2, 64, 64}, Domain::kspace);
  for (std::int64_t s = 0; s < 3; ++s)
    for (std::int64_t c = 0; c < 2; ++c)
      for (std::int64_t m = 0; m < 64; ++m)
        if (p.sampled(m))
          for (std::int64_t x = 0; x < 64; ++x)
            adj.at(s, c, m, x) = v.at(0, c, m, x);
  const cd lhs = inner(sms_collapse(k, p), v);
  const cd rhs = inner(k, adj);
  CHECK(std::abs(lhs - rhs) <= 1e-10 * norm2(k) * norm2(v));
}

TEST_CASE("plan JSON round trip") {
  const SamplingPlan p = make_mask(3, 8, 32, 32, 2 * std::numbers::pi / 3);
  const SamplingPlan q = plan_from_json(plan_to_json(p));
  CHECK(q.line_mask == p.line_mask);
  CHECK(q.accel == p.accel);
  CHECK(q.caipi_increment == doctest::Approx(p.caipi_increment));
}
