#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "sms/io.hpp"
#include "sms/random.hpp"
#include "sms/tensor.hpp"

using namespace sms;

namespace {

double rel_err(const Tensor4& a, const Tensor4& b) {
  const double nb = norm2(b);
  return (a.vec() - b.vec()).norm() / (nb > 0 ? nb : 1.0);
}

}  // namespace

TEST_CASE("fft2c: center impulse maps to constant plane") {
  Tensor4 t({1, 1, 8, 8}, Domain::image);
  t.at(0, 0, 4, 4) = 1.0;
  const Tensor4 k = fft2c(t);
  CHECK(k.domain() == Domain::kspace);
  for (std::int64_t i = 0; i < k.size(); ++i) {
    CHECK(k[i].real() == doctest::Approx(1.0 / 8.0).epsilon(1e-12));
    CHECK(std::abs(k[i].imag()) < 1e-14);
  }
}

TEST_CASE("ifft2c: constant plane maps to center impulse") {
  Tensor4 k({1, 1, 8, 8}, Domain::kspace);
  for (std::int64_t i = 0; i < k.size(); ++i) k[i] = 1.0 / 8.0;
  const Tensor4 img = ifft2c(k);
  CHECK(std::abs(img.at(0, 0, 4, 4) - cd(1.0, 0.0)) < 1e-12);
  double off = 0;
  for (std::int64_t y = 0; y < 8; ++y)
    for (std::int64_t x = 0; x < 8; ++x)
      if (y != 4 || x != 4) off = std::max(off, std::abs(img.at(0, 0, y, x)));
  CHECK(off < 1e-13);
}

TEST_CASE("fft2c/ifft2c inverse pair and Parseval on random tensors") {
  Rng rng(42);
  for (int rep = 0; rep < 5; ++rep) {
    const Tensor4 t = gaussian_tensor({3, 4, 16, 16}, Domain::image, rng);
    const Tensor4 k = fft2c(t);
    CHECK(std::abs(norm2(k) - norm2(t)) / norm2(t) < 1e-12);
    CHECK(rel_err(ifft2c(k), t) < 1e-12);
  }
  // the other direction, including odd sizes
  const Tensor4 k = gaussian_tensor({2, 2, 9, 7}, Domain::kspace, rng);
  CHECK(rel_err(fft2c(ifft2c(k)), k) < 1e-12);
}

TEST_CASE("ifft2c linearity") {
  Rng rng(7);
  const Tensor4 k1 = gaussian_tensor({2, 2, 8, 8}, Domain::kspace, rng);
  const Tensor4 k2 = gaussian_tensor({2, 2, 8, 8}, Domain::kspace, rng);
  const cd a(0.3, -1.2), b(2.0, 0.7);
  const Tensor4 lhs = ifft2c(a * k1 + b * k2);
  const Tensor4 rhs = a * ifft2c(k1) + b * ifft2c(k2);
  CHECK(rel_err(lhs, rhs) < 1e-12);
}

TEST_CASE("domain tag flips only under the transforms") {
  Tensor4 t({1, 1, 8, 8}, Domain::image);
  CHECK_THROWS_AS((void)ifft2c(t), std::invalid_argument);
  const Tensor4 k = fft2c(t);
  CHECK_THROWS_AS((void)fft2c(k), std::invalid_argument);
}

TEST_CASE("zero-dimension tensor is rejected") {
  CHECK_THROWS_AS(Tensor4({0, 1, 8, 8}, Domain::image), std::invalid_argument);
}

TEST_CASE("inner product properties") {
  Rng rng(3);
  const Tensor4 a = gaussian_tensor({2, 3, 8, 8}, Domain::image, rng);
  const Tensor4 b = gaussian_tensor({2, 3, 8, 8}, Domain::image, rng);
  const cd ab = inner(a, b);
  CHECK(std::abs(ab - std::conj(inner(b, a))) < 1e-12);
  const cd aa = inner(a, a);
  CHECK(aa.real() >= 0);
  CHECK(std::abs(aa.imag()) < 1e-12);

  // basis tensor picks out the entry
  Tensor4 e(a.dims(), Domain::image);
  e[37] = 1.0;
  CHECK(std::abs(inner(e, a) - a[37]) < 1e-15);

  // linearity in the second argument
  const cd s(1.5, -0.5);
  CHECK(std::abs(inner(a, s * b) - s * inner(a, b)) < 1e-10);

  Tensor4 wrong({1, 1, 8, 8}, Domain::image);
  CHECK_THROWS_AS((void)inner(a, wrong), std::invalid_argument);
}

TEST_CASE("CT4F round trip is bit-exact") {
  Rng rng(99);
  Tensor4 t = gaussian_tensor({3, 8, 32, 32}, Domain::kspace, rng);
  const std::string dir = std::filesystem::temp_directory_path() / "sms_io_test";
  std::filesystem::create_directories(dir);
  const std::string path = dir + "/t.ct4f";
  write_tensor(t, path);
  const Tensor4 back = read_tensor(path);
  CHECK(back == t);
  CHECK(encode_tensor(back) == encode_tensor(t));

  // single precision round trip is also bit-exact
  Tensor4 tf = t;
  tf.set_storage(Precision::c64);
  for (std::int64_t i = 0; i < tf.size(); ++i)
    tf[i] = cd(static_cast<float>(tf[i].real()), static_cast<float>(tf[i].imag()));
  write_tensor(tf, path);
  const Tensor4 backf = read_tensor(path);
  CHECK(backf == tf);
  CHECK(backf.storage() == Precision::c64);
}

TEST_CASE("CT4F format errors are distinct") {
  Rng rng(1);
  const Tensor4 t = gaussian_tensor({1, 1, 4, 4}, Domain::image, rng);
  std::string bytes = encode_tensor(t);

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS((void)decode_tensor(bad_magic), BadMagicError);

  // header declares more payload than the file holds
  std::string truncated = bytes.substr(0, bytes.size() - 16);
  CHECK_THROWS_AS((void)decode_tensor(truncated), TruncatedFileError);

  // dims product overflowing a 64-bit count
  nlohmann::json hdr{{"dims", {1000000000, 1000000000, 1000000000, 4}},
                     {"dtype", "c128"},
                     {"domain", "image"}};
  const std::string h = hdr.dump();
  std::string overflow(bytes.begin(), bytes.begin() + 8);
  for (int i = 0; i < 4; ++i)
    overflow.push_back(static_cast<char>((h.size() >> (8 * i)) & 0xff));
  overflow += h;
  CHECK_THROWS_AS((void)decode_tensor(overflow), InvalidHeaderError);

  std::string padded = bytes + "zzz";
  CHECK_THROWS_AS((void)decode_tensor(padded), InvalidHeaderError);
}
