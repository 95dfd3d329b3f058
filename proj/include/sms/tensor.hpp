#ifndef SMS_TENSOR_HPP
#define SMS_TENSOR_HPP

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

namespace sms {

using cd = std::complex<double>;

enum class Domain { image, kspace };
enum class Precision { c64, c128 };

struct Dims4 {
  std::int64_t n_slice = 0;
  std::int64_t n_coil = 0;
  std::int64_t n_ky = 0;
  std::int64_t n_kx = 0;

  std::int64_t count() const { return n_slice * n_coil * n_ky * n_kx; }
  bool operator==(const Dims4&) const = default;
};

/// Complex 4-axis array [slice, coil, ky, kx], row-major.  The universal
/// carrier for both image-domain and k-space data; the domain tag flips
/// only under fft2c/ifft2c.
template <typename Real>
class Tensor4T {
 public:
  using Scalar = std::complex<Real>;

  Tensor4T() = default;
  Tensor4T(Dims4 dims, Domain domain)
      : dims_(dims), domain_(domain) {
    if (dims.n_slice <= 0 || dims.n_coil <= 0 || dims.n_ky <= 0 ||
        dims.n_kx <= 0) {
      throw std::invalid_argument("Tensor4: all dims must be positive");
    }
    data_.assign(static_cast<std::size_t>(dims.count()), Scalar(0));
  }

  const Dims4& dims() const { return dims_; }
  Domain domain() const { return domain_; }
  void set_domain(Domain d) { domain_ = d; }
  Precision storage() const { return storage_; }
  void set_storage(Precision p) { storage_ = p; }

  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const Scalar& operator[](std::int64_t i) const {
    return data_[static_cast<std::size_t>(i)];
  }

  std::int64_t offset(std::int64_t s, std::int64_t c, std::int64_t y,
                      std::int64_t x) const {
    return ((s * dims_.n_coil + c) * dims_.n_ky + y) * dims_.n_kx + x;
  }

  Scalar& at(std::int64_t s, std::int64_t c, std::int64_t y, std::int64_t x) {
    return data_[static_cast<std::size_t>(offset(s, c, y, x))];
  }
  const Scalar& at(std::int64_t s, std::int64_t c, std::int64_t y,
                   std::int64_t x) const {
    return data_[static_cast<std::size_t>(offset(s, c, y, x))];
  }

  /// Mutable view of one (slice, coil) plane as an n_ky x n_kx matrix.
  auto plane(std::int64_t s, std::int64_t c) {
    return Eigen::Map<
        Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        data_.data() + offset(s, c, 0, 0), dims_.n_ky, dims_.n_kx);
  }
  auto plane(std::int64_t s, std::int64_t c) const {
    return Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic,
                                          Eigen::Dynamic, Eigen::RowMajor>>(
        data_.data() + offset(s, c, 0, 0), dims_.n_ky, dims_.n_kx);
  }

  /// Flat view over all entries.
  auto vec() {
    return Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(
        data_.data(), static_cast<Eigen::Index>(data_.size()));
  }
  auto vec() const {
    return Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(
        data_.data(), static_cast<Eigen::Index>(data_.size()));
  }

  bool operator==(const Tensor4T&) const = default;

 private:
  Dims4 dims_;
  Domain domain_ = Domain::image;
  Precision storage_ = Precision::c128;
  std::vector<Scalar> data_;
};

using Tensor4 = Tensor4T<double>;

inline void check_same_dims(const Tensor4& a, const Tensor4& b,
                            const char* what) {
  if (!(a.dims() == b.dims())) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch");
  }
}

/// <a, b> = sum conj(a_i) b_i.
inline cd inner(const Tensor4& a, const Tensor4& b) {
  check_same_dims(a, b, "inner");
  return a.vec().dot(b.vec());
}

inline double norm2(const Tensor4& a) { return a.vec().norm(); }

inline Tensor4 operator+(const Tensor4& a, const Tensor4& b) {
  check_same_dims(a, b, "operator+");
  Tensor4 r = a;
  r.vec() += b.vec();
  return r;
}

inline Tensor4 operator-(const Tensor4& a, const Tensor4& b) {
  check_same_dims(a, b, "operator-");
  Tensor4 r = a;
  r.vec() -= b.vec();
  return r;
}

inline Tensor4 operator*(cd s, const Tensor4& a) {
  Tensor4 r = a;
  r.vec() *= s;
  return r;
}

inline Tensor4 operator*(double s, const Tensor4& a) { return cd(s, 0) * a; }

namespace detail {

/// In-place 1D FFTs along rows and columns of a plane.  Unscaled forward;
/// inverse scaled by 1/N per axis (Eigen convention), so a fwd/inv pair is
/// the identity.
inline void fft2_plane(
    Eigen::Ref<Eigen::Matrix<cd, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
        m,
    bool forward) {
  Eigen::FFT<double> fft;
  const Eigen::Index ny = m.rows();
  const Eigen::Index nx = m.cols();
  Eigen::VectorXcd in(nx), out(nx);
  for (Eigen::Index y = 0; y < ny; ++y) {
    in = m.row(y).transpose();
    if (forward)
      fft.fwd(out, in);
    else
      fft.inv(out, in);
    m.row(y) = out.transpose();
  }
  in.resize(ny);
  out.resize(ny);
  for (Eigen::Index x = 0; x < nx; ++x) {
    in = m.col(x);
    if (forward)
      fft.fwd(out, in);
    else
      fft.inv(out, in);
    m.col(x) = out;
  }
}

template <typename Mat>
inline void fftshift2(Mat& m, bool inverse) {
  const Eigen::Index ny = m.rows();
  const Eigen::Index nx = m.cols();
  // fftshift rotates by floor(N/2); ifftshift by ceil(N/2).
  const Eigen::Index sy = inverse ? (ny + 1) / 2 : ny / 2;
  const Eigen::Index sx = inverse ? (nx + 1) / 2 : nx / 2;
  Mat tmp(ny, nx);
  for (Eigen::Index y = 0; y < ny; ++y)
    for (Eigen::Index x = 0; x < nx; ++x)
      tmp((y + sy) % ny, (x + sx) % nx) = m(y, x);
  m = tmp;
}

inline void fft2c_plane(
    Eigen::Ref<Eigen::Matrix<cd, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
        m,
    bool forward) {
  using Mat = Eigen::Matrix<cd, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Mat tmp = m;
  fftshift2(tmp, /*inverse=*/true);
  fft2_plane(tmp, forward);
  fftshift2(tmp, /*inverse=*/false);
  const double n = static_cast<double>(m.rows() * m.cols());
  // fwd is unscaled and inv carries 1/N, so both need the same factor to
  // become unitary.
  const double scale = forward ? 1.0 / std::sqrt(n) : std::sqrt(n);
  m = tmp * scale;
}

}  // namespace detail

/// Centered unitary 2D FFT over (ky, kx), per slice and coil.
inline Tensor4 fft2c(const Tensor4& t) {
  if (t.domain() != Domain::image)
    throw std::invalid_argument("fft2c: expects image-domain input");
  Tensor4 r = t;
  for (std::int64_t s = 0; s < t.dims().n_slice; ++s)
    for (std::int64_t c = 0; c < t.dims().n_coil; ++c)
      detail::fft2c_plane(r.plane(s, c), true);
  r.set_domain(Domain::kspace);
  return r;
}

inline Tensor4 ifft2c(const Tensor4& t) {
  if (t.domain() != Domain::kspace)
    throw std::invalid_argument("ifft2c: expects kspace-domain input");
  Tensor4 r = t;
  for (std::int64_t s = 0; s < t.dims().n_slice; ++s)
    for (std::int64_t c = 0; c < t.dims().n_coil; ++c)
      detail::fft2c_plane(r.plane(s, c), false);
  r.set_domain(Domain::image);
  return r;
}

}  // namespace sms

#endif  // SMS_TENSOR_HPP
