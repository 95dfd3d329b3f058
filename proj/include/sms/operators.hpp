#ifndef SMS_OPERATORS_HPP
#define SMS_OPERATORS_HPP

#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "sms/calibration.hpp"
#include "sms/phantom.hpp"
#include "sms/tensor.hpp"

namespace sms {

namespace detail {

/// Per-frequency coil-mixing matrices of a circular convolution kernel on
/// an (ny, nx) torus: M[f][co][ci] = sum_taps g e^{+2 pi i f . tap / N}.
/// Diagonalizes the convolution, so applications and adjoints are exact.
class Transfer {
 public:
  Transfer() = default;
  Transfer(const Kernel& k, std::int64_t ny, std::int64_t nx)
      : ny_(ny), nx_(nx), nco_(k.n_coil_out), nci_(k.n_coil_in) {
    mats_.resize(static_cast<std::size_t>(ny * nx));
    const std::int64_t hh = k.kh / 2, hw = k.kw / 2;
    for (std::int64_t fy = 0; fy < ny; ++fy) {
      for (std::int64_t fx = 0; fx < nx; ++fx) {
        Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(nco_, nci_);
        for (std::int64_t dy = -hh; dy <= hh; ++dy) {
          for (std::int64_t dx = -hw; dx <= hw; ++dx) {
            const double ph = 2 * std::numbers::pi *
                              (static_cast<double>(fy * dy) / ny +
                               static_cast<double>(fx * dx) / nx);
            const cd w = std::polar(1.0, ph);
            for (std::int64_t co = 0; co < nco_; ++co)
              for (std::int64_t ci = 0; ci < nci_; ++ci)
                m(co, ci) += k.at(co, ci, dy + hh, dx + hw) * w;
          }
        }
        mats_[static_cast<std::size_t>(fy * nx + fx)] = std::move(m);
      }
    }
  }

  std::int64_t ny() const { return ny_; }
  std::int64_t nx() const { return nx_; }
  std::int64_t n_coil_out() const { return nco_; }
  std::int64_t n_coil_in() const { return nci_; }
  const Eigen::MatrixXcd& at(std::int64_t f) const {
    return mats_[static_cast<std::size_t>(f)];
  }

  /// Convolve the coil planes of (src, src_slice) and write to
  /// (dst, dst_slice); adjoint applies the conjugate transpose mixing.
  void apply(const Tensor4& src, std::int64_t src_slice, Tensor4& dst,
             std::int64_t dst_slice, bool adjoint) const {
    const std::int64_t n_in = adjoint ? nco_ : nci_;
    const std::int64_t n_out = adjoint ? nci_ : nco_;
    if (src.dims().n_coil != n_in || dst.dims().n_coil != n_out ||
        src.dims().n_ky != ny_ || src.dims().n_kx != nx_ ||
        dst.dims().n_ky != ny_ || dst.dims().n_kx != nx_)
      throw std::invalid_argument("Transfer: kernel/coil geometry mismatch");

    using Mat = Eigen::Matrix<cd, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    std::vector<Mat> in(static_cast<std::size_t>(n_in));
    for (std::int64_t c = 0; c < n_in; ++c) {
      in[static_cast<std::size_t>(c)] = src.plane(src_slice, c);
      fft2_plane(in[static_cast<std::size_t>(c)], true);
    }
    std::vector<Mat> out(static_cast<std::size_t>(n_out), Mat(ny_, nx_));
    Eigen::VectorXcd vi(n_in), vo(n_out);
    for (std::int64_t fy = 0; fy < ny_; ++fy) {
      for (std::int64_t fx = 0; fx < nx_; ++fx) {
        for (std::int64_t c = 0; c < n_in; ++c)
          vi(c) = in[static_cast<std::size_t>(c)](fy, fx);
        const auto& m = mats_[static_cast<std::size_t>(fy * nx_ + fx)];
        if (adjoint)
          vo.noalias() = m.adjoint() * vi;
        else
          vo.noalias() = m * vi;
        for (std::int64_t c = 0; c < n_out; ++c)
          out[static_cast<std::size_t>(c)](fy, fx) = vo(c);
      }
    }
    for (std::int64_t c = 0; c < n_out; ++c) {
      fft2_plane(out[static_cast<std::size_t>(c)], false);
      dst.plane(dst_slice, c) = out[static_cast<std::size_t>(c)];
    }
  }

 private:
  std::int64_t ny_ = 0, nx_ = 0, nco_ = 0, nci_ = 0;
  std::vector<Eigen::MatrixXcd> mats_;
};

}  // namespace detail

/// The self-consistency operator H = [K_i] [I ... I] diag(G_j) with
/// CAIPIRINHA phases folded into the slice collapse.  Linear, k-space to
/// k-space on (n_slice, n_coil, ky, kx).
class CompositeH {
 public:
  CompositeH(const SpiritKernelSet& g, const SliceGrappaKernelSet& k,
             double caipi_increment, Dims4 dims)
      : dims_(dims), caipi_(caipi_increment) {
    if (static_cast<std::int64_t>(g.slices.size()) != dims.n_slice ||
        static_cast<std::int64_t>(k.slices.size()) != dims.n_slice)
      throw std::invalid_argument("CompositeH: kernel slice count mismatch");
    for (const auto& ker : g.slices) {
      if (ker.n_coil_in != dims.n_coil || ker.n_coil_out != dims.n_coil)
        throw std::invalid_argument("CompositeH: SPIRiT kernel coil mismatch");
      tg_.emplace_back(ker, dims.n_ky, dims.n_kx);
    }
    for (const auto& ker : k.slices) {
      if (ker.n_coil_in != dims.n_coil || ker.n_coil_out != dims.n_coil)
        throw std::invalid_argument("CompositeH: slice-GRAPPA kernel coil mismatch");
      tk_.emplace_back(ker, dims.n_ky, dims.n_kx);
    }
  }

  /// H with G_i = K_i = delta: H is the identity when n_slice == 1.
  static CompositeH identity(Dims4 dims) {
    SpiritKernelSet g;
    SliceGrappaKernelSet k;
    for (std::int64_t s = 0; s < dims.n_slice; ++s) {
      g.slices.push_back(Kernel::identity(dims.n_coil));
      k.slices.push_back(Kernel::identity(dims.n_coil));
    }
    return CompositeH(g, k, 0.0, dims);
  }

  const Dims4& dims() const { return dims_; }
  double caipi_increment() const { return caipi_; }

  /// Per-slice SPIRiT interpolation: slice i -> G_i (*) slice i.
  Tensor4 apply_G(const Tensor4& k, bool adjoint = false) const {
    check(k, dims_.n_slice, "apply_G");
    Tensor4 out(dims_, Domain::kspace);
    for (std::int64_t s = 0; s < dims_.n_slice; ++s)
      tg_[static_cast<std::size_t>(s)].apply(k, s, out, s, adjoint);
    return out;
  }

  /// Slice separation: collapsed (1, coil, ky, kx) -> n_slice slices.
  Tensor4 apply_K(const Tensor4& collapsed) const {
    check(collapsed, 1, "apply_K");
    Tensor4 out(dims_, Domain::kspace);
    for (std::int64_t s = 0; s < dims_.n_slice; ++s)
      tk_[static_cast<std::size_t>(s)].apply(collapsed, 0, out, s, false);
    return out;
  }

  Tensor4 adjoint_K(const Tensor4& stack) const {
    check(stack, dims_.n_slice, "adjoint_K");
    Tensor4 out({1, dims_.n_coil, dims_.n_ky, dims_.n_kx}, Domain::kspace);
    Tensor4 tmp({1, dims_.n_coil, dims_.n_ky, dims_.n_kx}, Domain::kspace);
    for (std::int64_t s = 0; s < dims_.n_slice; ++s) {
      tk_[static_cast<std::size_t>(s)].apply(stack, s, tmp, 0, true);
      out.vec() += tmp.vec();
    }
    return out;
  }

  /// Phase-weighted slice sum: c = sum_j P_j u_j.
  Tensor4 collapse(const Tensor4& stack, bool adjoint_phases = false) const {
    check(stack, dims_.n_slice, "collapse");
    Tensor4 out({1, dims_.n_coil, dims_.n_ky, dims_.n_kx}, Domain::kspace);
    for (std::int64_t s = 0; s < dims_.n_slice; ++s)
      for (std::int64_t c = 0; c < dims_.n_coil; ++c)
        for (std::int64_t y = 0; y < dims_.n_ky; ++y) {
          cd ph = caipi_phase(s, y, dims_.n_ky, caipi_);
          if (adjoint_phases) ph = std::conj(ph);
          for (std::int64_t x = 0; x < dims_.n_kx; ++x)
            out.at(0, c, y, x) += ph * stack.at(s, c, y, x);
        }
    return out;
  }

  /// Adjoint of collapse: slice j = conj(P_j) c.
  Tensor4 distribute(const Tensor4& collapsed) const {
    check(collapsed, 1, "distribute");
    Tensor4 out(dims_, Domain::kspace);
    for (std::int64_t s = 0; s < dims_.n_slice; ++s)
      for (std::int64_t c = 0; c < dims_.n_coil; ++c)
        for (std::int64_t y = 0; y < dims_.n_ky; ++y) {
          const cd ph = std::conj(caipi_phase(s, y, dims_.n_ky, caipi_));
          for (std::int64_t x = 0; x < dims_.n_kx; ++x)
            out.at(s, c, y, x) = ph * collapsed.at(0, c, y, x);
        }
    return out;
  }

  /// H k = stack_i conj(P_i) [ K_i (*) sum_j P_j (G_j (*) k_j) ].
  /// K_i separates the phase-modulated slice (a convolution cannot undo the
  /// CAIPIRINHA modulation itself), so its output is unmodulated explicitly.
  Tensor4 apply(const Tensor4& k) const {
    return caipi_modulate(apply_K(collapse(apply_G(k))), -caipi_);
  }

  Tensor4 adjoint(const Tensor4& v) const {
    return apply_G(distribute(adjoint_K(caipi_modulate(v, caipi_))),
                   /*adjoint=*/true);
  }

  /// (H - I) k.
  Tensor4 residual(const Tensor4& k) const {
    Tensor4 r = apply(k);
    r.vec() -= k.vec();
    return r;
  }

  /// (H - I)* v.
  Tensor4 adjoint_residual(const Tensor4& v) const {
    Tensor4 r = adjoint(v);
    r.vec() -= v.vec();
    return r;
  }

  /// Psi(x) = F^-1 (H - I)* (H - I) F x; image domain in and out.
  Tensor4 normal_psi(const Tensor4& x) const {
    if (x.domain() != Domain::image)
      throw std::invalid_argument("normal_psi: expects image-domain input");
    return ifft2c(adjoint_residual(residual(fft2c(x))));
  }

 private:
  void check(const Tensor4& t, std::int64_t n_slice, const char* what) const {
    if (t.domain() != Domain::kspace)
      throw std::invalid_argument(std::string(what) + ": expects kspace input");
    if (t.dims().n_slice != n_slice || t.dims().n_coil != dims_.n_coil ||
        t.dims().n_ky != dims_.n_ky || t.dims().n_kx != dims_.n_kx)
      throw std::invalid_argument(std::string(what) + ": geometry mismatch");
  }

  Dims4 dims_;
  double caipi_;
  std::vector<detail::Transfer> tg_, tk_;
};

/// D = mask o (phase-weighted slice collapse), k-space stack -> collapsed
/// measurement (1, coil, ky, kx).
inline Tensor4 apply_D(const Tensor4& k, const SamplingPlan& plan) {
  if (k.domain() != Domain::kspace)
    throw std::invalid_argument("apply_D: expects kspace input");
  const auto& d = k.dims();
  if (d.n_ky != plan.n_ky || d.n_kx != plan.n_kx)
    throw std::invalid_argument("apply_D: plan grid mismatch");
  Tensor4 y({1, d.n_coil, d.n_ky, d.n_kx}, Domain::kspace);
  for (std::int64_t c = 0; c < d.n_coil; ++c)
    for (std::int64_t m = 0; m < d.n_ky; ++m) {
      if (!plan.sampled(m)) continue;
      for (std::int64_t s = 0; s < d.n_slice; ++s) {
        const cd ph = caipi_phase(s, m, d.n_ky, plan.caipi_increment);
        for (std::int64_t x = 0; x < d.n_kx; ++x)
          y.at(0, c, m, x) += ph * k.at(s, c, m, x);
      }
    }
  return y;
}

/// D* y: mask, copy to every slice with conjugate CAIPIRINHA phases.
inline Tensor4 adjoint_D(const Tensor4& y, const SamplingPlan& plan,
                         std::int64_t n_slice) {
  if (y.domain() != Domain::kspace)
    throw std::invalid_argument("adjoint_D: expects kspace input");
  const auto& d = y.dims();
  if (d.n_slice != 1 || d.n_ky != plan.n_ky || d.n_kx != plan.n_kx)
    throw std::invalid_argument("adjoint_D: plan grid mismatch");
  Tensor4 k({n_slice, d.n_coil, d.n_ky, d.n_kx}, Domain::kspace);
  for (std::int64_t s = 0; s < n_slice; ++s)
    for (std::int64_t c = 0; c < d.n_coil; ++c)
      for (std::int64_t m = 0; m < d.n_ky; ++m) {
        if (!plan.sampled(m)) continue;
        const cd ph = std::conj(caipi_phase(s, m, d.n_ky, plan.caipi_increment));
        for (std::int64_t x = 0; x < d.n_kx; ++x)
          k.at(s, c, m, x) = ph * y.at(0, c, m, x);
      }
  return k;
}

}  // namespace sms

#endif  // SMS_OPERATORS_HPP
