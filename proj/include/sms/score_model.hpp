#ifndef SMS_SCORE_MODEL_HPP
#define SMS_SCORE_MODEL_HPP

#include <map>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "sms/diffusion.hpp"
#include "sms/io.hpp"
#include "sms/random.hpp"
#include "sms/tensor.hpp"

namespace sms {

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ScoreNetConfig {
  std::int64_t n_slice = 2;
  std::int64_t n_coil = 2;
  int width = 32;
  int emb_dim = 16;   // sinusoidal embedding of t, injected per layer
  int n_hidden = 3;   // hidden 3x3 conv layers

  std::int64_t channels() const { return 2 * n_slice * n_coil; }
  bool operator==(const ScoreNetConfig&) const = default;
};

namespace detail {

inline double silu(double a) { return a / (1.0 + std::exp(-a)); }
inline double silu_grad(double a) {
  const double s = 1.0 / (1.0 + std::exp(-a));
  return s * (1.0 + a * (1.0 - s));
}

}  // namespace detail

/// Compact convolutional score network s_theta(x, t): real/imaginary
/// channels of all (slice, coil) planes, 3x3 circular convolutions, SiLU,
/// per-layer additive injection of a sinusoidal t embedding.  The final
/// layer is zero-initialized so the score is identically zero at start.
class ScoreNet {
 public:
  ScoreNet(ScoreNetConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    const std::int64_t C = cfg.channels();
    std::vector<std::int64_t> ch{C};
    for (int l = 0; l < cfg.n_hidden; ++l) ch.push_back(cfg.width);
    ch.push_back(C);
    std::int64_t off = 0;
    for (std::size_t l = 0; l + 1 < ch.size(); ++l) {
      Layer layer;
      layer.c_in = ch[l];
      layer.c_out = ch[l + 1];
      layer.w_off = off;
      off += layer.c_out * layer.c_in * 9;
      layer.b_off = off;
      off += layer.c_out;
      layer.u_off = off;
      off += layer.c_out * cfg.emb_dim;
      layers_.push_back(layer);
    }
    params_ = Eigen::VectorXd::Zero(off);
    Rng rng(mix_seed(seed, 0x5c07e));
    for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
      const Layer& la = layers_[l];
      const double std_w = std::sqrt(2.0 / static_cast<double>(la.c_in * 9));
      for (std::int64_t i = 0; i < la.c_out * la.c_in * 9; ++i)
        params_(la.w_off + i) = std_w * rng.normal();
      for (std::int64_t i = 0; i < la.c_out * cfg_.emb_dim; ++i)
        params_(la.u_off + i) = 0.01 * rng.normal();
    }
    // final layer stays all-zero
  }

  const ScoreNetConfig& config() const { return cfg_; }
  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }
  std::int64_t n_params() const { return params_.size(); }

  Eigen::VectorXd embedding(double t) const {
    Eigen::VectorXd e(cfg_.emb_dim);
    const int half = cfg_.emb_dim / 2;
    for (int k = 0; k < half; ++k) {
      const double omega = std::numbers::pi * std::pow(2.0, k);
      e(2 * k) = std::sin(omega * t);
      e(2 * k + 1) = std::cos(omega * t);
    }
    return e;
  }

  struct Cache {
    std::int64_t ny = 0, nx = 0;
    Eigen::VectorXd emb;
    std::vector<Eigen::MatrixXd> cols;  // per layer: (npix, c_in*9)
    std::vector<Eigen::MatrixXd> pre;   // per layer: (npix, c_out)
  };

  /// Forward pass on channel-matrix form (npix x c_in).
  Eigen::MatrixXd forward_mat(const Eigen::MatrixXd& in, double t,
                              std::int64_t ny, std::int64_t nx,
                              Cache* cache = nullptr) const {
    if (in.cols() != cfg_.channels() || in.rows() != ny * nx)
      throw std::invalid_argument("ScoreNet: input channel/shape mismatch");
    const Eigen::MatrixXi& nbr = neighbors(ny, nx);
    const Eigen::VectorXd emb = embedding(t);
    if (cache) {
      cache->ny = ny;
      cache->nx = nx;
      cache->emb = emb;
      cache->cols.clear();
      cache->pre.clear();
    }
    Eigen::MatrixXd h = in;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const Layer& la = layers_[l];
      Eigen::MatrixXd col = im2col(h, nbr);
      Eigen::MatrixXd pre = col * weight(la).transpose();
      pre.rowwise() += bias(la).transpose();
      pre.rowwise() += (tproj(la) * emb).transpose();
      if (cache) {
        cache->cols.push_back(std::move(col));
        cache->pre.push_back(pre);
      }
      if (l + 1 < layers_.size())
        h = pre.unaryExpr([](double a) { return detail::silu(a); });
      else
        h = std::move(pre);
    }
    if (!h.allFinite())
      throw TrainingError("ScoreNet: non-finite activation in forward pass");
    return h;
  }

  /// Backward pass: accumulates parameter gradients into grad and returns
  /// the gradient with respect to the input.
  Eigen::MatrixXd backward_mat(const Cache& cache, Eigen::MatrixXd dout,
                               Eigen::VectorXd& grad) const {
    const Eigen::MatrixXi& nbr = neighbors(cache.ny, cache.nx);
    for (std::size_t li = layers_.size(); li-- > 0;) {
      const Layer& la = layers_[li];
      Eigen::MatrixXd dpre;
      if (li + 1 < layers_.size()) {
        dpre = dout.cwiseProduct(cache.pre[li].unaryExpr(
            [](double a) { return detail::silu_grad(a); }));
      } else {
        dpre = std::move(dout);
      }
      Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                               Eigen::RowMajor>>
          dW(grad.data() + la.w_off, la.c_out, la.c_in * 9);
      dW += dpre.transpose() * cache.cols[li];
      grad.segment(la.b_off, la.c_out) += dpre.colwise().sum().transpose();
      Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                               Eigen::RowMajor>>
          dU(grad.data() + la.u_off, la.c_out, cfg_.emb_dim);
      dU += dpre.colwise().sum().transpose() * cache.emb.transpose();
      Eigen::MatrixXd dcol = dpre * weight(la);
      dout = col2im_adjoint(dcol, nbr, la.c_in);
    }
    return dout;
  }

  Tensor4 forward(const Tensor4& x, double t) const {
    if (x.dims().n_slice != cfg_.n_slice || x.dims().n_coil != cfg_.n_coil)
      throw std::invalid_argument("ScoreNet: tensor slice/coil mismatch");
    const Eigen::MatrixXd out =
        forward_mat(to_mat(x), t, x.dims().n_ky, x.dims().n_kx);
    return from_mat(out, x.dims());
  }

  /// (npix, channels) real matrix view of a complex tensor.
  Eigen::MatrixXd to_mat(const Tensor4& x) const {
    const auto& d = x.dims();
    const std::int64_t npix = d.n_ky * d.n_kx;
    Eigen::MatrixXd m(npix, cfg_.channels());
    for (std::int64_t s = 0; s < d.n_slice; ++s)
      for (std::int64_t c = 0; c < d.n_coil; ++c) {
        const std::int64_t ch = 2 * (s * d.n_coil + c);
        const cd* p = x.data() + x.offset(s, c, 0, 0);
        for (std::int64_t i = 0; i < npix; ++i) {
          m(i, ch) = p[i].real();
          m(i, ch + 1) = p[i].imag();
        }
      }
    return m;
  }

  Tensor4 from_mat(const Eigen::MatrixXd& m, const Dims4& dims) const {
    Tensor4 x(dims, Domain::image);
    const std::int64_t npix = dims.n_ky * dims.n_kx;
    for (std::int64_t s = 0; s < dims.n_slice; ++s)
      for (std::int64_t c = 0; c < dims.n_coil; ++c) {
        const std::int64_t ch = 2 * (s * dims.n_coil + c);
        cd* p = x.data() + x.offset(s, c, 0, 0);
        for (std::int64_t i = 0; i < npix; ++i)
          p[i] = cd(m(i, ch), m(i, ch + 1));
      }
    return x;
  }

 private:
  struct Layer {
    std::int64_t c_in = 0, c_out = 0;
    std::int64_t w_off = 0, b_off = 0, u_off = 0;
  };

  using ConstMat =
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                     Eigen::RowMajor>>;

  ConstMat weight(const Layer& la) const {
    return ConstMat(params_.data() + la.w_off, la.c_out, la.c_in * 9);
  }
  Eigen::VectorXd bias(const Layer& la) const {
    return params_.segment(la.b_off, la.c_out);
  }
  ConstMat tproj(const Layer& la) const {
    return ConstMat(params_.data() + la.u_off, la.c_out, cfg_.emb_dim);
  }

  /// Circular 3x3 neighborhood index table for an (ny, nx) grid.
  const Eigen::MatrixXi& neighbors(std::int64_t ny, std::int64_t nx) const {
    auto key = std::make_pair(ny, nx);
    auto it = nbr_cache_.find(key);
    if (it != nbr_cache_.end()) return it->second;
    Eigen::MatrixXi nbr(ny * nx, 9);
    for (std::int64_t y = 0; y < ny; ++y)
      for (std::int64_t x = 0; x < nx; ++x) {
        int tap = 0;
        for (std::int64_t dy = -1; dy <= 1; ++dy)
          for (std::int64_t dx = -1; dx <= 1; ++dx, ++tap) {
            const std::int64_t yy = (y + dy + ny) % ny;
            const std::int64_t xx = (x + dx + nx) % nx;
            nbr(y * nx + x, tap) = static_cast<int>(yy * nx + xx);
          }
      }
    return nbr_cache_.emplace(key, std::move(nbr)).first->second;
  }

  static Eigen::MatrixXd im2col(const Eigen::MatrixXd& in,
                                const Eigen::MatrixXi& nbr) {
    const Eigen::Index npix = in.rows();
    const Eigen::Index cin = in.cols();
    Eigen::MatrixXd col(npix, cin * 9);
    for (Eigen::Index c = 0; c < cin; ++c)
      for (int tap = 0; tap < 9; ++tap)
        for (Eigen::Index p = 0; p < npix; ++p)
          col(p, c * 9 + tap) = in(nbr(p, tap), c);
    return col;
  }

  static Eigen::MatrixXd col2im_adjoint(const Eigen::MatrixXd& dcol,
                                        const Eigen::MatrixXi& nbr,
                                        std::int64_t cin) {
    const Eigen::Index npix = dcol.rows();
    Eigen::MatrixXd din = Eigen::MatrixXd::Zero(npix, cin);
    for (Eigen::Index c = 0; c < cin; ++c)
      for (int tap = 0; tap < 9; ++tap)
        for (Eigen::Index p = 0; p < npix; ++p)
          din(nbr(p, tap), c) += dcol(p, c * 9 + tap);
    return din;
  }

  ScoreNetConfig cfg_;
  std::vector<Layer> layers_;
  Eigen::VectorXd params_;
  mutable std::map<std::pair<std::int64_t, std::int64_t>, Eigen::MatrixXi>
      nbr_cache_;
};

inline Tensor4 score_forward(const ScoreNet& net, const Tensor4& x, double t) {
  return net.forward(x, t);
}

/// Projected denoising-score-matching loss over a batch:
/// mean over samples of ||sigma(t) T(s_theta(x_t, t)) + z||^2 with
/// x_t = x0 + sigma(t) T(z).  The sigma^2 weighting of score-space error is
/// carried by the sigma inside the residual.  Returns the mean loss and, if
/// grad is non-null, the exact parameter gradient.
inline double dsm_loss(const ScoreNet& net, const std::vector<Tensor4>& batch,
                       const NoiseSchedule& sched, const CompositeH& H,
                       const ProjectionConfig& proj, Rng& rng,
                       Eigen::VectorXd* grad = nullptr) {
  if (batch.empty()) throw std::invalid_argument("dsm_loss: empty batch");
  if (grad) grad->setZero(net.n_params());
  double total = 0;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Tensor4& x0 = batch[i];
    const double t = rng.uniform(sched.eps, 1.0);
    const double sig = sched.sigma(t);
    Tensor4 z = gaussian_tensor(x0.dims(), Domain::image, rng);
    Tensor4 tz = project_T(z, H, proj);
    Tensor4 x_t = x0;
    x_t.vec() += sig * tz.vec();

    ScoreNet::Cache cache;
    const Eigen::MatrixXd s_mat = net.forward_mat(
        net.to_mat(x_t), t, x0.dims().n_ky, x0.dims().n_kx, &cache);
    const Tensor4 s = net.from_mat(s_mat, x0.dims());
    Tensor4 r = project_T(s, H, proj);
    r.vec() = sig * r.vec() + z.vec();
    const double loss_i = r.vec().squaredNorm();
    if (!std::isfinite(loss_i))
      throw TrainingError("dsm_loss: non-finite loss at sample " +
                          std::to_string(i));
    total += loss_i;

    if (grad) {
      // d loss / d s = 2 sigma T*(r); T is Hermitian.
      Tensor4 ds = project_T(r, H, proj);
      ds.vec() *= 2.0 * sig * inv_b;
      net.backward_mat(cache, net.to_mat(ds), *grad);
    }
  }
  return total * inv_b;
}

struct TrainConfig {
  int steps = 200;
  int batch = 4;
  double lr = 1e-3;
  double adam_b1 = 0.9;
  double adam_b2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;
  std::string checkpoint_base;
};

struct TrainResult {
  std::vector<double> loss_curve;
};

inline void save_scorenet(const ScoreNet& net, const std::string& base,
                          const NoiseSchedule& sched, std::uint64_t seed = 0,
                          int step = 0) {
  const auto& c = net.config();
  nlohmann::json meta{{"arch",
                       {{"n_slice", c.n_slice},
                        {"n_coil", c.n_coil},
                        {"width", c.width},
                        {"emb_dim", c.emb_dim},
                        {"n_hidden", c.n_hidden}}},
                      {"schedule",
                       {{"sigma_min", sched.sigma_min},
                        {"sigma_max", sched.sigma_max},
                        {"kappa", sched.kappa},
                        {"n_steps", sched.n_steps},
                        {"eps", sched.eps}}},
                      {"seed", seed},
                      {"step", step}};
  write_file_bytes(base + ".json", meta.dump(2) + "\n");
  Tensor4 payload({1, 1, 1, net.n_params()}, Domain::image);
  for (std::int64_t i = 0; i < net.n_params(); ++i)
    payload[i] = cd(net.params()(i), 0.0);
  write_tensor(payload, base + ".ct4f");
}

inline ScoreNet load_scorenet(const std::string& base,
                              NoiseSchedule* sched_out = nullptr) {
  const auto meta = nlohmann::json::parse(read_file_bytes(base + ".json"));
  const auto& a = meta.at("arch");
  ScoreNetConfig cfg;
  cfg.n_slice = a.at("n_slice").get<std::int64_t>();
  cfg.n_coil = a.at("n_coil").get<std::int64_t>();
  cfg.width = a.at("width").get<int>();
  cfg.emb_dim = a.at("emb_dim").get<int>();
  cfg.n_hidden = a.at("n_hidden").get<int>();
  ScoreNet net(cfg, 0);
  const Tensor4 payload = read_tensor(base + ".ct4f");
  if (payload.dims().count() != net.n_params())
    throw FormatError("score checkpoint parameter count mismatch");
  for (std::int64_t i = 0; i < net.n_params(); ++i)
    net.params()(i) = payload[i].real();
  if (sched_out) {
    const auto& s = meta.at("schedule");
    sched_out->sigma_min = s.at("sigma_min").get<double>();
    sched_out->sigma_max = s.at("sigma_max").get<double>();
    sched_out->kappa = s.at("kappa").get<double>();
    sched_out->n_steps = s.at("n_steps").get<int>();
    sched_out->eps = s.at("eps").get<double>();
  }
  return net;
}

/// Adam training loop over phantom ground truths; deterministic per seed.
inline TrainResult train(ScoreNet& net, const std::vector<Tensor4>& dataset,
                         const NoiseSchedule& sched, const CompositeH& H,
                         const ProjectionConfig& proj, const TrainConfig& cfg) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  if (cfg.steps < 1 || cfg.lr <= 0)
    throw std::invalid_argument("train: steps >= 1 and lr > 0 required");
  Rng rng(mix_seed(cfg.seed, 0x7a11));
  Eigen::VectorXd grad(net.n_params());
  Eigen::VectorXd m = Eigen::VectorXd::Zero(net.n_params());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(net.n_params());
  TrainResult result;
  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<Tensor4> batch;
    for (int b = 0; b < cfg.batch; ++b)
      batch.push_back(dataset[static_cast<std::size_t>(
          rng.index(static_cast<std::int64_t>(dataset.size())))]);
    double loss;
    try {
      loss = dsm_loss(net, batch, sched, H, proj, rng, &grad);
    } catch (const TrainingError&) {
      if (!cfg.checkpoint_base.empty())
        save_scorenet(net, cfg.checkpoint_base + ".abort", sched, cfg.seed, step);
      throw;
    }
    result.loss_curve.push_back(loss);

    m = cfg.adam_b1 * m + (1 - cfg.adam_b1) * grad;
    v = cfg.adam_b2 * v.array().matrix() +
        (1 - cfg.adam_b2) * grad.array().square().matrix();
    const double bc1 = 1 - std::pow(cfg.adam_b1, step);
    const double bc2 = 1 - std::pow(cfg.adam_b2, step);
    net.params().array() -=
        cfg.lr * (m.array() / bc1) /
        ((v.array() / bc2).sqrt() + cfg.adam_eps);

    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 &&
        !cfg.checkpoint_base.empty())
      save_scorenet(net, cfg.checkpoint_base, sched, cfg.seed, step);
  }
  return result;
}

}  // namespace sms

#endif  // SMS_SCORE_MODEL_HPP
