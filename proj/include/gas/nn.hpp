#pragma once

// Small causal transformer over interleaved per-timestep tokens, with
// hand-written reverse-mode gradients, AdamW and target-network averaging.
// Dense math is Eigen throughout; every numeric type is templated on Scalar
// so gradient checks run in double while the same code can train in float.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/random/uniform_real_distribution.hpp>

#include "gas/common.hpp"
#include "json.hpp"

namespace gas::nn {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

struct NetworkSpec {
  int n_layers = 2;
  int n_heads = 4;
  int hidden = 64;
  int context_tokens = 20;  // timesteps per sequence; tokens = timesteps * modalities
  int ffn_mult = 4;
  int max_timestep = 48;
  // Per-timestep modalities in token order, e.g. {"rtg",1},{"state",16},{"action",1}.
  std::vector<std::pair<std::string, int>> inputs;
  int output_dim = 1;
  std::string activation = "relu";
  // Restrict attention to tokens of the same timestep.
  bool history_free = false;

  void validate() const;
  int modalities() const { return static_cast<int>(inputs.size()); }
  int head_dim() const { return hidden / n_heads; }
  nlohmann::ordered_json to_json() const;
  /// `check` = false for architecture templates that carry no inputs yet.
  static NetworkSpec from_json(const nlohmann::json& j, bool check = true);
};

struct TensorInfo {
  std::string name;
  int rows = 0;
  int cols = 0;
  Eigen::Index offset = 0;
};

/// Named tensors packed in one flat vector, so optimizer and averaging
/// updates are single vector expressions.
template <typename Scalar>
class ParameterSet {
 public:
  using MapType = Eigen::Map<Matrix<Scalar>>;
  using ConstMapType = Eigen::Map<const Matrix<Scalar>>;

  int add(std::string name, int rows, int cols) {
    const Eigen::Index offset = values_.size();
    tensors_.push_back({std::move(name), rows, cols, offset});
    values_.conservativeResize(offset + static_cast<Eigen::Index>(rows) * cols);
    values_.tail(static_cast<Eigen::Index>(rows) * cols).setZero();
    return static_cast<int>(tensors_.size()) - 1;
  }

  MapType tensor(int i) {
    const auto& t = tensors_[static_cast<std::size_t>(i)];
    return MapType(values_.data() + t.offset, t.rows, t.cols);
  }
  ConstMapType tensor(int i) const {
    const auto& t = tensors_[static_cast<std::size_t>(i)];
    return ConstMapType(values_.data() + t.offset, t.rows, t.cols);
  }

  int find(const std::string& name) const {
    for (std::size_t i = 0; i < tensors_.size(); ++i)
      if (tensors_[i].name == name) return static_cast<int>(i);
    return -1;
  }

  Vector<Scalar>& values() { return values_; }
  const Vector<Scalar>& values() const { return values_; }
  const std::vector<TensorInfo>& tensors() const { return tensors_; }
  Eigen::Index size() const { return values_.size(); }

  ParameterSet zeros_like() const {
    ParameterSet out = *this;
    out.values_.setZero();
    return out;
  }

  template <typename Other>
  ParameterSet<Other> cast() const {
    ParameterSet<Other> out;
    for (const auto& t : tensors_) out.add(t.name, t.rows, t.cols);
    out.values() = values_.template cast<Other>();
    return out;
  }

  bool same_layout(const ParameterSet& other) const {
    if (tensors_.size() != other.tensors_.size()) return false;
    for (std::size_t i = 0; i < tensors_.size(); ++i)
      if (tensors_[i].name != other.tensors_[i].name || tensors_[i].rows != other.tensors_[i].rows ||
          tensors_[i].cols != other.tensors_[i].cols)
        return false;
    return true;
  }

 private:
  std::vector<TensorInfo> tensors_;
  Vector<Scalar> values_;
};

/// One sequence: per-modality feature rows (timesteps x dim), the timestep
/// index of each row and a validity mask (0 = left padding).
template <typename Scalar>
struct SequenceInput {
  std::vector<Matrix<Scalar>> modalities;
  Eigen::VectorXi timesteps;
  Eigen::VectorXd mask;

  int length() const { return static_cast<int>(timesteps.size()); }
};

namespace detail {

template <typename Scalar>
struct LayerNormCache {
  Matrix<Scalar> xhat;
  Vector<Scalar> rstd;
};

template <typename Scalar>
void layer_norm_forward(const Matrix<Scalar>& x, const Eigen::Ref<const Matrix<Scalar>>& gain,
                        const Eigen::Ref<const Matrix<Scalar>>& bias, Matrix<Scalar>& y,
                        LayerNormCache<Scalar>* cache) {
  constexpr Scalar kEps = Scalar(1e-5);
  const Vector<Scalar> mean = x.rowwise().mean();
  Matrix<Scalar> centered = x.colwise() - mean;
  const Vector<Scalar> var = centered.array().square().rowwise().mean();
  const Vector<Scalar> rstd = (var.array() + kEps).rsqrt();
  centered = centered.array().colwise() * rstd.array();
  y = (centered.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
  if (cache) {
    cache->xhat = std::move(centered);
    cache->rstd = rstd;
  }
}

/// Returns dx and accumulates dgain/dbias.
template <typename Scalar>
Matrix<Scalar> layer_norm_backward(const Matrix<Scalar>& dy, const LayerNormCache<Scalar>& cache,
                                   const Eigen::Ref<const Matrix<Scalar>>& gain,
                                   Eigen::Map<Matrix<Scalar>> dgain, Eigen::Map<Matrix<Scalar>> dbias) {
  dgain.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  const Matrix<Scalar> dxhat = dy.array().rowwise() * gain.row(0).array();
  const Vector<Scalar> mean_d = dxhat.rowwise().mean();
  const Vector<Scalar> mean_dx = (dxhat.array() * cache.xhat.array()).rowwise().mean();
  Matrix<Scalar> dx = (dxhat.colwise() - mean_d) - (cache.xhat.array().colwise() * mean_dx.array()).matrix();
  return dx.array().colwise() * cache.rstd.array();
}

}  // namespace detail

/// Decision-transformer style sequence model. Token i = timestep k * M + m
/// for modality m; each token is a linear embedding of its modality plus a
/// learned timestep embedding. Pre-LayerNorm blocks with causal multi-head
/// attention and a ReLU feed-forward, then a final LayerNorm and a linear
/// head applied to every token.
template <typename Scalar>
class SequenceModel {
 public:
  struct BlockCache {
    Matrix<Scalar> x_in;
    detail::LayerNormCache<Scalar> ln1;
    Matrix<Scalar> a_in, q, k, v;
    std::vector<Matrix<Scalar>> probs;  // per head, tokens x tokens
    Matrix<Scalar> attn;
    detail::LayerNormCache<Scalar> ln2;
    Matrix<Scalar> f_in, h_pre, h_act;
  };

  struct Cache {
    SequenceInput<Scalar> input;
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> allowed;
    detail::LayerNormCache<Scalar> ln_embed;
    std::vector<BlockCache> blocks;
    detail::LayerNormCache<Scalar> ln_final;
    Matrix<Scalar> final_hidden;
  };

  SequenceModel() = default;

  SequenceModel(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    build_layout();
    initialize(seed);
  }

  /// Wraps existing parameters (e.g. loaded from a checkpoint).
  SequenceModel(NetworkSpec spec, ParameterSet<Scalar> params) : spec_(std::move(spec)) {
    spec_.validate();
    build_layout();
    require(params.same_layout(params_), "SequenceModel: parameter layout does not match spec");
    params_ = std::move(params);
  }

  const NetworkSpec& spec() const { return spec_; }
  ParameterSet<Scalar>& params() { return params_; }
  const ParameterSet<Scalar>& params() const { return params_; }
  int output_index_head_w() const { return head_w_; }

  int token_count(int timesteps) const { return timesteps * spec_.modalities(); }

  /// Outputs for every token: (timesteps * modalities) x output_dim.
  Matrix<Scalar> forward(const SequenceInput<Scalar>& in, Cache* cache = nullptr) const {
    validate_input(in);
    const int L = in.length();
    const int M = spec_.modalities();
    const int T = L * M;
    const int H = spec_.hidden;

    Matrix<Scalar> x(T, H);
    for (int m = 0; m < M; ++m) {
      const Matrix<Scalar> e = (in.modalities[static_cast<std::size_t>(m)] * params_.tensor(embed_w_[m]))
                                   .rowwise() +
                               params_.tensor(embed_b_[m]).row(0);
      for (int k = 0; k < L; ++k) x.row(k * M + m) = e.row(k);
    }
    const auto time_emb = params_.tensor(time_emb_);
    for (int k = 0; k < L; ++k)
      for (int m = 0; m < M; ++m) x.row(k * M + m) += time_emb.row(in.timesteps[k]);

    Cache local;
    Cache& c = cache ? *cache : local;
    c.input = in;
    build_mask(in, c.allowed);
    Matrix<Scalar> h;
    detail::layer_norm_forward<Scalar>(x, params_.tensor(ln_e_g_), params_.tensor(ln_e_b_), h,
                                       &c.ln_embed);
    c.blocks.resize(static_cast<std::size_t>(spec_.n_layers));
    for (int l = 0; l < spec_.n_layers; ++l) block_forward(l, h, c.allowed, c.blocks[static_cast<std::size_t>(l)]);

    Matrix<Scalar> y;
    detail::layer_norm_forward<Scalar>(h, params_.tensor(ln_f_g_), params_.tensor(ln_f_b_), y,
                                       &c.ln_final);
    Matrix<Scalar> out = (y * params_.tensor(head_w_)).rowwise() + params_.tensor(head_b_).row(0);
    if (cache) c.final_hidden = std::move(y);
    return out;
  }

  /// Accumulates dLoss/dparams into `grads` given dLoss/doutput.
  void backward(const Cache& c, const Matrix<Scalar>& d_out, ParameterSet<Scalar>& grads) const {
    require(grads.same_layout(params_), "backward: gradient layout mismatch");
    const int T = static_cast<int>(c.final_hidden.rows());
    require(d_out.rows() == T && d_out.cols() == spec_.output_dim, "backward: d_out shape mismatch");
    const int M = spec_.modalities();
    const int L = c.input.length();

    grads.tensor(head_w_) += c.final_hidden.transpose() * d_out;
    grads.tensor(head_b_).row(0) += d_out.colwise().sum();
    Matrix<Scalar> dy = d_out * params_.tensor(head_w_).transpose();
    Matrix<Scalar> dh = detail::layer_norm_backward<Scalar>(dy, c.ln_final, params_.tensor(ln_f_g_),
                                                            grads.tensor(ln_f_g_), grads.tensor(ln_f_b_));
    for (int l = spec_.n_layers - 1; l >= 0; --l)
      dh = block_backward(l, c.blocks[static_cast<std::size_t>(l)], c.allowed, dh, grads);

    const Matrix<Scalar> dx = detail::layer_norm_backward<Scalar>(
        dh, c.ln_embed, params_.tensor(ln_e_g_), grads.tensor(ln_e_g_), grads.tensor(ln_e_b_));
    auto d_time = grads.tensor(time_emb_);
    for (int m = 0; m < M; ++m) {
      Matrix<Scalar> dxm(L, spec_.hidden);
      for (int k = 0; k < L; ++k) dxm.row(k) = dx.row(k * M + m);
      grads.tensor(embed_w_[m]) += c.input.modalities[static_cast<std::size_t>(m)].transpose() * dxm;
      grads.tensor(embed_b_[m]).row(0) += dxm.colwise().sum();
      for (int k = 0; k < L; ++k) d_time.row(c.input.timesteps[k]) += dxm.row(k);
    }
  }

  /// ReLU on/off pattern of the last forward; used to skip kinks in
  /// finite-difference checks.
  static std::vector<bool> activation_pattern(const Cache& c) {
    std::vector<bool> pattern;
    for (const auto& b : c.blocks)
      for (Eigen::Index i = 0; i < b.h_pre.size(); ++i) pattern.push_back(b.h_pre.data()[i] > Scalar(0));
    return pattern;
  }

 private:
  void build_layout() {
    const int H = spec_.hidden;
    params_ = ParameterSet<Scalar>();
    embed_w_.clear();
    embed_b_.clear();
    for (const auto& [name, dim] : spec_.inputs) {
      embed_w_.push_back(params_.add("embed." + name + ".w", dim, H));
      embed_b_.push_back(params_.add("embed." + name + ".b", 1, H));
    }
    time_emb_ = params_.add("embed.timestep", spec_.max_timestep, H);
    ln_e_g_ = params_.add("embed_ln.g", 1, H);
    ln_e_b_ = params_.add("embed_ln.b", 1, H);
    blocks_.clear();
    const int F = H * spec_.ffn_mult;
    for (int l = 0; l < spec_.n_layers; ++l) {
      const std::string p = "block" + std::to_string(l) + ".";
      BlockLayout b;
      b.ln1_g = params_.add(p + "ln1.g", 1, H);
      b.ln1_b = params_.add(p + "ln1.b", 1, H);
      b.wq = params_.add(p + "attn.wq", H, H);
      b.bq = params_.add(p + "attn.bq", 1, H);
      b.wk = params_.add(p + "attn.wk", H, H);
      b.bk = params_.add(p + "attn.bk", 1, H);
      b.wv = params_.add(p + "attn.wv", H, H);
      b.bv = params_.add(p + "attn.bv", 1, H);
      b.wo = params_.add(p + "attn.wo", H, H);
      b.bo = params_.add(p + "attn.bo", 1, H);
      b.ln2_g = params_.add(p + "ln2.g", 1, H);
      b.ln2_b = params_.add(p + "ln2.b", 1, H);
      b.w1 = params_.add(p + "ffn.w1", H, F);
      b.b1 = params_.add(p + "ffn.b1", 1, F);
      b.w2 = params_.add(p + "ffn.w2", F, H);
      b.b2 = params_.add(p + "ffn.b2", 1, H);
      blocks_.push_back(b);
    }
    ln_f_g_ = params_.add("final_ln.g", 1, H);
    ln_f_b_ = params_.add("final_ln.b", 1, H);
    head_w_ = params_.add("head.w", H, spec_.output_dim);
    head_b_ = params_.add("head.b", 1, spec_.output_dim);
  }

  void initialize(std::uint64_t seed) {
    Rng rng(seed);
    const auto fill_uniform = [&](int idx, double bound) {
      boost::random::uniform_real_distribution<double> dist(-bound, bound);
      auto t = params_.tensor(idx);
      for (Eigen::Index j = 0; j < t.cols(); ++j)
        for (Eigen::Index i = 0; i < t.rows(); ++i) t(i, j) = static_cast<Scalar>(dist(rng));
    };
    const auto linear = [&](int idx) { fill_uniform(idx, 1.0 / std::sqrt(double(params_.tensor(idx).rows()))); };
    const auto ones = [&](int idx) { params_.tensor(idx).setOnes(); };
    for (std::size_t m = 0; m < embed_w_.size(); ++m) linear(embed_w_[m]);
    linear(time_emb_);
    ones(ln_e_g_);
    for (const auto& b : blocks_) {
      ones(b.ln1_g);
      ones(b.ln2_g);
      for (int w : {b.wq, b.wk, b.wv, b.wo, b.w1, b.w2}) linear(w);
    }
    ones(ln_f_g_);
    fill_uniform(head_w_, 0.01 / std::sqrt(double(spec_.hidden)));
  }

  void validate_input(const SequenceInput<Scalar>& in) const {
    const int L = in.length();
    require(L >= 1, "forward: empty sequence");
    require(L <= spec_.context_tokens, "forward: sequence of " + std::to_string(L) +
                                           " timesteps exceeds context " +
                                           std::to_string(spec_.context_tokens));
    require(static_cast<int>(in.modalities.size()) == spec_.modalities(), "forward: modality count mismatch");
    require(in.mask.size() == L, "forward: mask length mismatch");
    for (int m = 0; m < spec_.modalities(); ++m) {
      const auto& x = in.modalities[static_cast<std::size_t>(m)];
      require(x.rows() == L && x.cols() == spec_.inputs[static_cast<std::size_t>(m)].second,
              "forward: modality '" + spec_.inputs[static_cast<std::size_t>(m)].first + "' has shape " +
                  std::to_string(x.rows()) + "x" + std::to_string(x.cols()));
    }
    for (int k = 0; k < L; ++k)
      require(in.timesteps[k] >= 0 && in.timesteps[k] < spec_.max_timestep, "forward: timestep out of range");
  }

  void build_mask(const SequenceInput<Scalar>& in, Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>& allowed) const {
    const int M = spec_.modalities();
    const int T = in.length() * M;
    allowed.setConstant(T, T, false);
    for (int i = 0; i < T; ++i) {
      const int ki = i / M;
      if (in.mask[ki] == 0.0) {
        allowed(i, i) = true;
        continue;
      }
      for (int j = 0; j <= i; ++j) {
        const int kj = j / M;
        if (in.mask[kj] == 0.0) continue;
        if (spec_.history_free && kj != ki) continue;
        allowed(i, j) = true;
      }
    }
  }

  void block_forward(int l, Matrix<Scalar>& h, const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>& allowed,
                     BlockCache& c) const {
    const auto& b = blocks_[static_cast<std::size_t>(l)];
    const int T = static_cast<int>(h.rows());
    const int dh = spec_.head_dim();
    const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));
    c.x_in = h;
    detail::layer_norm_forward<Scalar>(h, params_.tensor(b.ln1_g), params_.tensor(b.ln1_b), c.a_in, &c.ln1);
    c.q = (c.a_in * params_.tensor(b.wq)).rowwise() + params_.tensor(b.bq).row(0);
    c.k = (c.a_in * params_.tensor(b.wk)).rowwise() + params_.tensor(b.bk).row(0);
    c.v = (c.a_in * params_.tensor(b.wv)).rowwise() + params_.tensor(b.bv).row(0);
    c.attn.resize(T, spec_.hidden);
    c.probs.resize(static_cast<std::size_t>(spec_.n_heads));
    for (int hd = 0; hd < spec_.n_heads; ++hd) {
      Matrix<Scalar> s = (c.q.middleCols(hd * dh, dh) * c.k.middleCols(hd * dh, dh).transpose()) * scale;
      for (int i = 0; i < T; ++i) {
        Scalar mx = -std::numeric_limits<Scalar>::infinity();
        for (int j = 0; j < T; ++j)
          if (allowed(i, j)) mx = std::max(mx, s(i, j));
        Scalar sum = 0;
        for (int j = 0; j < T; ++j) {
          const Scalar e = allowed(i, j) ? std::exp(s(i, j) - mx) : Scalar(0);
          s(i, j) = e;
          sum += e;
        }
        s.row(i) /= sum;
      }
      c.attn.middleCols(hd * dh, dh) = s * c.v.middleCols(hd * dh, dh);
      c.probs[static_cast<std::size_t>(hd)] = std::move(s);
    }
    h += (c.attn * params_.tensor(b.wo)).rowwise() + params_.tensor(b.bo).row(0);
    detail::layer_norm_forward<Scalar>(h, params_.tensor(b.ln2_g), params_.tensor(b.ln2_b), c.f_in, &c.ln2);
    c.h_pre = (c.f_in * params_.tensor(b.w1)).rowwise() + params_.tensor(b.b1).row(0);
    c.h_act = c.h_pre.cwiseMax(Scalar(0));
    h += (c.h_act * params_.tensor(b.w2)).rowwise() + params_.tensor(b.b2).row(0);
  }

  Matrix<Scalar> block_backward(int l, const BlockCache& c,
                                const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>& allowed,
                                const Matrix<Scalar>& dh_out, ParameterSet<Scalar>& g) const {
    (void)allowed;
    const auto& b = blocks_[static_cast<std::size_t>(l)];
    const int dh = spec_.head_dim();
    const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));

    // Feed-forward residual branch.
    g.tensor(b.w2) += c.h_act.transpose() * dh_out;
    g.tensor(b.b2).row(0) += dh_out.colwise().sum();
    Matrix<Scalar> d_hidden = dh_out * params_.tensor(b.w2).transpose();
    d_hidden = (c.h_pre.array() > Scalar(0)).select(d_hidden, Scalar(0));
    g.tensor(b.w1) += c.f_in.transpose() * d_hidden;
    g.tensor(b.b1).row(0) += d_hidden.colwise().sum();
    const Matrix<Scalar> d_fin = d_hidden * params_.tensor(b.w1).transpose();
    Matrix<Scalar> dx = dh_out + detail::layer_norm_backward<Scalar>(d_fin, c.ln2, params_.tensor(b.ln2_g),
                                                                    g.tensor(b.ln2_g), g.tensor(b.ln2_b));

    // Attention residual branch.
    g.tensor(b.wo) += c.attn.transpose() * dx;
    g.tensor(b.bo).row(0) += dx.colwise().sum();
    const Matrix<Scalar> d_attn = dx * params_.tensor(b.wo).transpose();
    Matrix<Scalar> dq(c.q.rows(), c.q.cols()), dk(c.k.rows(), c.k.cols()), dv(c.v.rows(), c.v.cols());
    for (int hd = 0; hd < spec_.n_heads; ++hd) {
      const auto& p = c.probs[static_cast<std::size_t>(hd)];
      const auto d_o = d_attn.middleCols(hd * dh, dh);
      const Matrix<Scalar> dp = d_o * c.v.middleCols(hd * dh, dh).transpose();
      dv.middleCols(hd * dh, dh) = p.transpose() * d_o;
      const Vector<Scalar> row_dot = (dp.array() * p.array()).rowwise().sum();
      const Matrix<Scalar> ds = (p.array() * (dp.colwise() - row_dot).array()).matrix() * scale;
      dq.middleCols(hd * dh, dh) = ds * c.k.middleCols(hd * dh, dh);
      dk.middleCols(hd * dh, dh) = ds.transpose() * c.q.middleCols(hd * dh, dh);
    }
    g.tensor(b.wq) += c.a_in.transpose() * dq;
    g.tensor(b.bq).row(0) += dq.colwise().sum();
    g.tensor(b.wk) += c.a_in.transpose() * dk;
    g.tensor(b.bk).row(0) += dk.colwise().sum();
    g.tensor(b.wv) += c.a_in.transpose() * dv;
    g.tensor(b.bv).row(0) += dv.colwise().sum();
    const Matrix<Scalar> d_ain = dq * params_.tensor(b.wq).transpose() + dk * params_.tensor(b.wk).transpose() +
                                 dv * params_.tensor(b.wv).transpose();
    dx += detail::layer_norm_backward<Scalar>(d_ain, c.ln1, params_.tensor(b.ln1_g), g.tensor(b.ln1_g),
                                              g.tensor(b.ln1_b));
    return dx;
  }

  struct BlockLayout {
    int ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };

  NetworkSpec spec_;
  ParameterSet<Scalar> params_;
  std::vector<int> embed_w_, embed_b_;
  int time_emb_ = 0, ln_e_g_ = 0, ln_e_b_ = 0;
  std::vector<BlockLayout> blocks_;
  int ln_f_g_ = 0, ln_f_b_ = 0, head_w_ = 0, head_b_ = 0;
};

struct AdamWConfig {
  double lr = 1e-4;
  double weight_decay = 1e-2;
  double eps = 1e-8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double clip_norm = 1.0;  // global gradient norm; <= 0 disables
};

template <typename Scalar>
struct OptimizerState {
  Vector<Scalar> first_moment;
  Vector<Scalar> second_moment;
  long long step = 0;
  AdamWConfig config;

  static OptimizerState for_params(const ParameterSet<Scalar>& params, AdamWConfig config) {
    OptimizerState s;
    s.first_moment = Vector<Scalar>::Zero(params.size());
    s.second_moment = Vector<Scalar>::Zero(params.size());
    s.config = config;
    return s;
  }
};

/// Decoupled weight decay followed by a bias-corrected Adam step.
template <typename Scalar>
void optimizer_step(ParameterSet<Scalar>& params, const ParameterSet<Scalar>& grads, OptimizerState<Scalar>& opt) {
  require(params.size() == grads.size() && opt.first_moment.size() == params.size(),
          "optimizer_step: shape mismatch");
  const auto& cfg = opt.config;
  require(cfg.lr > 0.0, "optimizer_step: lr must be positive");
  if (!grads.values().allFinite()) {
    for (const auto& t : grads.tensors()) {
      const auto seg = grads.values().segment(t.offset, static_cast<Eigen::Index>(t.rows) * t.cols);
      if (!seg.allFinite())
        throw TrainingError("non-finite gradient in tensor '" + t.name + "' at optimizer step " +
                            std::to_string(opt.step));
    }
  }
  Scalar clip = Scalar(1);
  if (cfg.clip_norm > 0.0) {
    const Scalar norm = grads.values().norm();
    if (norm > Scalar(cfg.clip_norm)) clip = Scalar(cfg.clip_norm) / norm;
  }
  ++opt.step;
  const auto g = grads.values().array() * clip;
  const Scalar b1 = Scalar(cfg.beta1), b2 = Scalar(cfg.beta2);
  opt.first_moment = (b1 * opt.first_moment.array() + (Scalar(1) - b1) * g).matrix();
  opt.second_moment = (b2 * opt.second_moment.array() + (Scalar(1) - b2) * g.square()).matrix();
  const Scalar bc1 = Scalar(1) - std::pow(b1, Scalar(opt.step));
  const Scalar bc2 = Scalar(1) - std::pow(b2, Scalar(opt.step));
  const Scalar lr = Scalar(cfg.lr);
  auto& p = params.values();
  p *= Scalar(1) - lr * Scalar(cfg.weight_decay);
  p.array() -= lr * (opt.first_moment.array() / bc1) /
               ((opt.second_moment.array() / bc2).sqrt() + Scalar(cfg.eps));
}

/// target <- (1 - tau) * target + tau * online.
template <typename Scalar>
void soft_update(ParameterSet<Scalar>& target, const ParameterSet<Scalar>& online, double tau) {
  require(tau > 0.0 && tau <= 1.0, "soft_update: tau must be in (0, 1]");
  require(target.same_layout(online), "soft_update: shape mismatch");
  if (tau == 1.0) {
    target.values() = online.values();
    return;
  }
  target.values() = (Scalar(1) - Scalar(tau)) * target.values() + Scalar(tau) * online.values();
}

/// sum(params^2); adds 2 * params to `grads`.
template <typename Scalar>
Scalar l2_penalty(const ParameterSet<Scalar>& params, ParameterSet<Scalar>& grads) {
  grads.values() += Scalar(2) * params.values();
  return params.values().squaredNorm();
}

/// Named-tensor container: a JSON header plus groups of parameter sets.
struct Checkpoint {
  nlohmann::ordered_json header;
  std::vector<std::pair<std::string, ParameterSet<double>>> groups;

  const ParameterSet<double>& group(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// FNV-1a over the raw parameter bytes.
std::uint64_t parameter_hash(const ParameterSet<double>& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct GradCheckResult {
  double max_rel_error = 0.0;
  int checked = 0;
  int skipped_kinks = 0;
};

/// Central-difference check of `model.backward` for the scalar loss
/// sum(weights .* output). Samples up to `per_tensor` coordinates of each
/// tensor; coordinates whose perturbation flips a ReLU are skipped.
/// Relative error is |a - n| / max(|a| + |n|, 1e-6); the floor keeps
/// structurally zero gradients (attention key bias) from scoring roundoff.
GradCheckResult check_gradients(SequenceModel<double>& model, const SequenceInput<double>& input,
                                const Matrix<double>& weights, double eps, int per_tensor, std::uint64_t seed);

}  // namespace gas::nn
