#pragma once

// HandFormer: EMG patch tokens -> transformer encoder -> 32 latent queries
// that cross-attend to the encoded sequence -> 20-angle pose per query.
//
// Two training stages share the encoder: masked-patch reconstruction over the
// visible tokens only, then supervised L1 regression of the full model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "alvi/autodiff.hpp"
#include "alvi/error.hpp"
#include "alvi/pose_types.hpp"
#include "alvi/tensor.hpp"

namespace alvi {

struct ModelConfig {
  int d_model = 64;
  int n_heads = 4;
  int n_encoder_layers = 4;
  int n_decoder_layers = 2;
  int ffn_multiplier = 4;
  int patch_time = 8;
  int channels = 8;
  int window_len = 256;
  int n_queries = 32;
  int out_dims = 20;
  double mask_ratio = 0.7;
  int mae_decoder_depth = 2;
  double init_std = 0.02;  // 0 selects 1/sqrt(fan_in) for weight matrices
  std::uint64_t seed = 0;

  int time_patches() const { return window_len / patch_time; }
  int token_count() const { return channels * time_patches(); }
  int head_dim() const { return d_model / n_heads; }
  int ffn_dim() const { return d_model * ffn_multiplier; }

  void validate() const {
    require(d_model > 0 && n_heads > 0 && d_model % n_heads == 0, ErrorCode::invalid_argument,
            "d_model must be a positive multiple of n_heads");
    require(patch_time > 0 && window_len % patch_time == 0, ErrorCode::invalid_argument,
            "patch_time must divide window_len");
    require(n_encoder_layers >= 1 && n_decoder_layers >= 1 && mae_decoder_depth >= 1 && ffn_multiplier >= 1,
            ErrorCode::invalid_argument, "layer counts must be positive");
    require(channels > 0 && n_queries > 0 && out_dims > 0, ErrorCode::invalid_argument, "dimensions must be positive");
    require(mask_ratio > 0.0 && mask_ratio < 1.0, ErrorCode::invalid_argument, "mask_ratio must be in (0, 1)");
    require(init_std >= 0.0, ErrorCode::invalid_argument, "init_std must be non-negative");
  }

  /// Equality of everything that determines tensor shapes.
  bool shape_compatible(const ModelConfig& o) const {
    return d_model == o.d_model && n_heads == o.n_heads && n_encoder_layers == o.n_encoder_layers &&
           n_decoder_layers == o.n_decoder_layers && ffn_multiplier == o.ffn_multiplier &&
           patch_time == o.patch_time && channels == o.channels && window_len == o.window_len &&
           n_queries == o.n_queries && out_dims == o.out_dims && mae_decoder_depth == o.mae_decoder_depth;
  }

  bool operator==(const ModelConfig&) const = default;
};

/// The smallest configuration with every mechanism present; used for gradient checks.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_encoder_layers = 1;
  c.n_decoder_layers = 1;
  c.ffn_multiplier = 2;
  c.mae_decoder_depth = 1;
  return c;
}

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, d_model, n_heads, n_encoder_layers, n_decoder_layers,
                                                ffn_multiplier, patch_time, channels, window_len, n_queries, out_dims,
                                                mask_ratio, mae_decoder_depth, init_std, seed)

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool operator==(const AdamConfig&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AdamConfig, lr, beta1, beta2, eps)

/// Named tensors in a fixed order.
template <class S>
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Mat<S>> tensors;
  std::map<std::string, std::size_t> index;

  void add(const std::string& name, Mat<S> t) {
    require(!index.count(name), ErrorCode::invalid_argument, "duplicate parameter " + name);
    index[name] = names.size();
    names.push_back(name);
    tensors.push_back(std::move(t));
  }

  std::size_t id(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) fail(ErrorCode::invalid_argument, "no parameter named " + name);
    return it->second;
  }

  Mat<S>& operator[](const std::string& name) { return tensors[id(name)]; }
  const Mat<S>& operator[](const std::string& name) const { return tensors[id(name)]; }
  std::size_t size() const { return tensors.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += static_cast<std::size_t>(t.size());
    return n;
  }

  template <class T>
  ParamSet<T> cast() const {
    ParamSet<T> out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names[i], tensors[i].template cast<T>());
    return out;
  }

  ParamSet zeros_like() const {
    ParamSet out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names[i], Mat<S>::Zero(tensors[i].rows(), tensors[i].cols()));
    return out;
  }

  bool all_finite() const {
    return std::all_of(tensors.begin(), tensors.end(), [](const Mat<S>& t) { return t.allFinite(); });
  }
};

/// Configuration, weights, optimizer moments and a published version counter.
struct ModelState {
  ModelConfig config;
  AdamConfig adam;
  ParamSet<float> params;
  ParamSet<float> adam_m;
  ParamSet<float> adam_v;
  std::uint64_t step = 0;
  std::uint64_t version = 0;
};

/// Immutable state shared between training and inference threads.
using ModelSnapshot = std::shared_ptr<const ModelState>;

/// Masked tokens are true.
struct TokenMask {
  std::vector<bool> masked;

  std::size_t masked_count() const { return static_cast<std::size_t>(std::count(masked.begin(), masked.end(), true)); }

  std::vector<Eigen::Index> visible_indices() const { return indices(false); }
  std::vector<Eigen::Index> masked_indices() const { return indices(true); }

 private:
  std::vector<Eigen::Index> indices(bool want) const {
    std::vector<Eigen::Index> out;
    for (std::size_t i = 0; i < masked.size(); ++i)
      if (masked[i] == want) out.push_back(static_cast<Eigen::Index>(i));
    return out;
  }
};

using Rng = std::mt19937_64;

inline std::size_t masked_token_count(std::size_t token_count, double ratio) {
  return static_cast<std::size_t>(std::lround(ratio * static_cast<double>(token_count)));
}

/// Uniformly random subset of exactly round(ratio * token_count) masked positions.
inline TokenMask sample_mask(std::size_t token_count, double ratio, Rng& rng) {
  require(ratio > 0.0 && ratio < 1.0, ErrorCode::invalid_argument, "mask ratio must be in (0, 1)");
  std::vector<std::size_t> order(token_count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  TokenMask m;
  m.masked.assign(token_count, false);
  const std::size_t k = masked_token_count(token_count, ratio);
  for (std::size_t i = 0; i < k; ++i) m.masked[order[i]] = true;
  return m;
}

/// [channels x window_len] -> [channels * time_patches x patch_time]; token c * P + j
/// holds channel c over samples [patch_time * j, patch_time * (j + 1)).
template <class S = float>
Mat<S> tokenize(const MatF& window, const ModelConfig& cfg = {}) {
  require(window.rows() == cfg.channels && window.cols() == cfg.window_len, ErrorCode::shape_mismatch,
          "tokenize: window must be " + std::to_string(cfg.channels) + "x" + std::to_string(cfg.window_len));
  // Row-major storage makes this a pure reinterpretation.
  Mat<S> tokens(cfg.token_count(), cfg.patch_time);
  for (Eigen::Index i = 0; i < window.size(); ++i) tokens.data()[i] = static_cast<S>(window.data()[i]);
  return tokens;
}

inline MatF detokenize(const MatF& tokens, const ModelConfig& cfg = {}) {
  require(tokens.rows() == cfg.token_count() && tokens.cols() == cfg.patch_time, ErrorCode::shape_mismatch,
          "detokenize: token matrix has wrong shape");
  MatF w(cfg.channels, cfg.window_len);
  for (Eigen::Index i = 0; i < tokens.size(); ++i) w.data()[i] = tokens.data()[i];
  return w;
}

namespace detail {

inline void add_attention_params(ParamSet<float>& p, const std::string& pre, int d) {
  for (const char* n : {"wq", "wk", "wv", "wo"}) p.add(pre + "." + n, MatF(d, d));
  for (const char* n : {"bq", "bk", "bv", "bo"}) p.add(pre + "." + n, MatF::Zero(1, d));
}

inline void add_norm(ParamSet<float>& p, const std::string& pre, int d) {
  p.add(pre + ".g", MatF::Ones(1, d));
  p.add(pre + ".b", MatF::Zero(1, d));
}

inline void add_ffn(ParamSet<float>& p, const std::string& pre, int d, int f) {
  p.add(pre + ".w1", MatF(d, f));
  p.add(pre + ".b1", MatF::Zero(1, f));
  p.add(pre + ".w2", MatF(f, d));
  p.add(pre + ".b2", MatF::Zero(1, d));
}

inline void add_block(ParamSet<float>& p, const std::string& pre, int d, int f) {
  add_norm(p, pre + ".ln1", d);
  add_attention_params(p, pre + ".attn", d);
  add_norm(p, pre + ".ln2", d);
  add_ffn(p, pre + ".ffn", d, f);
}

inline std::string leaf_name(const std::string& name) {
  const auto dot = name.rfind('.');
  return dot == std::string::npos ? name : name.substr(dot + 1);
}

inline bool is_weight_matrix(const std::string& name) { return leaf_name(name)[0] == 'w'; }

inline bool is_random_init(const std::string& name) {
  const std::string leaf = leaf_name(name);
  return leaf[0] == 'w' || leaf == "queries" || leaf == "mask_token" || leaf == "channel" || leaf == "time";
}

}  // namespace detail

/// The full parameter layout for a configuration, with shapes and initial values.
inline ParamSet<float> init_params(const ModelConfig& cfg) {
  cfg.validate();
  const int d = cfg.d_model, f = cfg.ffn_dim();
  ParamSet<float> p;
  p.add("patch.w", MatF(cfg.patch_time, d));
  p.add("patch.b", MatF::Zero(1, d));
  p.add("pos.channel", MatF(cfg.channels, d));
  p.add("pos.time", MatF(cfg.time_patches(), d));
  for (int l = 0; l < cfg.n_encoder_layers; ++l) detail::add_block(p, "enc." + std::to_string(l), d, f);
  detail::add_norm(p, "enc.ln", d);

  p.add("dec.queries", MatF(cfg.n_queries, d));
  for (int l = 0; l < cfg.n_decoder_layers; ++l) {
    const std::string pre = "dec." + std::to_string(l);
    detail::add_norm(p, pre + ".ln_cross", d);
    detail::add_attention_params(p, pre + ".cross", d);
    detail::add_norm(p, pre + ".ln_self", d);
    detail::add_attention_params(p, pre + ".self", d);
    detail::add_norm(p, pre + ".ln_ffn", d);
    detail::add_ffn(p, pre + ".ffn", d, f);
  }
  detail::add_norm(p, "dec.ln", d);
  p.add("head.w", MatF(d, cfg.out_dims));
  p.add("head.b", MatF::Zero(1, cfg.out_dims));

  p.add("mae.embed.w", MatF(d, d));
  p.add("mae.embed.b", MatF::Zero(1, d));
  p.add("mae.mask_token", MatF(1, d));
  p.add("mae.pos.channel", MatF(cfg.channels, d));
  p.add("mae.pos.time", MatF(cfg.time_patches(), d));
  for (int l = 0; l < cfg.mae_decoder_depth; ++l) detail::add_block(p, "mae." + std::to_string(l), d, f);
  detail::add_norm(p, "mae.ln", d);
  p.add("mae.head.w", MatF(d, cfg.patch_time));
  p.add("mae.head.b", MatF::Zero(1, cfg.patch_time));

  // Truncated normal cut at two sigma.
  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!detail::is_random_init(p.names[i])) continue;
    MatF& t = p.tensors[i];
    double sigma = cfg.init_std;
    if (sigma == 0.0) sigma = detail::is_weight_matrix(p.names[i]) ? 1.0 / std::sqrt(static_cast<double>(t.rows())) : 0.02;
    for (Eigen::Index k = 0; k < t.size(); ++k) {
      double z;
      do z = normal(rng);
      while (std::abs(z) > 2.0);
      t.data()[k] = static_cast<float>(sigma * z);
    }
  }
  return p;
}

inline ModelState make_model(const ModelConfig& cfg, const AdamConfig& adam = {}) {
  ModelState s;
  s.config = cfg;
  s.adam = adam;
  s.params = init_params(cfg);
  s.adam_m = s.params.zeros_like();
  s.adam_v = s.params.zeros_like();
  return s;
}

/// Graph builder for one sample: every parameter enters the tape at most once.
template <class S>
class HandFormerGraph {
 public:
  using Tape = ad::Tape<S>;
  using Var = typename Tape::Var;
  using M = Mat<S>;

  HandFormerGraph(const ModelConfig& cfg, const ParamSet<S>& params, Tape& tape)
      : cfg_(cfg), params_(params), tape_(tape), vars_(params.size()) {}

  /// Set to collect every attention probability matrix in evaluation order.
  std::vector<M>* attention_log = nullptr;

  Var param(const std::string& name) {
    const std::size_t i = params_.id(name);
    if (vars_[i].id == static_cast<std::size_t>(-1)) vars_[i] = tape_.param(params_.tensors[i]);
    return vars_[i];
  }

  /// Encoder latents for the tokens at `keep` (all tokens when empty keep list is not requested).
  Var encode(const M& tokens, const std::vector<Eigen::Index>& keep) {
    Var x = tape_.linear(tape_.gather_rows(tape_.constant(tokens), keep), param("patch.w"), param("patch.b"));
    x = tape_.add(x, positions("pos", keep));
    for (int l = 0; l < cfg_.n_encoder_layers; ++l) x = block("enc." + std::to_string(l), x);
    return norm("enc.ln", x);
  }

  Var encode(const M& tokens) { return encode(tokens, all_tokens()); }

  /// [n_queries x out_dims]. Queries never see any output, so all frames come from one pass.
  Var decode(Var memory) {
    Var q = param("dec.queries");
    for (int l = 0; l < cfg_.n_decoder_layers; ++l) {
      const std::string pre = "dec." + std::to_string(l);
      q = tape_.add(q, attention(pre + ".cross", norm(pre + ".ln_cross", q), memory));
      Var h = norm(pre + ".ln_self", q);
      q = tape_.add(q, attention(pre + ".self", h, h));
      q = tape_.add(q, ffn(pre + ".ffn", norm(pre + ".ln_ffn", q)));
    }
    return tape_.linear(norm("dec.ln", q), param("head.w"), param("head.b"));
  }

  /// Per-token patch reconstruction [token_count x patch_time] from visible latents.
  Var reconstruct(Var latents, const std::vector<Eigen::Index>& visible) {
    Var v = tape_.linear(latents, param("mae.embed.w"), param("mae.embed.b"));
    Var x = tape_.scatter_rows(v, param("mae.mask_token"), visible, cfg_.token_count());
    x = tape_.add(x, positions("mae.pos", all_tokens()));
    for (int l = 0; l < cfg_.mae_decoder_depth; ++l) x = block("mae." + std::to_string(l), x);
    return tape_.linear(norm("mae.ln", x), param("mae.head.w"), param("mae.head.b"));
  }

  /// Add each parameter's gradient, scaled, into grads.
  void collect_grads(ParamSet<S>& grads, S scale = S(1)) const {
    for (std::size_t i = 0; i < vars_.size(); ++i) {
      if (vars_[i].id == static_cast<std::size_t>(-1)) continue;
      const M& g = tape_.grad(vars_[i]);
      if (g.size() != 0) grads.tensors[i] += scale * g;
    }
  }

  std::vector<Eigen::Index> all_tokens() const {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(cfg_.token_count()));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    return idx;
  }

 private:
  Var positions(const std::string& pre, const std::vector<Eigen::Index>& tokens) {
    const Eigen::Index per_channel = cfg_.time_patches();
    std::vector<Eigen::Index> ch, tm;
    ch.reserve(tokens.size());
    tm.reserve(tokens.size());
    for (auto k : tokens) {
      ch.push_back(k / per_channel);
      tm.push_back(k % per_channel);
    }
    return tape_.add(tape_.gather_rows(param(pre + ".channel"), std::move(ch)),
                     tape_.gather_rows(param(pre + ".time"), std::move(tm)));
  }

  Var norm(const std::string& pre, Var x) { return tape_.layer_norm(x, param(pre + ".g"), param(pre + ".b")); }

  Var ffn(const std::string& pre, Var x) {
    Var h = tape_.gelu(tape_.linear(x, param(pre + ".w1"), param(pre + ".b1")));
    return tape_.linear(h, param(pre + ".w2"), param(pre + ".b2"));
  }

  Var block(const std::string& pre, Var x) {
    Var h = norm(pre + ".ln1", x);
    x = tape_.add(x, attention(pre + ".attn", h, h));
    return tape_.add(x, ffn(pre + ".ffn", norm(pre + ".ln2", x)));
  }

  Var attention(const std::string& pre, Var query_in, Var kv_in) {
    Var q = tape_.linear(query_in, param(pre + ".wq"), param(pre + ".bq"));
    Var k = tape_.linear(kv_in, param(pre + ".wk"), param(pre + ".bk"));
    Var v = tape_.linear(kv_in, param(pre + ".wv"), param(pre + ".bv"));
    const int dh = cfg_.head_dim();
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));
    std::vector<Var> heads;
    heads.reserve(static_cast<std::size_t>(cfg_.n_heads));
    for (int h = 0; h < cfg_.n_heads; ++h) {
      Var qh = tape_.col_slice(q, h * dh, dh);
      Var kh = tape_.col_slice(k, h * dh, dh);
      Var vh = tape_.col_slice(v, h * dh, dh);
      Var probs = tape_.softmax_rows(tape_.scale(tape_.matmul_nt(qh, kh), scale));
      if (attention_log) attention_log->push_back(tape_.value(probs));
      heads.push_back(tape_.matmul(probs, vh));
    }
    Var merged = cfg_.n_heads == 1 ? heads[0] : tape_.hconcat(heads);
    return tape_.linear(merged, param(pre + ".wo"), param(pre + ".bo"));
  }

  const ModelConfig& cfg_;
  const ParamSet<S>& params_;
  Tape& tape_;
  std::vector<Var> vars_;
};

inline void check_window(const MatF& w, const ModelConfig& cfg) {
  require(w.rows() == cfg.channels && w.cols() == cfg.window_len, ErrorCode::shape_mismatch, "window has wrong shape");
  require(w.allFinite(), ErrorCode::non_finite, "window contains non-finite values");
}

/// Encoder output for one window, optionally dropping masked tokens first.
template <class S>
Mat<S> encode(const ModelConfig& cfg, const ParamSet<S>& params, const MatF& window, const TokenMask* mask = nullptr) {
  check_window(window, cfg);
  ad::Tape<S> tape(false);
  HandFormerGraph<S> g(cfg, params, tape);
  auto keep = mask ? mask->visible_indices() : g.all_tokens();
  return tape.value(g.encode(tokenize<S>(window, cfg), keep));
}

template <class S>
Mat<S> decode(const ModelConfig& cfg, const ParamSet<S>& params, const Mat<S>& latents,
              std::vector<Mat<S>>* attention_log = nullptr) {
  require(latents.allFinite(), ErrorCode::non_finite, "latents contain non-finite values");
  require(latents.cols() == cfg.d_model, ErrorCode::shape_mismatch, "latents have wrong width");
  ad::Tape<S> tape(false);
  HandFormerGraph<S> g(cfg, params, tape);
  g.attention_log = attention_log;
  return tape.value(g.decode(tape.constant(latents)));
}

/// Pose track [n_queries x out_dims] for one window.
template <class S>
Mat<S> forward(const ModelConfig& cfg, const ParamSet<S>& params, const MatF& window,
               std::vector<Mat<S>>* attention_log = nullptr) {
  check_window(window, cfg);
  ad::Tape<S> tape(false);
  HandFormerGraph<S> g(cfg, params, tape);
  g.attention_log = attention_log;
  return tape.value(g.decode(g.encode(tokenize<S>(window, cfg))));
}

inline MatF forward(const ModelState& s, const MatF& window, std::vector<MatF>* attention_log = nullptr) {
  return forward<float>(s.config, s.params, window, attention_log);
}

inline std::vector<MatF> forward_batch(const ModelState& s, const std::vector<MatF>& windows) {
  std::vector<MatF> out;
  out.reserve(windows.size());
  for (const auto& w : windows) out.push_back(forward(s, w));
  return out;
}

/// One masked-reconstruction example: the input window, the reconstruction
/// target (normally the same window) and which tokens are hidden.
struct MaeExample {
  MatF input;
  MatF target;
  TokenMask mask;
};

/// Mean squared reconstruction error over masked tokens, averaged over the batch.
/// When grads is non-null the batch gradient is added into it.
template <class S>
double mae_loss(const ModelConfig& cfg, const ParamSet<S>& params, const std::vector<MaeExample>& batch,
                ParamSet<S>* grads = nullptr) {
  require(!batch.empty(), ErrorCode::invalid_argument, "empty batch");
  double total = 0.0;
  const S inv_b = S(1) / static_cast<S>(batch.size());
  for (const auto& ex : batch) {
    check_window(ex.input, cfg);
    require(ex.mask.masked.size() == static_cast<std::size_t>(cfg.token_count()), ErrorCode::shape_mismatch,
            "mask length differs from token count");
    ad::Tape<S> tape(grads != nullptr);
    HandFormerGraph<S> g(cfg, params, tape);
    const auto visible = ex.mask.visible_indices();
    auto latents = g.encode(tokenize<S>(ex.input, cfg), visible);
    auto recon = g.reconstruct(latents, visible);
    auto loss = tape.mse_rows(recon, tokenize<S>(ex.target, cfg), ex.mask.masked_indices());
    total += static_cast<double>(tape.value(loss)(0, 0));
    if (grads) {
      tape.backward(loss);
      g.collect_grads(*grads, inv_b);
    }
  }
  return total / static_cast<double>(batch.size());
}

/// Mean |prediction - target| over batch x frames x angles.
template <class S>
double finetune_loss(const ModelConfig& cfg, const ParamSet<S>& params, const std::vector<WindowPair>& batch,
                     ParamSet<S>* grads = nullptr) {
  require(!batch.empty(), ErrorCode::invalid_argument, "empty batch");
  double total = 0.0;
  const S inv_b = S(1) / static_cast<S>(batch.size());
  for (const auto& pair : batch) {
    check_window(pair.emg, cfg);
    require(pair.target.rows() == cfg.n_queries && pair.target.cols() == cfg.out_dims, ErrorCode::shape_mismatch,
            "target has wrong shape");
    ad::Tape<S> tape(grads != nullptr);
    HandFormerGraph<S> g(cfg, params, tape);
    auto pred = g.decode(g.encode(tokenize<S>(pair.emg, cfg)));
    auto loss = tape.l1_mean(pred, pair.target.template cast<S>());
    total += static_cast<double>(tape.value(loss)(0, 0));
    if (grads) {
      tape.backward(loss);
      g.collect_grads(*grads, inv_b);
    }
  }
  return total / static_cast<double>(batch.size());
}

/// One Adam update. Throws (leaving the state untouched) if any gradient is non-finite.
inline void adam_update(ModelState& s, const ParamSet<float>& grads) {
  require(grads.all_finite(), ErrorCode::non_finite, "non-finite gradient");
  const double t = static_cast<double>(s.step + 1);
  const auto& a = s.adam;
  const float b1 = static_cast<float>(a.beta1), b2 = static_cast<float>(a.beta2);
  const float c1 = static_cast<float>(1.0 - std::pow(a.beta1, t));
  const float c2 = static_cast<float>(1.0 - std::pow(a.beta2, t));
  const float lr = static_cast<float>(a.lr), eps = static_cast<float>(a.eps);
  for (std::size_t i = 0; i < s.params.size(); ++i) {
    auto g = grads.tensors[i].array();
    auto m = s.adam_m.tensors[i].array();
    auto v = s.adam_v.tensors[i].array();
    m = b1 * m + (1.0f - b1) * g;
    v = b2 * v + (1.0f - b2) * g.square();
    s.params.tensors[i].array() -= lr * (m / c1) / ((v / c2).sqrt() + eps);
  }
  s.step += 1;
}

/// Masked-reconstruction pretraining step on a batch of windows. A fresh mask
/// per window is drawn from rng. Returns the pre-update loss.
inline double mae_step(ModelState& s, const std::vector<MatF>& windows, Rng& rng) {
  require(!windows.empty(), ErrorCode::invalid_argument, "mae_step: empty batch");
  std::vector<MaeExample> batch;
  batch.reserve(windows.size());
  for (const auto& w : windows)
    batch.push_back({w, w, sample_mask(static_cast<std::size_t>(s.config.token_count()), s.config.mask_ratio, rng)});
  ParamSet<float> grads = s.params.zeros_like();
  const double loss = mae_loss<float>(s.config, s.params, batch, &grads);
  require(std::isfinite(loss), ErrorCode::non_finite, "mae_step: non-finite loss");
  adam_update(s, grads);
  return loss;
}

/// Supervised L1 step. Returns the pre-update loss.
inline double finetune_step(ModelState& s, const std::vector<WindowPair>& batch) {
  require(!batch.empty(), ErrorCode::invalid_argument, "finetune_step: empty batch");
  ParamSet<float> grads = s.params.zeros_like();
  const double loss = finetune_loss<float>(s.config, s.params, batch, &grads);
  require(std::isfinite(loss), ErrorCode::non_finite, "finetune_step: non-finite loss");
  adam_update(s, grads);
  return loss;
}

/// Fresh Adam moments and step counter, keeping parameters and version.
inline void reset_optimizer(ModelState& s) {
  s.adam_m = s.params.zeros_like();
  s.adam_v = s.params.zeros_like();
  s.step = 0;
}

/// Copy the encoder (patch projection, positions, encoder blocks) from a pretrained state.
inline void load_encoder_from(ModelState& dst, const ModelState& pretrained) {
  require(dst.config.shape_compatible(pretrained.config), ErrorCode::config_mismatch, "encoder shapes differ");
  for (std::size_t i = 0; i < dst.params.size(); ++i) {
    const auto& n = dst.params.names[i];
    if (n.rfind("patch.", 0) == 0 || n.rfind("pos.", 0) == 0 || n.rfind("enc.", 0) == 0)
      dst.params.tensors[i] = pretrained.params[n];
  }
}

}  // namespace alvi
