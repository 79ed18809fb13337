#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "iln/encoder.hpp"
#include "iln/errors.hpp"
#include "iln/ops.hpp"
#include "iln/optim.hpp"
#include "iln/range_core.hpp"
#include "iln/rng.hpp"

/**
 * \file
 * \brief Query-answering heads on top of the encoder feature map.
 *
 * - ILN: each of the four neighbors becomes a token (feature + sinusoidal code
 *   of its offset to the query), the tokens attend to each other, a shared
 *   linear layer scores them and a softmax turns the scores into blending
 *   weights for the *measured* neighbor depths. The prediction is therefore a
 *   convex combination of the input depths.
 * - LIIF: a value MLP predicts one normalized depth per neighbor from its
 *   feature and raw offset; the values are blended with bilinear area weights.
 * - Bilinear: area weights over the neighbor depths, no parameters.
 */

namespace iln {

struct IlnConfig {
  std::size_t model_dim = 64;
  std::size_t attn_blocks = 1;
  std::size_t heads = 4;
  std::size_t mlp_hidden = 128;
  std::size_t pos_frequencies = 6;

  void validate() const {
    if (model_dim == 0 || heads == 0 || model_dim % heads != 0) {
      throw ConfigError("model_dim must be a positive multiple of heads");
    }
    if (mlp_hidden == 0) throw ConfigError("mlp_hidden must be positive");
  }

  friend bool operator==(const IlnConfig&, const IlnConfig&) = default;
};

enum class HeadKind { iln, liif };

[[nodiscard]] inline std::string to_string(HeadKind k) { return k == HeadKind::iln ? "iln" : "liif"; }

[[nodiscard]] inline HeadKind parse_head(const std::string& s) {
  if (s == "iln") return HeadKind::iln;
  if (s == "liif") return HeadKind::liif;
  throw ConfigError("unknown head '" + s + "' (expected iln or liif)");
}

struct ModelConfig {
  HeadKind head = HeadKind::iln;
  EncoderConfig encoder;
  IlnConfig iln;  ///< LIIF reuses mlp_hidden for its value MLP

  void validate() const {
    encoder.validate();
    iln.validate();
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// [sin(2^k pi dv), cos(2^k pi dv), sin(2^k pi dh), cos(2^k pi dh)] for k = 0..L-1.
[[nodiscard]] inline std::vector<double> positional_code(double dq_v, double dq_h, std::size_t frequencies) {
  std::vector<double> out;
  out.reserve(4 * frequencies);
  for (std::size_t k = 0; k < frequencies; ++k) {
    const double f = std::ldexp(std::numbers::pi, static_cast<int>(k));
    out.push_back(std::sin(f * dq_v));
    out.push_back(std::cos(f * dq_v));
    out.push_back(std::sin(f * dq_h));
    out.push_back(std::cos(f * dq_h));
  }
  return out;
}

/// Bilinear interpolation of the four neighbor depths.
[[nodiscard]] inline double bilinear_predict(const RangeImage& img, const LaserQuery& q) {
  const Neighborhood n = neighbors_of(img, q);
  const auto w = bilinear_weights(n);
  double r = 0.0;
  for (std::size_t t = 0; t < 4; ++t) r += w[t] * n[t].depth;
  return r;
}

template <typename T>
struct Linear {
  ad::Var<T> weight;  ///< [in, out]
  ad::Var<T> bias;    ///< [out]

  Linear() = default;
  Linear(ad::ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         double gain = 1.0) {
    weight = store.add_normal(name + ".weight", {in, out}, gain / std::sqrt(static_cast<double>(in)), rng);
    bias = store.add_filled(name + ".bias", {out}, T{0});
  }

  [[nodiscard]] ad::Var<T> operator()(const ad::Var<T>& x) const { return ad::add(ad::matmul(x, weight), bias); }
};

/// Pre-norm transformer block over groups of 4 neighbor tokens.
template <typename T>
class AttentionBlock {
 public:
  AttentionBlock(ad::ParamStore<T>& store, const std::string& name, const IlnConfig& config, Rng& rng)
      : dim_(config.model_dim), heads_(config.heads) {
    ln1_gain_ = store.add_filled(name + ".ln1.gain", {dim_}, T{1});
    ln1_bias_ = store.add_filled(name + ".ln1.bias", {dim_}, T{0});
    query_ = Linear<T>(store, name + ".query", dim_, dim_, rng);
    key_ = Linear<T>(store, name + ".key", dim_, dim_, rng);
    value_ = Linear<T>(store, name + ".value", dim_, dim_, rng);
    out_ = Linear<T>(store, name + ".out", dim_, dim_, rng, 0.5);
    ln2_gain_ = store.add_filled(name + ".ln2.gain", {dim_}, T{1});
    ln2_bias_ = store.add_filled(name + ".ln2.bias", {dim_}, T{0});
    fc1_ = Linear<T>(store, name + ".fc1", dim_, config.mlp_hidden, rng, std::sqrt(2.0));
    fc2_ = Linear<T>(store, name + ".fc2", config.mlp_hidden, dim_, rng, 0.5);
  }

  /// x: [4N, D] -> [4N, D]. When `attention` is given it receives the
  /// attention maps, shape [N*heads, 4, 4].
  [[nodiscard]] ad::Var<T> operator()(const ad::Var<T>& x, ad::Tensor<T>* attention = nullptr) const {
    const std::size_t tokens = x.shape()[0];
    const std::size_t groups = tokens / 4;
    const std::size_t head_dim = dim_ / heads_;
    const auto split_heads = [&](const ad::Var<T>& t) {
      return ad::reshape(ad::swap_middle(ad::reshape(t, {groups, 4, heads_, head_dim})), {groups * heads_, 4, head_dim});
    };
    const ad::Var<T> h = ad::layernorm(x, ln1_gain_, ln1_bias_);
    const ad::Var<T> q = split_heads(query_(h));
    const ad::Var<T> k = split_heads(key_(h));
    const ad::Var<T> v = split_heads(value_(h));
    const ad::Var<T> scores = ad::scale(ad::bmm(q, k, true), static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim))));
    const ad::Var<T> maps = ad::softmax(scores, 2);
    if (attention) *attention = maps.value();
    const ad::Var<T> mixed = ad::reshape(
        ad::swap_middle(ad::reshape(ad::bmm(maps, v), {groups, heads_, 4, head_dim})), {tokens, dim_});
    const ad::Var<T> y = ad::add(x, out_(mixed));
    const ad::Var<T> h2 = ad::layernorm(y, ln2_gain_, ln2_bias_);
    return ad::add(y, fc2_(ad::relu(fc1_(h2))));
  }

 private:
  std::size_t dim_;
  std::size_t heads_;
  ad::Var<T> ln1_gain_, ln1_bias_, ln2_gain_, ln2_bias_;
  Linear<T> query_, key_, value_, out_, fc1_, fc2_;
};

/// Per-query inputs gathered from the input image(s).
template <typename T>
struct PreparedQueries {
  std::size_t count = 0;
  double r_max = 80.0;              ///< of the input images; scales LIIF values to meters
  std::vector<std::size_t> pixels;  ///< 4 per query: flat b*H*W + row*W + col
  ad::Tensor<T> offsets;            ///< [4N, P] positional code (ILN) or raw offsets (LIIF)
  ad::Tensor<T> depths;             ///< [N, 4] neighbor depths, meters
  ad::Tensor<T> area;               ///< [N, 4] bilinear weights
};

/// Intermediate values exposed for inspection.
template <typename T>
struct HeadTrace {
  ad::Tensor<T> local;                   ///< z' [4N, D]
  ad::Tensor<T> attended;                ///< z* [4N, D]
  std::vector<ad::Tensor<T>> attention;  ///< per block [N*heads, 4, 4]
  ad::Tensor<T> logits;                  ///< [N, 4]
  ad::Tensor<T> weights;                 ///< [N, 4] blending weights
};

/// Encoder plus one head (ILN or LIIF); owns all parameters.
template <typename T>
class ImplicitModel {
 public:
  ImplicitModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    encoder_.emplace(config_.encoder, store_, rng);
    const std::size_t c = config_.encoder.channels;
    const IlnConfig& ic = config_.iln;
    if (config_.head == HeadKind::iln) {
      embed_ = Linear<T>(store_, "iln.embed", c + 4 * ic.pos_frequencies, ic.model_dim, rng);
      for (std::size_t d = 0; d < ic.attn_blocks; ++d) {
        blocks_.emplace_back(store_, "iln.attn" + std::to_string(d), ic, rng);
      }
      weight_head_ = Linear<T>(store_, "iln.weight", ic.model_dim, 1, rng, 0.1);
    } else {
      value1_ = Linear<T>(store_, "liif.fc1", c + 2, ic.mlp_hidden, rng, std::sqrt(2.0));
      value2_ = Linear<T>(store_, "liif.fc2", ic.mlp_hidden, ic.mlp_hidden, rng, std::sqrt(2.0));
      value3_ = Linear<T>(store_, "liif.fc3", ic.mlp_hidden, 1, rng, 0.1);
    }
  }

  // parameters are shared graph leaves; a copy would alias them
  ImplicitModel(const ImplicitModel&) = delete;
  ImplicitModel& operator=(const ImplicitModel&) = delete;
  ImplicitModel(ImplicitModel&&) noexcept = default;
  ImplicitModel& operator=(ImplicitModel&&) noexcept = default;

  [[nodiscard]] const ModelConfig& config() const noexcept { return config_; }
  [[nodiscard]] ad::ParamStore<T>& params() noexcept { return store_; }
  [[nodiscard]] const ad::ParamStore<T>& params() const noexcept { return store_; }

  /// Feature map [B,C,H,W] of equally sized images.
  [[nodiscard]] ad::Var<T> encode(std::span<const RangeImage* const> imgs) const {
    return (*encoder_)(ad::constant(normalize_batch<T>(imgs)));
  }

  [[nodiscard]] ad::Var<T> encode(const RangeImage& img) const {
    const RangeImage* one[] = {&img};
    return encode(std::span<const RangeImage* const>(one));
  }

  /// Neighbor lookup for queries; `image_of[i]` is the batch index of query i.
  [[nodiscard]] PreparedQueries<T> prepare(std::span<const RangeImage* const> imgs, std::span<const LaserQuery> queries,
                                           std::span<const std::size_t> image_of) const {
    PreparedQueries<T> p;
    p.count = queries.size();
    if (p.count == 0) throw ShapeError("no queries to prepare");
    if (queries.size() != image_of.size()) throw ShapeError("every query needs an image index");
    p.r_max = imgs[0]->spec().r_max;
    const bool iln = config_.head == HeadKind::iln;
    const std::size_t width = iln ? 4 * config_.iln.pos_frequencies : 2;
    p.pixels.reserve(4 * p.count);
    p.offsets = ad::Tensor<T>({4 * p.count, std::max<std::size_t>(width, 1)});
    p.depths = ad::Tensor<T>({p.count, 4});
    p.area = ad::Tensor<T>({p.count, 4});
    for (std::size_t i = 0; i < p.count; ++i) {
      const RangeImage& img = *imgs[image_of[i]];
      const std::size_t plane = img.rows() * img.cols();
      const Neighborhood n = neighbors_of(img, queries[i]);
      const auto area = bilinear_weights(n);
      for (std::size_t t = 0; t < 4; ++t) {
        p.pixels.push_back(image_of[i] * plane + n[t].row * img.cols() + n[t].col);
        p.depths[4 * i + t] = static_cast<T>(n[t].depth);
        p.area[4 * i + t] = static_cast<T>(area[t]);
        T* row = p.offsets.data() + (4 * i + t) * width;
        if (iln) {
          const auto code = positional_code(n[t].dq_v, n[t].dq_h, config_.iln.pos_frequencies);
          for (std::size_t j = 0; j < width; ++j) row[j] = static_cast<T>(code[j]);
        } else {
          row[0] = static_cast<T>(n[t].dq_v);
          row[1] = static_cast<T>(n[t].dq_h);
        }
      }
    }
    return p;
  }

  /// z': concatenate neighbor features with the query's positional code and project.
  [[nodiscard]] ad::Var<T> embed_local(const ad::Var<T>& features, const ad::Var<T>& code) const {
    require(HeadKind::iln);
    if (config_.iln.pos_frequencies == 0) return embed_(features);
    return embed_(ad::concat<T>({features, code}, 1));
  }

  /// z*: D attention blocks over each group of 4 tokens; identity when D = 0.
  [[nodiscard]] ad::Var<T> attend(const ad::Var<T>& local, HeadTrace<T>* trace = nullptr) const {
    require(HeadKind::iln);
    ad::Var<T> x = local;
    for (const auto& block : blocks_) {
      ad::Tensor<T> maps;
      x = block(x, trace ? &maps : nullptr);
      if (trace) trace->attention.push_back(std::move(maps));
    }
    return x;
  }

  /// Predicted depths in meters, shape [N].
  [[nodiscard]] ad::Var<T> predict(const ad::Var<T>& featmap, const PreparedQueries<T>& p,
                                   HeadTrace<T>* trace = nullptr) const {
    const ad::Var<T> z = ad::gather_pixels(featmap, p.pixels);
    const ad::Var<T> offsets = ad::constant(p.offsets);
    const std::size_t n = p.count;
    if (config_.head == HeadKind::iln) {
      const ad::Var<T> local = embed_local(z, offsets);
      const ad::Var<T> attended = attend(local, trace);
      const ad::Var<T> logits = ad::reshape(weight_head_(attended), {n, 4});
      const ad::Var<T> weights = ad::softmax(logits, 1);
      if (trace) {
        trace->local = local.value();
        trace->attended = attended.value();
        trace->logits = logits.value();
        trace->weights = weights.value();
      }
      return ad::sum_last(ad::mul(weights, ad::constant(p.depths)));
    }
    const ad::Var<T> input = ad::concat<T>({z, offsets}, 1);
    const ad::Var<T> values = ad::reshape(value3_(ad::relu(value2_(ad::relu(value1_(input))))), {n, 4});
    if (trace) trace->weights = p.area;
    return ad::scale(ad::sum_last(ad::mul(values, ad::constant(p.area))), static_cast<T>(p.r_max));
  }

  /// Depth predictions for arbitrary queries into one image, without recording gradients.
  [[nodiscard]] std::vector<double> predict(const RangeImage& img, std::span<const LaserQuery> queries,
                                            std::size_t chunk = 8192) const {
    ad::NoGradGuard no_grad;
    const RangeImage* one[] = {&img};
    const std::span<const RangeImage* const> imgs(one);
    const ad::Var<T> featmap = encode(imgs);
    std::vector<double> out;
    out.reserve(queries.size());
    for (std::size_t start = 0; start < queries.size(); start += chunk) {
      const std::size_t n = std::min(chunk, queries.size() - start);
      const std::vector<std::size_t> image_of(n, 0);
      const auto p = prepare(imgs, queries.subspan(start, n), image_of);
      const auto r = predict(featmap, p);
      for (std::size_t i = 0; i < n; ++i) out.push_back(static_cast<double>(r.value()[i]));
    }
    return out;
  }

  [[nodiscard]] Linear<T>& weight_head() {
    require(HeadKind::iln);
    return weight_head_;
  }
  [[nodiscard]] Linear<T>& value_output() {
    require(HeadKind::liif);
    return value3_;
  }

 private:
  void require(HeadKind k) const {
    if (config_.head != k) throw ContractError("operation needs a " + to_string(k) + " head");
  }

  ModelConfig config_;
  ad::ParamStore<T> store_;
  std::optional<Encoder<T>> encoder_;
  Linear<T> embed_;
  std::vector<AttentionBlock<T>> blocks_;
  Linear<T> weight_head_;
  Linear<T> value1_, value2_, value3_;
};

/// ILN depth at one query given a precomputed feature map of `img`.
template <typename T>
[[nodiscard]] double iln_predict(const ImplicitModel<T>& model, const RangeImage& img, const ad::Var<T>& featmap,
                                 const LaserQuery& q, HeadTrace<T>* trace = nullptr) {
  if (model.config().head != HeadKind::iln) throw ContractError("iln_predict needs an iln model");
  const RangeImage* one[] = {&img};
  const std::size_t image_of[] = {0};
  const LaserQuery qs[] = {q};
  ad::NoGradGuard no_grad;
  return static_cast<double>(model.predict(featmap, model.prepare(one, qs, image_of), trace).value()[0]);
}

/// LIIF depth at one query: bilinear blend of per-neighbor predicted values.
template <typename T>
[[nodiscard]] double liif_predict(const ImplicitModel<T>& model, const RangeImage& img, const ad::Var<T>& featmap,
                                  const LaserQuery& q) {
  if (model.config().head != HeadKind::liif) throw ContractError("liif_predict needs a liif model");
  const RangeImage* one[] = {&img};
  const std::size_t image_of[] = {0};
  const LaserQuery qs[] = {q};
  ad::NoGradGuard no_grad;
  return static_cast<double>(model.predict(featmap, model.prepare(one, qs, image_of)).value()[0]);
}

}  // namespace iln
