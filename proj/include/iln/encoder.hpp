#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "iln/errors.hpp"
#include "iln/ops.hpp"
#include "iln/optim.hpp"
#include "iln/range_core.hpp"
#include "iln/rng.hpp"

namespace iln {

struct EncoderConfig {
  std::size_t channels = 64;
  std::size_t blocks = 4;
  std::size_t kernel = 3;

  void validate() const {
    if (channels == 0 || blocks == 0) throw ConfigError("encoder channels and blocks must be at least 1");
    if (kernel % 2 == 0) throw ConfigError("encoder kernel must be odd");
  }

  /// Rows/cols of input that can influence one feature.
  [[nodiscard]] std::size_t receptive_field() const { return (kernel / 2) * 2 * (2 * blocks + 2) + 1; }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Depths scaled into (0, 1] by r_max, as a [1,1,H,W] tensor.
template <typename T>
[[nodiscard]] ad::Tensor<T> normalize(const RangeImage& img) {
  ad::Tensor<T> out({1, 1, img.rows(), img.cols()});
  const double scale = 1.0 / img.spec().r_max;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(img.depths()[i] * scale);
  return out;
}

/// Stacks equally sized images into a [B,1,H,W] tensor.
template <typename T>
[[nodiscard]] ad::Tensor<T> normalize_batch(std::span<const RangeImage* const> imgs) {
  if (imgs.empty()) throw ShapeError("empty image batch");
  const std::size_t rows = imgs[0]->rows(), cols = imgs[0]->cols(), plane = rows * cols;
  ad::Tensor<T> out({imgs.size(), 1, rows, cols});
  for (std::size_t b = 0; b < imgs.size(); ++b) {
    if (imgs[b]->rows() != rows || imgs[b]->cols() != cols) {
      throw ShapeError("image batch mixes resolutions " + imgs[0]->resolution().str() + " and " +
                       imgs[b]->resolution().str());
    }
    const double scale = 1.0 / imgs[b]->spec().r_max;
    for (std::size_t i = 0; i < plane; ++i) out[b * plane + i] = static_cast<T>(imgs[b]->depths()[i] * scale);
  }
  return out;
}

template <typename T>
[[nodiscard]] std::vector<double> denormalize(const ad::Tensor<T>& t, const SensorSpec& spec) {
  std::vector<double> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<double>(t[i]) * spec.r_max;
  return out;
}

template <typename T>
struct Conv2d {
  ad::Var<T> weight;
  ad::Var<T> bias;

  Conv2d() = default;
  Conv2d(ad::ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, std::size_t k, Rng& rng,
         double gain = 1.0) {
    const double fan_in = static_cast<double>(in * k * k);
    weight = store.add_normal(name + ".weight", {out, in, k, k}, gain * std::sqrt(2.0 / fan_in), rng);
    bias = store.add_filled(name + ".bias", {out}, T{0});
  }

  /// Width wraps around (360 degree sweep); height repeats the border rows.
  [[nodiscard]] ad::Var<T> operator()(const ad::Var<T>& x) const {
    return ad::conv2d(x, weight, bias, ad::Padding::replicate, ad::Padding::circular);
  }
};

/// Residual convolutional encoder: head conv, `blocks` x (conv-relu-conv + identity),
/// tail conv. Spatial size is preserved.
template <typename T>
class Encoder {
 public:
  Encoder(const EncoderConfig& config, ad::ParamStore<T>& store, Rng& rng) : config_(config) {
    config_.validate();
    const std::size_t c = config_.channels, k = config_.kernel;
    head_ = Conv2d<T>(store, "encoder.head", 1, c, k, rng);
    for (std::size_t b = 0; b < config_.blocks; ++b) {
      const std::string name = "encoder.block" + std::to_string(b);
      // a small second conv keeps the residual stack near identity at init
      blocks_.push_back({Conv2d<T>(store, name + ".conv1", c, c, k, rng),
                         Conv2d<T>(store, name + ".conv2", c, c, k, rng, 0.1)});
    }
    tail_ = Conv2d<T>(store, "encoder.tail", c, c, k, rng);
  }

  /// [B,1,H,W] -> [B,C,H,W]
  [[nodiscard]] ad::Var<T> operator()(const ad::Var<T>& x) const {
    if (x.shape().size() != 4 || x.shape()[1] != 1) {
      throw ShapeError("encoder input must be [B,1,H,W], got " + ad::shape_str(x.shape()));
    }
    ad::Var<T> h = head_(x);
    for (const auto& [conv1, conv2] : blocks_) h = ad::add(h, conv2(ad::relu(conv1(h))));
    return tail_(h);
  }

  [[nodiscard]] const EncoderConfig& config() const noexcept { return config_; }

 private:
  struct Block {
    Conv2d<T> conv1;
    Conv2d<T> conv2;
  };

  EncoderConfig config_;
  Conv2d<T> head_;
  std::vector<Block> blocks_;
  Conv2d<T> tail_;
};

}  // namespace iln
