#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "iln/autodiff.hpp"
#include "iln/errors.hpp"
#include "iln/io.hpp"
#include "iln/rng.hpp"
#include "iln/tensor.hpp"

namespace iln::ad {

/// A named trainable leaf with a stable id.
template <typename T>
struct Param {
  std::uint32_t id = 0;
  std::string name;
  Var<T> var;

  [[nodiscard]] Tensor<T>& value() { return var.mutable_value(); }
  [[nodiscard]] const Tensor<T>& value() const { return var.value(); }
  [[nodiscard]] bool has_grad() const { return !var.grad().empty(); }
  /// Gradient, or zeros when nothing has reached this parameter.
  [[nodiscard]] Tensor<T> grad() const { return has_grad() ? var.grad() : Tensor<T>(var.shape()); }
  void zero_grad() { var.node()->grad = Tensor<T>(); }
  void set_grad(Tensor<T> g) {
    if (g.shape() != var.shape()) throw ShapeError("gradient shape " + shape_str(g.shape()) + " != " + shape_str(var.shape()));
    var.node()->grad = std::move(g);
  }
};

/// Owns the parameters of a model; ids follow registration order.
template <typename T>
class ParamStore {
 public:
  Var<T> add(std::string name, Tensor<T> init) {
    Param<T> p{static_cast<std::uint32_t>(params_.size()), std::move(name), leaf(std::move(init))};
    params_.push_back(p);
    return p.var;
  }

  /// Gaussian init with the given standard deviation.
  Var<T> add_normal(std::string name, Shape shape, double stddev, Rng& rng) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<T>(stddev * rng.normal());
    return add(std::move(name), std::move(t));
  }

  Var<T> add_filled(std::string name, Shape shape, T value) { return add(std::move(name), Tensor<T>(std::move(shape), value)); }

  [[nodiscard]] std::vector<Param<T>>& params() noexcept { return params_; }
  [[nodiscard]] const std::vector<Param<T>>& params() const noexcept { return params_; }

  [[nodiscard]] Param<T>& by_name(const std::string& name) {
    for (auto& p : params_) {
      if (p.name == name) return p;
    }
    throw ContractError("no parameter named '" + name + "'");
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  [[nodiscard]] std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value().size();
    return n;
  }

 private:
  std::vector<Param<T>> params_;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments are keyed by parameter id.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// Applies one update to every parameter, then clears the gradients.
  void step(std::vector<Param<T>>& params) {
    for (const auto& p : params) {
      if (!p.has_grad()) throw ContractError("parameter '" + p.name + "' has no gradient; run backward first");
    }
    ++steps_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    for (auto& p : params) {
      auto& [m, v] = moments(p);
      auto& value = p.value();
      const auto& g = p.var.grad();
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double gi = g[i];
        const double mi = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
        const double vi = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double update = config_.lr * (mi / c1) / (std::sqrt(vi / c2) + config_.eps);
        value[i] = static_cast<T>(value[i] - update);
      }
      p.zero_grad();
    }
  }

  [[nodiscard]] std::uint64_t steps() const noexcept { return steps_; }
  void set_steps(std::uint64_t s) noexcept { steps_ = s; }
  [[nodiscard]] const AdamConfig& config() const noexcept { return config_; }

  std::pair<Tensor<T>, Tensor<T>>& moments(const Param<T>& p) {
    auto it = moments_.find(p.id);
    if (it == moments_.end()) {
      it = moments_.emplace(p.id, std::pair{Tensor<T>(p.value().shape()), Tensor<T>(p.value().shape())}).first;
    }
    return it->second;
  }

  [[nodiscard]] const std::map<std::uint32_t, std::pair<Tensor<T>, Tensor<T>>>& all_moments() const noexcept {
    return moments_;
  }

 private:
  AdamConfig config_;
  std::uint64_t steps_ = 0;
  std::map<std::uint32_t, std::pair<Tensor<T>, Tensor<T>>> moments_;
};

/// Checkpoint layout: "ILNC" | u32 version=1 | u32 count | per tensor:
/// u32 id | u32 rank | rank x u32 dims | f32 payload.
inline constexpr char kCheckpointMagic[4] = {'I', 'L', 'N', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredTensor {
  std::uint32_t id = 0;
  Shape shape;
  std::vector<float> values;
};

[[nodiscard]] inline std::vector<unsigned char> encode_checkpoint(const std::vector<StoredTensor>& tensors) {
  ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    w.u32(t.id);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (const auto d : t.shape) w.u32(static_cast<std::uint32_t>(d));
    w.bytes(t.values.data(), t.values.size() * sizeof(float));
  }
  return w.buffer();
}

[[nodiscard]] inline std::vector<StoredTensor> decode_checkpoint(std::vector<unsigned char> bytes) {
  ByteReader r(std::move(bytes));
  r.expect_magic(kCheckpointMagic);
  const std::size_t version_at = r.offset();
  if (const auto v = r.u32("version"); v != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(v), version_at);
  }
  const std::uint32_t count = r.u32("param count");
  std::vector<StoredTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    t.id = r.u32("param id");
    const std::size_t rank_at = r.offset();
    const std::uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank), rank_at);
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::size_t dim_at = r.offset();
      const std::uint32_t dim = r.u32("dimension");
      if (dim == 0) throw FormatError("zero tensor dimension", dim_at);
      t.shape.push_back(dim);
      n *= dim;
    }
    t.values.resize(n);
    r.bytes(t.values.data(), n * sizeof(float), "payload");
    out.push_back(std::move(t));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint payload", r.offset());
  return out;
}

template <typename T>
[[nodiscard]] std::vector<StoredTensor> snapshot(const std::vector<Param<T>>& params) {
  std::vector<StoredTensor> out;
  for (const auto& p : params) {
    out.push_back({p.id, p.value().shape(), std::vector<float>(p.value().values().begin(), p.value().values().end())});
  }
  return out;
}

/// Copies stored values into parameters with matching ids and shapes.
template <typename T>
void restore(std::vector<Param<T>>& params, const std::vector<StoredTensor>& stored) {
  if (stored.size() != params.size()) {
    throw FormatError("checkpoint holds " + std::to_string(stored.size()) + " tensors, model has " +
                          std::to_string(params.size()),
                      0);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const StoredTensor& s = stored[i];
    Param<T>& p = params[i];
    if (s.id != p.id || s.shape != p.value().shape()) {
      throw ShapeError("checkpoint tensor " + std::to_string(s.id) + " " + shape_str(s.shape) +
                       " does not match parameter '" + p.name + "' " + shape_str(p.value().shape()));
    }
    for (std::size_t j = 0; j < s.values.size(); ++j) p.value()[j] = static_cast<T>(s.values[j]);
  }
}

template <typename T>
void write_checkpoint(const std::filesystem::path& path, const std::vector<Param<T>>& params) {
  write_file(path, encode_checkpoint(snapshot(params)));
}

template <typename T>
void read_checkpoint(const std::filesystem::path& path, std::vector<Param<T>>& params) {
  try {
    restore(params, decode_checkpoint(read_file(path)));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

/// Adam moments in checkpoint layout: first moment of param i under id 2i,
/// second moment under id 2i+1.
template <typename T>
[[nodiscard]] std::vector<StoredTensor> snapshot_moments(Adam<T>& adam, const std::vector<Param<T>>& params) {
  std::vector<StoredTensor> out;
  for (const auto& p : params) {
    auto& [m, v] = adam.moments(p);
    out.push_back({2 * p.id, m.shape(), std::vector<float>(m.values().begin(), m.values().end())});
    out.push_back({2 * p.id + 1, v.shape(), std::vector<float>(v.values().begin(), v.values().end())});
  }
  return out;
}

template <typename T>
void restore_moments(Adam<T>& adam, const std::vector<Param<T>>& params, const std::vector<StoredTensor>& stored) {
  if (stored.size() != 2 * params.size()) throw FormatError("optimizer state does not match the model", 0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [m, v] = adam.moments(params[i]);
    for (int j = 0; j < 2; ++j) {
      const StoredTensor& s = stored[2 * i + j];
      Tensor<T>& dst = j == 0 ? m : v;
      if (s.id != 2 * params[i].id + j || s.shape != dst.shape()) {
        throw ShapeError("optimizer tensor " + std::to_string(s.id) + " does not match parameter '" + params[i].name + "'");
      }
      for (std::size_t k = 0; k < s.values.size(); ++k) dst[k] = static_cast<T>(s.values[k]);
    }
  }
}

}  // namespace iln::ad
