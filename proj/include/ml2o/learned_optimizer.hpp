#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include "ml2o/numeric.hpp"

namespace ml2o {

inline constexpr std::size_t kDefaultHidden = 20;
inline constexpr std::size_t kFeatureDim = 2;  // [gradient, normalized momentum]
inline constexpr double kDefaultOutputScale = 0.01;
inline constexpr double kMomentumBeta1 = 0.9;
inline constexpr double kMomentumBeta2 = 0.999;
inline constexpr double kMomentumEps = 1e-8;

/// Weights φ of the coordinate-wise recurrent update rule.
///
/// Flat layout (also the checkpoint payload order):
///   gate weights  4H x (F+H), row-major, gate blocks in order input, forget,
///                 output, candidate; columns are [features..., hidden...]
///   gate biases   4H, same gate order
///   out weights   H
///   out bias      1
/// output_scale is a fixed multiplier on the projection and is not part of φ.
class OptimizerParams {
 public:
  OptimizerParams(std::size_t hidden, std::size_t feature_dim,
                  double output_scale = kDefaultOutputScale);

  static std::size_t parameter_count(std::size_t hidden, std::size_t feature_dim);

  std::size_t hidden() const noexcept { return hidden_; }
  std::size_t feature_dim() const noexcept { return feature_dim_; }
  std::size_t input_dim() const noexcept { return feature_dim_ + hidden_; }
  double output_scale() const noexcept { return output_scale_; }
  std::size_t size() const noexcept { return values_.size(); }

  const Vector& values() const noexcept { return values_; }
  Vector& values() noexcept { return values_; }

  std::span<const double> gate_weights() const;
  std::span<double> gate_weights();
  std::span<const double> gate_bias() const;
  std::span<double> gate_bias();
  std::span<const double> out_weights() const;
  std::span<double> out_weights();
  double out_bias() const { return values_[out_bias_offset()]; }
  double& out_bias() { return values_[out_bias_offset()]; }

  std::size_t gate_bias_offset() const noexcept { return 4 * hidden_ * input_dim(); }
  std::size_t out_weights_offset() const noexcept { return gate_bias_offset() + 4 * hidden_; }
  std::size_t out_bias_offset() const noexcept { return out_weights_offset() + hidden_; }

  /// Name of the block containing flat index `i` (for diagnostics).
  std::string block_name(std::size_t i) const;

  /// Same shape and scale, different φ.
  OptimizerParams with_values(Vector values) const;
  bool same_shape(const OptimizerParams& other) const noexcept;
  bool bit_equal(const OptimizerParams& other) const noexcept;
  std::uint64_t hash() const;

 private:
  std::size_t hidden_;
  std::size_t feature_dim_;
  double output_scale_;
  Vector values_;
};

/// Gate weights ~ U(-s, s) with s = 1/sqrt(hidden + feature_dim); forget bias
/// 1, other biases 0; output projection zero.
OptimizerParams init_params(std::size_t hidden, std::size_t feature_dim, RngStream& rng,
                            double output_scale = kDefaultOutputScale);

/// Elementwise w = alpha * w1 + (1 - alpha) * w2.
OptimizerParams blend(const OptimizerParams& w1, const OptimizerParams& w2, double alpha);

/// Per-trajectory recurrent state. h, c, m̂, v̂ start at zero.
struct UnrollState {
  Vector theta;
  Matrix hidden;  // dim x H
  Matrix cell;    // dim x H
  Vector momentum;
  Vector second_moment;
  std::size_t step = 0;

  static UnrollState fresh(Vector theta0, std::size_t hidden_size);
  std::size_t dim() const noexcept { return theta.size(); }
};

/// Per-coordinate features (dim x feature_dim) plus the updated accumulators.
struct FeatureBatch {
  Matrix features;
  Vector momentum;
  Vector second_moment;
};

FeatureBatch compute_features(const Vector& grad, const UnrollState& state);

struct StepOutput {
  Vector update;
  UnrollState next;
};

/// One application of the update rule: θ_{t+1} = θ_t + update.
StepOutput step(const OptimizerParams& params, const FeatureBatch& features,
                const UnrollState& state);

/// Update for a single coordinate from a fresh recurrent state.
double fresh_state_update(const OptimizerParams& params, std::span<const double> features);

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public Error {
 public:
  enum class Kind { Io, Corrupt, Version, Inconsistent };
  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Little-endian: "ML2O", u32 version, u32 hidden, u32 feature_dim,
/// f64 output_scale, f64 x parameter_count payload, metadata bytes,
/// u32 metadata length, u64 FNV-1a checksum of everything before it.
void save_checkpoint(const OptimizerParams& params, const std::filesystem::path& path,
                     const std::string& metadata = "");
OptimizerParams load_checkpoint(const std::filesystem::path& path, std::string* metadata = nullptr);

}  // namespace ml2o
