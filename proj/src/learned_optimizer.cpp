#include "ml2o/learned_optimizer.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "cell_kernel.hpp"

namespace ml2o {

OptimizerParams::OptimizerParams(std::size_t hidden, std::size_t feature_dim, double output_scale)
    : hidden_(hidden),
      feature_dim_(feature_dim),
      output_scale_(output_scale),
      values_(parameter_count(hidden, feature_dim)) {
  if (hidden == 0 || feature_dim == 0) {
    throw Error("optimizer params: hidden and feature_dim must be positive");
  }
  if (!std::isfinite(output_scale)) throw Error("optimizer params: output_scale must be finite");
}

std::size_t OptimizerParams::parameter_count(std::size_t hidden, std::size_t feature_dim) {
  return 4 * hidden * (feature_dim + hidden) + 4 * hidden + hidden + 1;
}

std::span<const double> OptimizerParams::gate_weights() const {
  return values_.span().subspan(0, gate_bias_offset());
}
std::span<double> OptimizerParams::gate_weights() {
  return values_.span().subspan(0, gate_bias_offset());
}
std::span<const double> OptimizerParams::gate_bias() const {
  return values_.span().subspan(gate_bias_offset(), 4 * hidden_);
}
std::span<double> OptimizerParams::gate_bias() {
  return values_.span().subspan(gate_bias_offset(), 4 * hidden_);
}
std::span<const double> OptimizerParams::out_weights() const {
  return values_.span().subspan(out_weights_offset(), hidden_);
}
std::span<double> OptimizerParams::out_weights() {
  return values_.span().subspan(out_weights_offset(), hidden_);
}

std::string OptimizerParams::block_name(std::size_t i) const {
  if (i < gate_bias_offset()) return "gate_weights";
  if (i < out_weights_offset()) return "gate_bias";
  if (i < out_bias_offset()) return "out_weights";
  if (i == out_bias_offset()) return "out_bias";
  return "out_of_range";
}

OptimizerParams OptimizerParams::with_values(Vector values) const {
  if (values.size() != values_.size()) {
    throw DimensionError("optimizer params: value count does not match shape");
  }
  OptimizerParams out = *this;
  out.values_ = std::move(values);
  return out;
}

bool OptimizerParams::same_shape(const OptimizerParams& other) const noexcept {
  return hidden_ == other.hidden_ && feature_dim_ == other.feature_dim_;
}

bool OptimizerParams::bit_equal(const OptimizerParams& other) const noexcept {
  return same_shape(other) &&
         std::bit_cast<std::uint64_t>(output_scale_) ==
             std::bit_cast<std::uint64_t>(other.output_scale_) &&
         values_.bit_equal(other.values_);
}

std::uint64_t OptimizerParams::hash() const {
  const double header[] = {static_cast<double>(hidden_), static_cast<double>(feature_dim_),
                           output_scale_};
  return fnv1a(std::as_bytes(values_.span()), hash_values(header));
}

OptimizerParams init_params(std::size_t hidden, std::size_t feature_dim, RngStream& rng,
                            double output_scale) {
  OptimizerParams p(hidden, feature_dim, output_scale);
  const double s = 1.0 / std::sqrt(static_cast<double>(hidden + feature_dim));
  for (double& w : p.gate_weights()) w = -s + 2.0 * s * rng.next_uniform();
  auto bias = p.gate_bias();
  for (std::size_t k = hidden; k < 2 * hidden; ++k) bias[k] = 1.0;
  return p;
}

OptimizerParams blend(const OptimizerParams& w1, const OptimizerParams& w2, double alpha) {
  if (!w1.same_shape(w2) || w1.output_scale() != w2.output_scale()) {
    throw DimensionError("blend: optimizer shapes differ (hidden " + std::to_string(w1.hidden()) +
                         "/" + std::to_string(w2.hidden()) + ", feature_dim " +
                         std::to_string(w1.feature_dim()) + "/" +
                         std::to_string(w2.feature_dim()) + ")");
  }
  // endpoints are returned as exact copies (the arithmetic would flip signed zeros)
  if (alpha == 1.0) return w1;
  if (alpha == 0.0) return w2;
  Vector out(w1.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = alpha * w1.values()[i] + (1.0 - alpha) * w2.values()[i];
  }
  return w1.with_values(std::move(out));
}

UnrollState UnrollState::fresh(Vector theta0, std::size_t hidden_size) {
  const std::size_t d = theta0.size();
  return UnrollState{std::move(theta0), Matrix(d, hidden_size), Matrix(d, hidden_size),
                     Vector(d), Vector(d), 0};
}

FeatureBatch compute_features(const Vector& grad, const UnrollState& state) {
  const std::size_t d = state.dim();
  if (grad.size() != d || state.momentum.size() != d || state.second_moment.size() != d) {
    throw DimensionError("compute_features: gradient and state dimensions differ");
  }
  FeatureBatch out{Matrix(d, kFeatureDim), Vector(d), Vector(d)};
  for (std::size_t i = 0; i < d; ++i) {
    const double g = grad[i];
    const double m = kMomentumBeta1 * state.momentum[i] + (1.0 - kMomentumBeta1) * g;
    const double v = kMomentumBeta2 * state.second_moment[i] + (1.0 - kMomentumBeta2) * g * g;
    out.momentum[i] = m;
    out.second_moment[i] = v;
    out.features(i, 0) = g;
    out.features(i, 1) = detail::normalized_momentum(m, v);
  }
  return out;
}

StepOutput step(const OptimizerParams& params, const FeatureBatch& features,
                const UnrollState& state) {
  const std::size_t d = state.dim();
  const std::size_t hidden = params.hidden();
  const std::size_t fdim = params.feature_dim();
  if (features.features.rows() != d || features.features.cols() != fdim ||
      state.hidden.rows() != d || state.hidden.cols() != hidden || state.cell.rows() != d ||
      state.cell.cols() != hidden) {
    throw DimensionError("step: features, state and params disagree on shape");
  }
  StepOutput out{Vector(d), UnrollState::fresh(state.theta, hidden)};
  out.next.momentum = features.momentum;
  out.next.second_moment = features.second_moment;
  out.next.step = state.step + 1;

  std::vector<double> x(params.input_dim());
  std::vector<double> gates(4 * hidden);
  std::vector<double> tanh_c(hidden);
  for (std::size_t i = 0; i < d; ++i) {
    auto f = features.features.row(i);
    auto h = state.hidden.row(i);
    std::copy(f.begin(), f.end(), x.begin());
    std::copy(h.begin(), h.end(), x.begin() + static_cast<std::ptrdiff_t>(fdim));
    detail::cell_forward(params, x.data(), state.cell.row(i).data(), gates.data(),
                         out.next.cell.row(i).data(), tanh_c.data(),
                         out.next.hidden.row(i).data());
    out.update[i] = detail::project_output(params, out.next.hidden.row(i).data());
    out.next.theta[i] += out.update[i];
  }
  return out;
}

double fresh_state_update(const OptimizerParams& params, std::span<const double> features) {
  if (features.size() != params.feature_dim()) {
    throw DimensionError("fresh_state_update: feature length mismatch");
  }
  const std::size_t hidden = params.hidden();
  std::vector<double> x(params.input_dim(), 0.0);
  std::copy(features.begin(), features.end(), x.begin());
  std::vector<double> c_prev(hidden, 0.0), gates(4 * hidden), c_new(hidden), tanh_c(hidden),
      h_new(hidden);
  detail::cell_forward(params, x.data(), c_prev.data(), gates.data(), c_new.data(), tanh_c.data(),
                       h_new.data());
  return detail::project_output(params, h_new.data());
}

// ---------------------------------------------------------------------------
// checkpoint I/O

namespace {

constexpr char kMagic[4] = {'M', 'L', '2', 'O'};

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  const std::vector<unsigned char>& bytes() const { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(CheckpointError::Kind::Corrupt,
                            std::string("checkpoint truncated while reading ") + what);
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

std::uint64_t checksum(const unsigned char* data, std::size_t n) {
  return fnv1a(std::as_bytes(std::span<const unsigned char>(data, n)));
}

}  // namespace

void save_checkpoint(const OptimizerParams& params, const std::filesystem::path& path,
                     const std::string& metadata) {
  ByteWriter w;
  w.raw(kMagic, sizeof(kMagic));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(params.hidden()));
  w.u32(static_cast<std::uint32_t>(params.feature_dim()));
  w.f64(params.output_scale());
  for (double v : params.values()) w.f64(v);
  w.raw(metadata.data(), metadata.size());
  w.u32(static_cast<std::uint32_t>(metadata.size()));
  w.u64(checksum(w.bytes().data(), w.bytes().size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw CheckpointError(CheckpointError::Kind::Io,
                          "cannot open checkpoint for writing: " + path.string());
  }
  out.write(reinterpret_cast<const char*>(w.bytes().data()),
            static_cast<std::streamsize>(w.bytes().size()));
  if (!out) {
    throw CheckpointError(CheckpointError::Kind::Io, "failed writing checkpoint: " + path.string());
  }
}

OptimizerParams load_checkpoint(const std::filesystem::path& path, std::string* metadata) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw CheckpointError(CheckpointError::Kind::Io, "cannot open checkpoint: " + path.string());
  }
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  constexpr std::size_t kHeaderBytes = 4 + 4 + 4 + 4 + 8;
  constexpr std::size_t kTrailerBytes = 4 + 8;

  ByteReader r(bytes);
  if (r.str(4, "magic") != std::string(kMagic, 4)) {
    throw CheckpointError(CheckpointError::Kind::Corrupt,
                          "not a checkpoint (bad magic): " + path.string());
  }
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Kind::Version,
                          "unsupported checkpoint version " + std::to_string(version) +
                              " (supported: " + std::to_string(kCheckpointVersion) + ")");
  }
  if (bytes.size() < kHeaderBytes + kTrailerBytes) {
    throw CheckpointError(CheckpointError::Kind::Corrupt, "checkpoint truncated: " + path.string());
  }
  const std::size_t body = bytes.size() - 8;
  ByteReader trailer(bytes);
  trailer.str(body - 4, "body");
  const std::uint32_t meta_len = trailer.u32("metadata length");
  if (trailer.u64("checksum") != checksum(bytes.data(), body)) {
    throw CheckpointError(CheckpointError::Kind::Corrupt,
                          "checkpoint checksum mismatch (truncated or damaged): " + path.string());
  }

  const std::uint32_t hidden = r.u32("hidden");
  const std::uint32_t feature_dim = r.u32("feature_dim");
  const double output_scale = r.f64("output_scale");
  if (hidden == 0 || feature_dim == 0 || !std::isfinite(output_scale)) {
    throw CheckpointError(CheckpointError::Kind::Inconsistent, "checkpoint header is invalid");
  }
  const std::size_t count = OptimizerParams::parameter_count(hidden, feature_dim);
  const std::size_t payload_bytes = bytes.size() - kHeaderBytes - kTrailerBytes;
  if (meta_len > payload_bytes || payload_bytes - meta_len != count * 8) {
    throw CheckpointError(CheckpointError::Kind::Inconsistent,
                          "dimension header inconsistent with payload: hidden=" +
                              std::to_string(hidden) + ", feature_dim=" +
                              std::to_string(feature_dim) + " needs " + std::to_string(count) +
                              " parameters");
  }
  Vector values(count);
  for (std::size_t i = 0; i < count; ++i) values[i] = r.f64("payload");
  std::string meta = r.str(meta_len, "metadata");
  if (!all_finite(values.span())) {
    throw CheckpointError(CheckpointError::Kind::Corrupt, "checkpoint holds non-finite values");
  }
  if (metadata) *metadata = std::move(meta);
  OptimizerParams p(hidden, feature_dim, output_scale);
  return p.with_values(std::move(values));
}

}  // namespace ml2o
