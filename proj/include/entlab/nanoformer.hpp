#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace entlab {

struct ModelConfig {
  int n_layers = 4;
  int d_model = 4;
  int n_heads = 2;
  int head_dim = 2;
  int mlp_hidden = 16;
  int vocab_size = 5;
  int max_seq_len = 8;
  double init_scale = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct TensorInfo {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// Offsets of each parameter tensor inside the flat parameter vector.
// Matrices are row-major [in][out] except the embedding-style tables
// (token, position, unembedding) which are [row][d_model].
struct LayerLayout {
  std::size_t ln1_g, ln1_b, wq, wk, wv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
};

struct ParamLayout {
  std::size_t tok_emb, pos_emb, lnf_g, lnf_b, unembed, total;
  std::vector<LayerLayout> layers;
  std::vector<TensorInfo> manifest;

  static ParamLayout make(const ModelConfig& cfg);
};

// All parameters of the transformer plus its architecture. Parameters are
// stored as 32-bit floats in a single flat vector (manifest order).
class ModelState {
 public:
  ModelState() = default;
  // Scaled Gaussian init (std = init_scale / sqrt(d_model)); layer-norm gains 1,
  // biases 0, unembedding 0.
  static ModelState initialize(const ModelConfig& cfg);
  static ModelState from_params(const ModelConfig& cfg, std::vector<float> params);

  const ModelConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  std::span<const float> params() const { return params_; }
  std::span<float> params() { return params_; }
  std::size_t num_params() const { return params_.size(); }

  const TensorInfo& tensor(std::string_view name) const;
  std::span<const float> view(std::string_view name) const;
  std::span<float> view(std::string_view name);
  // Row of the unembedding matrix for `token`.
  std::span<const float> unembedding_row(int token) const;

  bool all_finite() const;
  bool operator==(const ModelState& o) const { return cfg_ == o.cfg_ && params_ == o.params_; }

 private:
  ModelConfig cfg_;
  ParamLayout layout_;
  std::vector<float> params_;
};

// Additive shift applied to one attention head's output (before the output
// projection) at every position.
struct HeadShift {
  int layer = 0;
  int head = 0;
  std::vector<double> delta;  // head_dim entries
};

struct ActivationRecord {
  int n_layers = 0, n_heads = 0, d_model = 0, head_dim = 0, vocab = 0, length = 0;
  std::vector<double> residual;  // [layer][t][d_model], after each block
  std::vector<double> heads;     // [layer][head][t][head_dim], after any shift
  std::vector<double> logits;    // [t][vocab]

  std::span<const double> residual_at(int layer, int t) const;
  std::span<const double> head_at(int layer, int head, int t) const;
  std::span<const double> logits_at(int t) const;
};

struct ForwardResult {
  int length = 0;
  int vocab = 0;
  std::vector<double> logits;  // [t][vocab]
  bool captured = false;
  ActivationRecord activations;

  std::span<const double> logits_at(int t) const {
    return std::span<const double>(logits).subspan(static_cast<std::size_t>(t) * vocab, vocab);
  }
};

// Causal next-token logits. Throws on ids >= vocab or length > max_seq_len.
ForwardResult forward(const ModelState& model, std::span<const int> tokens, bool capture,
                      std::span<const HeadShift> shifts = {});

// Weighted mean taken relative to the first value, so a set of identical losses
// averages to that value bit for bit.
struct ShiftedMean {
  double ref = 0.0, acc = 0.0, weight = 0.0;
  bool seeded = false;
  void add(double x, double w) {
    if (!seeded) ref = x, seeded = true;
    acc += w * (x - ref);
    weight += w;
  }
  double value() const { return weight > 0.0 ? ref + acc / weight : 0.0; }
};

struct WeightedSequence {
  std::span<const int> tokens;
  double weight = 1.0;
};

struct Gradients {
  double loss = 0.0;
  std::vector<double> values;  // parameter layout
};

// Mean next-token cross-entropy over every predicted position of every
// sequence (weights act as multiplicities). Optionally skips the gradient.
double batch_loss(const ModelState& model, std::span<const WeightedSequence> batch);
Gradients backward(const ModelState& model, std::span<const WeightedSequence> batch);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamOptimizer {
 public:
  explicit AdamOptimizer(std::size_t num_params) : m_(num_params, 0.0), v_(num_params, 0.0) {}
  // One bias-corrected Adam update; `lr` overrides cfg.lr when positive.
  void step(ModelState& model, std::span<const double> grad, const AdamConfig& cfg, double lr = -1.0);
  std::int64_t steps_taken() const { return t_; }

 private:
  std::vector<double> m_, v_;
  std::int64_t t_ = 0;
};

inline constexpr char kCheckpointMagic[9] = "ENTLAB01";
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const ModelState& model);
ModelState deserialize_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const ModelState& model, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace entlab
