#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cdyn/architectures/presets.hpp"
#include "cdyn/tasks/tasks.hpp"
#include "cdyn/train/ops.hpp"

// Token model used for training:
//   embedding (+ learned positions)
//   -> per layer: RMSNorm -> [short conv] -> q,k,v and gates -> dynamics
//                 [type2: RMSNorm(y) .* SiLU(W_G u)] -> W_O -> residual
//                 [SwiGLU MLP with its own RMSNorm and residual]
//   -> RMSNorm -> vocabulary head.
// Gradients are hand-derived; see the finite-difference tests.

namespace cdyn {

enum class BlockStyle { type1, type2 };

struct ModelConfig {
  /// When set, every layer's spec (and gate init) comes from this preset.
  std::optional<Architecture> architecture;
  PresetHyper hyper;
  /// Used when no architecture is set; its dims always give d, n and heads
  /// (d_v is forced to d).
  DynamicsSpec dynamics;
  std::size_t vocab_size = 14;
  std::size_t layers = 2;
  std::size_t max_len = 64;
  bool positional_embedding = false;
  BlockStyle block = BlockStyle::type1;
  bool short_conv = false;
  std::size_t conv_width = 4;
  bool mlp = false;
  std::size_t mlp_dim = 64;
  bool recurrent = false;  // use the recurrent forward where the readout allows

  void validate() const;
};

Json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const Json& j);

class Model {
 public:
  /// Fresh parameters drawn from `seed`.
  static Model init(const ModelConfig& cfg, std::uint64_t seed);
  Model(ModelConfig cfg, ParamSet params, std::vector<DynamicsSpec> layer_specs);

  const ModelConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  /// Structural per-layer specs; gate values inside are superseded by params().
  const std::vector<DynamicsSpec>& layer_specs() const { return specs_; }

  Matrix logits(std::span<const std::int32_t> tokens) const;
  /// Summed cross-entropy over supervised positions; when `grad` is given,
  /// d(loss / normalizer) is accumulated into it.
  double loss_and_grad(const TaskExample& ex, double normalizer, ParamSet* grad) const;
  /// Mean cross-entropy of one example.
  double loss(const TaskExample& ex) const;

  /// Layer spec with the current gate parameters filled in.
  DynamicsSpec live_spec(std::size_t layer) const;

 private:
  struct LayerCache;
  Matrix forward(std::span<const std::int32_t> tokens, std::vector<LayerCache>* caches,
                 Matrix* final_in, RmsCache* final_cache) const;

  ModelConfig cfg_;
  ParamSet params_;
  std::vector<DynamicsSpec> specs_;
};

Json checkpoint_json(const Model& m);
Model model_from_checkpoint(const Json& j);

}  // namespace cdyn
