#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mslm/mask.hpp"

namespace mslm {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Architecture + training hyperparameters; the single source of truth for
// model assembly and the cost model.
struct ModelConfig {
  std::string family = "vanilla";  // vanilla | topdown | bottomup | retina
  std::vector<std::size_t> scales = {1};         // descending, last entry 1
  std::vector<std::size_t> layers_per_scale = {2};  // aligned with scales (retina: 1 entry)
  std::size_t d_model = 128;
  std::size_t num_heads = 4;
  std::size_t d_ff = 0;  // 0 -> 4 * d_model
  double dropout = 0.1;
  std::size_t context = 128;
  std::size_t vocab_size = 8192;
  std::string downsampler = "avg_pool";
  std::vector<std::pair<std::int64_t, std::int64_t>> retina_windows;  // fine -> coarse
  std::vector<std::size_t> head_allocation;  // aligned with scales; empty -> balanced
  std::size_t attn_window = 0;  // vanilla only; 0 = full causal, w>0 = local mask
  bool tie_embeddings = false;
  bool upsample_nonlinearity = false;
  std::size_t coarse_scale = 1;  // >1: coarse-only LM operating on k-token frames

  std::size_t coarsest() const { return scales.front(); }
  std::size_t finest_layers() const { return layers_per_scale.back(); }
  std::size_t ff_dim() const { return d_ff == 0 ? 4 * d_model : d_ff; }

  // Heads per scale for bottomup aggregation / retina attention, aligned with
  // `scales` (coarsest first). Balanced split; remainder goes to the finest
  // scales first.
  std::vector<std::size_t> resolve_head_allocation() const;

  void validate() const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t steps = 20000;  // steps to run in this invocation
  double peak_lr = 3e-4;
  std::size_t warmup_steps = 200;
  std::size_t total_steps = 20000;  // schedule horizon
  std::size_t checkpoint_every = 1000;
  std::size_t validate_every = 500;
  double grad_clip = 0.0;  // 0 = off; >0 = global-norm clip
  std::string objective = "next_token";  // next_token | coarse_bow
  AdamConfig adam;
};

struct DataConfig {
  std::string train_path;
  std::string valid_path;
  std::string test_path;
  bool prepend_bos = true;
};

struct EvalConfig {
  std::size_t window = 0;  // 0 -> model context
  std::size_t stride = 0;  // 0 -> window / 2
};

struct AnalysisConfig {
  std::size_t top_k = 40;
  double temperature = 0.7;
  std::size_t max_new = 256;
  std::size_t shuffle_context = 64;  // C; perturbation windows are 2C long
  std::size_t freq_bins = 5;
  std::size_t nn_chunk = 32;
  std::size_t nn_top = 5;
  bool suppress_unk = false;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;
  AnalysisConfig analysis;
  std::uint64_t seed = 0;
  std::string precision = "f32";  // f32 | f64

  void validate() const;
};

// Strict JSON binding: unknown keys are rejected with the offending path.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string run_config_to_json(const RunConfig& cfg);  // canonical (sorted keys, 2-space indent)
ModelConfig parse_model_config(const std::string& json_text);
std::string model_config_to_json(const ModelConfig& cfg);

// Applies a dotted-key override like "model.scales=16,4,1" or "seed=7".
void apply_override(RunConfig& cfg, const std::string& key_eq_value);

WindowBoundaries retina_boundaries(const ModelConfig& cfg);

}  // namespace mslm
