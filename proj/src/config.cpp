#include "mslm/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace mslm {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::string& path, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw ConfigError("unknown config key '" + (path.empty() ? it.key() : path + "." + it.key()) +
                        "'");
    }
  }
}

template <typename V>
void get_to(const json& j, const std::string& path, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(out);
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + path + "." + key + "': " + e.what());
  }
}

void parse_model(const json& j, ModelConfig& m) {
  reject_unknown(j, "model",
                 {"family", "scales", "layers_per_scale", "d_model", "num_heads", "d_ff",
                  "dropout", "context", "vocab_size", "downsampler", "retina_windows",
                  "head_allocation", "attn_window", "tie_embeddings", "upsample_nonlinearity",
                  "coarse_scale"});
  get_to(j, "model", "family", m.family);
  get_to(j, "model", "scales", m.scales);
  get_to(j, "model", "layers_per_scale", m.layers_per_scale);
  get_to(j, "model", "d_model", m.d_model);
  get_to(j, "model", "num_heads", m.num_heads);
  get_to(j, "model", "d_ff", m.d_ff);
  get_to(j, "model", "dropout", m.dropout);
  get_to(j, "model", "context", m.context);
  get_to(j, "model", "vocab_size", m.vocab_size);
  get_to(j, "model", "downsampler", m.downsampler);
  if (j.contains("retina_windows")) {
    m.retina_windows.clear();
    for (const auto& span : j.at("retina_windows")) {
      if (!span.is_array() || span.size() != 2) {
        throw ConfigError("model.retina_windows: each span must be [lo, hi]");
      }
      m.retina_windows.emplace_back(span[0].get<std::int64_t>(), span[1].get<std::int64_t>());
    }
  }
  get_to(j, "model", "head_allocation", m.head_allocation);
  get_to(j, "model", "attn_window", m.attn_window);
  get_to(j, "model", "tie_embeddings", m.tie_embeddings);
  get_to(j, "model", "upsample_nonlinearity", m.upsample_nonlinearity);
  get_to(j, "model", "coarse_scale", m.coarse_scale);
}

json model_to_json(const ModelConfig& m) {
  json j;
  j["family"] = m.family;
  j["scales"] = m.scales;
  j["layers_per_scale"] = m.layers_per_scale;
  j["d_model"] = m.d_model;
  j["num_heads"] = m.num_heads;
  j["d_ff"] = m.d_ff;
  j["dropout"] = m.dropout;
  j["context"] = m.context;
  j["vocab_size"] = m.vocab_size;
  j["downsampler"] = m.downsampler;
  json spans = json::array();
  for (const auto& [lo, hi] : m.retina_windows) spans.push_back({lo, hi});
  j["retina_windows"] = spans;
  j["head_allocation"] = m.head_allocation;
  j["attn_window"] = m.attn_window;
  j["tie_embeddings"] = m.tie_embeddings;
  j["upsample_nonlinearity"] = m.upsample_nonlinearity;
  j["coarse_scale"] = m.coarse_scale;
  return j;
}

void parse_train(const json& j, TrainConfig& t) {
  reject_unknown(j, "train",
                 {"batch_size", "steps", "peak_lr", "warmup_steps", "total_steps",
                  "checkpoint_every", "validate_every", "grad_clip", "objective", "adam"});
  get_to(j, "train", "batch_size", t.batch_size);
  get_to(j, "train", "steps", t.steps);
  get_to(j, "train", "peak_lr", t.peak_lr);
  get_to(j, "train", "warmup_steps", t.warmup_steps);
  get_to(j, "train", "total_steps", t.total_steps);
  get_to(j, "train", "checkpoint_every", t.checkpoint_every);
  get_to(j, "train", "validate_every", t.validate_every);
  get_to(j, "train", "grad_clip", t.grad_clip);
  get_to(j, "train", "objective", t.objective);
  if (j.contains("adam")) {
    const json& a = j.at("adam");
    reject_unknown(a, "train.adam", {"beta1", "beta2", "eps"});
    get_to(a, "train.adam", "beta1", t.adam.beta1);
    get_to(a, "train.adam", "beta2", t.adam.beta2);
    get_to(a, "train.adam", "eps", t.adam.eps);
  }
}

json train_to_json(const TrainConfig& t) {
  json j;
  j["batch_size"] = t.batch_size;
  j["steps"] = t.steps;
  j["peak_lr"] = t.peak_lr;
  j["warmup_steps"] = t.warmup_steps;
  j["total_steps"] = t.total_steps;
  j["checkpoint_every"] = t.checkpoint_every;
  j["validate_every"] = t.validate_every;
  j["grad_clip"] = t.grad_clip;
  j["objective"] = t.objective;
  j["adam"] = {{"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"eps", t.adam.eps}};
  return j;
}

}  // namespace

std::vector<std::size_t> ModelConfig::resolve_head_allocation() const {
  if (!head_allocation.empty()) {
    if (head_allocation.size() != scales.size()) {
      throw ConfigError("model.head_allocation: expected " + std::to_string(scales.size()) +
                        " entries, got " + std::to_string(head_allocation.size()));
    }
    std::size_t total = 0;
    for (auto h : head_allocation) {
      if (h == 0) throw ConfigError("model.head_allocation: every scale needs >= 1 head");
      total += h;
    }
    if (total != num_heads) {
      throw ConfigError("model.head_allocation: entries sum to " + std::to_string(total) +
                        ", expected num_heads = " + std::to_string(num_heads));
    }
    return head_allocation;
  }
  const std::size_t m = scales.size();
  if (num_heads < m) {
    throw ConfigError("model.num_heads = " + std::to_string(num_heads) +
                      " is fewer than the " + std::to_string(m) + " scales");
  }
  std::vector<std::size_t> alloc(m, num_heads / m);
  std::size_t extra = num_heads % m;
  // hand leftovers to the finest scales (scales are listed coarsest first)
  for (std::size_t i = m; i-- > 0 && extra > 0; --extra) alloc[i] += 1;
  return alloc;
}

void ModelConfig::validate() const {
  if (family != "vanilla" && family != "topdown" && family != "bottomup" && family != "retina") {
    throw ConfigError("model.family: unknown family '" + family + "'");
  }
  if (scales.empty()) throw ConfigError("model.scales: must not be empty");
  if (scales.back() != 1) throw ConfigError("model.scales: finest scale must be 1");
  for (std::size_t i = 0; i + 1 < scales.size(); ++i) {
    if (scales[i] <= scales[i + 1]) {
      throw ConfigError("model.scales: must be strictly descending");
    }
    if (scales[i] % scales[i + 1] != 0) {
      throw ConfigError("model.scales: adjacent ratio " + std::to_string(scales[i]) + "/" +
                        std::to_string(scales[i + 1]) + " is not an integer");
    }
  }
  if (family == "vanilla" && scales.size() != 1) {
    throw ConfigError("model.scales: vanilla models use scales = [1]");
  }
  if (family == "retina") {
    if (layers_per_scale.size() != 1) {
      throw ConfigError("model.layers_per_scale: retina uses a single stack (one entry)");
    }
    if (retina_windows.size() != scales.size()) {
      throw ConfigError("model.retina_windows: expected one [lo, hi) span per scale");
    }
    WindowBoundaries wb = retina_boundaries(*this);
    try {
      wb.validate(static_cast<std::int64_t>(context));
    } catch (const std::exception& e) {
      throw ConfigError(std::string("model.retina_windows: ") + e.what());
    }
  } else if (layers_per_scale.size() != scales.size()) {
    throw ConfigError("model.layers_per_scale: expected one entry per scale");
  }
  for (auto l : layers_per_scale) {
    if (l == 0 && family != "vanilla") {
      throw ConfigError("model.layers_per_scale: entries must be positive");
    }
  }
  if (d_model == 0 || num_heads == 0 || d_model % num_heads != 0) {
    throw ConfigError("model.d_model must be a positive multiple of model.num_heads");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model.dropout: must be in [0, 1)");
  if (context == 0 || context % coarsest() != 0) {
    throw ConfigError("model.context: must be a positive multiple of the coarsest scale");
  }
  if (vocab_size < 2) throw ConfigError("model.vocab_size: must be >= 2 (UNK and BOS)");
  if (downsampler != "avg_pool" && downsampler != "max_pool" && downsampler != "causal_conv") {
    throw ConfigError("model.downsampler: unknown method '" + downsampler + "'");
  }
  if (attn_window != 0 && family != "vanilla") {
    throw ConfigError("model.attn_window: only vanilla models take a local window");
  }
  if (coarse_scale != 1 && family != "vanilla") {
    throw ConfigError("model.coarse_scale: coarse-only LMs use the vanilla family");
  }
  if (coarse_scale == 0 || context % coarse_scale != 0) {
    throw ConfigError("model.context: must be divisible by model.coarse_scale");
  }
  if (family == "bottomup" || family == "retina") {
    resolve_head_allocation();  // throws if infeasible
  }
}

void RunConfig::validate() const {
  model.validate();
  if (precision != "f32" && precision != "f64") {
    throw ConfigError("precision: must be 'f32' or 'f64'");
  }
  if (train.batch_size == 0) throw ConfigError("train.batch_size: must be positive");
  if (!(train.warmup_steps > 0 && train.warmup_steps < train.total_steps)) {
    throw ConfigError("train.warmup_steps: need 0 < warmup_steps < total_steps");
  }
  if (train.objective != "next_token" && train.objective != "coarse_bow") {
    throw ConfigError("train.objective: must be 'next_token' or 'coarse_bow'");
  }
  const std::size_t window = eval.window == 0 ? model.context : eval.window;
  if (window > model.context) throw ConfigError("eval.window: larger than model.context");
  const std::size_t stride = eval.stride == 0 ? window / 2 : eval.stride;
  if (stride == 0 || stride > window) throw ConfigError("eval.stride: need 0 < stride <= window");
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(j, "", {"model", "train", "data", "eval", "analysis", "seed", "precision"});
  RunConfig cfg;
  if (j.contains("model")) parse_model(j.at("model"), cfg.model);
  if (j.contains("train")) parse_train(j.at("train"), cfg.train);
  if (j.contains("data")) {
    const json& d = j.at("data");
    reject_unknown(d, "data", {"train", "valid", "test", "prepend_bos"});
    get_to(d, "data", "train", cfg.data.train_path);
    get_to(d, "data", "valid", cfg.data.valid_path);
    get_to(d, "data", "test", cfg.data.test_path);
    get_to(d, "data", "prepend_bos", cfg.data.prepend_bos);
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    reject_unknown(e, "eval", {"window", "stride"});
    get_to(e, "eval", "window", cfg.eval.window);
    get_to(e, "eval", "stride", cfg.eval.stride);
  }
  if (j.contains("analysis")) {
    const json& a = j.at("analysis");
    reject_unknown(a, "analysis",
                   {"top_k", "temperature", "max_new", "shuffle_context", "freq_bins", "nn_chunk",
                    "nn_top", "suppress_unk"});
    get_to(a, "analysis", "top_k", cfg.analysis.top_k);
    get_to(a, "analysis", "temperature", cfg.analysis.temperature);
    get_to(a, "analysis", "max_new", cfg.analysis.max_new);
    get_to(a, "analysis", "shuffle_context", cfg.analysis.shuffle_context);
    get_to(a, "analysis", "freq_bins", cfg.analysis.freq_bins);
    get_to(a, "analysis", "nn_chunk", cfg.analysis.nn_chunk);
    get_to(a, "analysis", "nn_top", cfg.analysis.nn_top);
    get_to(a, "analysis", "suppress_unk", cfg.analysis.suppress_unk);
  }
  get_to(j, "", "seed", cfg.seed);
  get_to(j, "", "precision", cfg.precision);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["model"] = model_to_json(cfg.model);
  j["train"] = train_to_json(cfg.train);
  j["data"] = {{"train", cfg.data.train_path},
               {"valid", cfg.data.valid_path},
               {"test", cfg.data.test_path},
               {"prepend_bos", cfg.data.prepend_bos}};
  j["eval"] = {{"window", cfg.eval.window}, {"stride", cfg.eval.stride}};
  j["analysis"] = {{"top_k", cfg.analysis.top_k},
                   {"temperature", cfg.analysis.temperature},
                   {"max_new", cfg.analysis.max_new},
                   {"shuffle_context", cfg.analysis.shuffle_context},
                   {"freq_bins", cfg.analysis.freq_bins},
                   {"nn_chunk", cfg.analysis.nn_chunk},
                   {"nn_top", cfg.analysis.nn_top},
                   {"suppress_unk", cfg.analysis.suppress_unk}};
  j["seed"] = cfg.seed;
  j["precision"] = cfg.precision;
  return j.dump(2) + "\n";
}

ModelConfig parse_model_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
  }
  ModelConfig m;
  parse_model(j, m);
  return m;
}

std::string model_config_to_json(const ModelConfig& cfg) { return model_to_json(cfg).dump(); }

void apply_override(RunConfig& cfg, const std::string& key_eq_value) {
  const auto eq = key_eq_value.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + key_eq_value + "' must look like key=value");
  }
  const std::string key = key_eq_value.substr(0, eq);
  const std::string value = key_eq_value.substr(eq + 1);

  // Rebuild through JSON so types and unknown keys are checked uniformly.
  json root = json::parse(run_config_to_json(cfg));
  json* node = &root;
  std::size_t pos = 0;
  std::string leaf = key;
  while (true) {
    const auto dot = leaf.find('.');
    if (dot == std::string::npos) break;
    const std::string head = leaf.substr(0, dot);
    if (!node->contains(head)) throw ConfigError("unknown config key '" + key + "'");
    node = &(*node)[head];
    leaf = leaf.substr(dot + 1);
    pos += dot + 1;
  }
  if (!node->contains(leaf)) throw ConfigError("unknown config key '" + key + "'");
  json& slot = (*node)[leaf];
  const auto parse_scalar = [&](const std::string& s) -> json {
    if (slot.is_string()) return s;
    if (slot.is_boolean()) return s == "true" || s == "1";
    if (slot.is_number_float()) return std::stod(s);
    return json::parse(s);  // integers
  };
  try {
    if (slot.is_array()) {
      json arr = json::array();
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) {
        if (!item.empty()) arr.push_back(json::parse(item));
      }
      slot = arr;
    } else {
      slot = parse_scalar(value);
    }
  } catch (const std::exception&) {
    throw ConfigError("override '" + key_eq_value + "': cannot parse value");
  }
  cfg = parse_run_config(root.dump());
}

WindowBoundaries retina_boundaries(const ModelConfig& cfg) {
  WindowBoundaries wb;
  wb.spans = cfg.retina_windows;
  return wb;
}

}  // namespace mslm
