#include "docformer/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "docformer/error.hpp"

namespace docformer {
namespace {

using nlohmann::json;

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& want) {
  throw ConfigError("config key " + key + ": expected " + want + ", got \"" + value + "\"");
}

template <typename T>
T parse_number(const std::string& key, const std::string& s) {
  T v{};
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) bad_value(key, s, std::is_integral_v<T> ? "an integer" : "a number");
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  bad_value(key, s, "true or false");
}

std::array<std::size_t, 3> parse_channels(const std::string& key, const std::string& s) {
  std::array<std::size_t, 3> out{};
  std::stringstream ss(s);
  std::string part;
  std::size_t i = 0;
  while (std::getline(ss, part, ',')) {
    if (i == 3) bad_value(key, s, "three comma-separated channel counts");
    out[i++] = parse_number<std::size_t>(key, part);
  }
  if (i != 3) bad_value(key, s, "three comma-separated channel counts");
  return out;
}

std::string channels_str(const std::array<std::size_t, 3>& c) {
  return std::to_string(c[0]) + "," + std::to_string(c[1]) + "," + std::to_string(c[2]);
}

template <typename T>
T json_as(const std::string& key, const json& j) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!j.is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!j.is_number_integer()) throw ConfigError("");
      if constexpr (std::is_unsigned_v<T>) {
        if (j.get<std::int64_t>() < 0 && !j.is_number_unsigned()) throw ConfigError("");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!j.is_number()) throw ConfigError("");
    } else {
      if (!j.is_string()) throw ConfigError("");
    }
    return j.get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": value " + j.dump() + " has the wrong type");
  }
}

template <typename T, typename Access>
ConfigKey bind(std::string key, std::string help, Access access, std::vector<std::string> aliases = {}) {
  ConfigKey k;
  k.key = key;
  k.help = std::move(help);
  k.aliases = std::move(aliases);
  k.get = [access](const RunConfig& c) { return json(access(const_cast<RunConfig&>(c))); };
  k.set = [access, key](RunConfig& c, const json& j) { access(c) = json_as<T>(key, j); };
  k.parse = [access, key](RunConfig& c, const std::string& s) {
    if constexpr (std::is_same_v<T, bool>) {
      access(c) = parse_bool(key, s);
    } else if constexpr (std::is_arithmetic_v<T>) {
      if constexpr (std::is_unsigned_v<T>) {
        if (!s.empty() && s[0] == '-') bad_value(key, s, "a non-negative integer");
      }
      access(c) = parse_number<T>(key, s);
    } else {
      access(c) = s;
    }
  };
  return k;
}

std::vector<ConfigKey> make_keys() {
  std::vector<ConfigKey> k;
  // Plain fields.
#define DF_KEY(T, name, help, field, ...) \
  k.push_back(bind<T>(name, help, [](RunConfig& c) -> T& { return c.field; } __VA_OPT__(, ) __VA_ARGS__))
  DF_KEY(std::string, "task", "pretrain | finetune-seq | finetune-cls | eval | predict | export-attention (set by the subcommand)", task);
  DF_KEY(std::uint64_t, "seed", "master seed for initialization, shuffling, corruption and generation", seed);

  DF_KEY(std::size_t, "model.d", "hidden width d", model.features.d);
  DF_KEY(std::size_t, "model.n", "sequence length N (tokens, including [CLS])", model.features.n);
  DF_KEY(std::size_t, "model.layers", "encoder layers L", model.encoder.layers);
  DF_KEY(std::size_t, "model.heads", "attention heads (must divide d)", model.encoder.heads);
  DF_KEY(std::size_t, "model.span", "relative position clipping span", model.encoder.span);
  DF_KEY(int, "model.num_bins", "coordinate bins per spatial table", model.features.num_bins);
  DF_KEY(std::size_t, "model.image_h", "model image height (multiple of 8)", model.features.image_h);
  DF_KEY(std::size_t, "model.image_w", "model image width (multiple of 8)", model.features.image_w);
  DF_KEY(bool, "model.share_spatial_weights", "share the spatial query/key projections across modalities",
         model.encoder.share_spatial_weights, {"share-spatial-weights"});
  DF_KEY(bool, "model.inject_spatial_into_hidden", "add text spatial features to the first layer input",
         model.encoder.inject_spatial_into_hidden, {"inject-spatial-into-hidden"});
  DF_KEY(bool, "model.visual_branch", "enable the visual attention branch (false: text+spatial only)",
         model.encoder.visual_branch, {"visual-branch"});

  DF_KEY(double, "optim.clip_norm", "global gradient-norm clip", optim.clip_norm);
  DF_KEY(double, "optim.beta1", "AdamW beta1", optim.beta1);
  DF_KEY(double, "optim.beta2", "AdamW beta2", optim.beta2);
  DF_KEY(double, "optim.eps", "AdamW epsilon", optim.eps);
  DF_KEY(double, "optim.weight_decay", "decoupled weight decay", optim.weight_decay);

  DF_KEY(double, "pretrain.lr", "pre-training learning rate", pretrain_lr);
  DF_KEY(double, "pretrain.warmup_fraction", "pre-training warmup fraction of steps", pretrain_warmup);
  DF_KEY(std::size_t, "pretrain.epochs", "pre-training epochs", pretrain_epochs);
  DF_KEY(double, "pretrain.mlm_rate", "MM-MLM token selection probability", mlm_rate);
  DF_KEY(double, "pretrain.mismatch_rate", "TDI image swap probability", mismatch_rate);
  DF_KEY(double, "loss.mlm", "MM-MLM loss weight (lambda)", loss.mlm);
  DF_KEY(double, "loss.ltr", "LTR loss weight (beta)", loss.ltr);
  DF_KEY(double, "loss.tdi", "TDI loss weight (gamma)", loss.tdi);

  DF_KEY(double, "finetune.lr", "fine-tuning learning rate", finetune_lr);
  DF_KEY(double, "finetune.warmup_fraction", "fine-tuning warmup fraction of steps", finetune_warmup);
  DF_KEY(std::size_t, "finetune.epochs", "fine-tuning epochs", finetune_epochs);
  DF_KEY(std::string, "finetune.task", "seq (token labeling) | cls (document classification)", finetune_task);
  DF_KEY(std::size_t, "finetune.num_classes", "number of target classes", num_classes);
  DF_KEY(std::size_t, "train.batch_size", "documents per optimizer step", batch_size);

  DF_KEY(std::string, "paths.corpus", "corpus directory or manifest.json", corpus, {"corpus"});
  DF_KEY(std::string, "paths.vocab", "vocabulary file", vocab, {"vocab"});
  DF_KEY(std::string, "paths.checkpoint", "input checkpoint directory", checkpoint, {"checkpoint"});
  DF_KEY(std::string, "paths.out", "output directory or file", out, {"out"});

  DF_KEY(std::size_t, "generate.docs", "documents to generate", generate_docs, {"docs"});
  DF_KEY(std::int64_t, "generate.held_out", "trailing documents marked held out (-1: a fifth)", generate_held_out);
  DF_KEY(std::size_t, "vocab.max_size", "vocabulary size cap (reserved tokens excluded)", vocab_max_size);
  DF_KEY(std::size_t, "vocab.min_count", "minimum count for whole-word entries", vocab_min_count);

  DF_KEY(std::string, "data.split", "documents used by evaluate/predict: train | test | all", split, {"split"});
  DF_KEY(std::int64_t, "export.layer", "layer to export (-1: last)", export_layer, {"layer"});
  DF_KEY(std::size_t, "export.head", "head to export", export_head, {"head"});
  DF_KEY(std::string, "export.doc", "document id to export (empty: first)", export_doc, {"doc"});
#undef DF_KEY

  // Fields needing a custom text form.
  ConfigKey ch;
  ch.key = "model.cnn_channels";
  ch.help = "three CNN channel counts, comma-separated";
  ch.get = [](const RunConfig& c) { return json(channels_str(c.model.features.cnn_channels)); };
  ch.set = [](RunConfig& c, const json& j) {
    c.model.features.cnn_channels = parse_channels("model.cnn_channels", json_as<std::string>("model.cnn_channels", j));
  };
  ch.parse = [](RunConfig& c, const std::string& s) {
    c.model.features.cnn_channels = parse_channels("model.cnn_channels", s);
  };
  k.push_back(ch);

  ConfigKey hv;
  hv.key = "finetune.head_variant";
  hv.help = "linear | deeper (fc -> ReLU -> LayerNorm -> fc)";
  hv.aliases = {"head-variant"};
  hv.get = [](const RunConfig& c) { return json(to_string(c.head_variant)); };
  hv.set = [](RunConfig& c, const json& j) {
    c.head_variant = parse_head_variant(json_as<std::string>("finetune.head_variant", j));
  };
  hv.parse = [](RunConfig& c, const std::string& s) { c.head_variant = parse_head_variant(s); };
  k.push_back(hv);
  return k;
}

}  // namespace

OptimConfig RunConfig::pretrain_optim() const {
  OptimConfig o = optim;
  o.lr = pretrain_lr;
  o.warmup_fraction = pretrain_warmup;
  return o;
}

OptimConfig RunConfig::finetune_optim() const {
  OptimConfig o = optim;
  o.lr = finetune_lr;
  o.warmup_fraction = finetune_warmup;
  return o;
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = make_keys();
  return keys;
}

nlohmann::json config_to_json(const RunConfig& cfg) {
  json j = json::object();
  for (const auto& k : config_keys()) j[k.key] = k.get(cfg);
  return j;
}

RunConfig config_from_json(const nlohmann::json& j, RunConfig base) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object with dotted keys");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& keys = config_keys();
    auto k = std::ranges::find(keys, it.key(), &ConfigKey::key);
    if (k == keys.end()) throw ConfigError("unknown config key \"" + it.key() + "\"");
    k->set(base, it.value());
  }
  return base;
}

RunConfig load_config_file(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j, std::move(base));
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& keys = config_keys();
  auto k = std::ranges::find(keys, key, &ConfigKey::key);
  if (k == keys.end()) throw ConfigError("unknown config key \"" + key + "\"");
  k->parse(cfg, value);
}

}  // namespace docformer
