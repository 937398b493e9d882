#include "addiff/config.hpp"

#include <charconv>
#include <functional>
#include <set>
#include <sstream>

namespace addiff {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key, "cannot parse '" + value + "' as a number");
  return out;
}

template <typename Fn>
auto parse_enum(const std::string& key, const std::string& value, Fn fn) {
  try {
    return fn(value);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key, e.what());
  }
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

struct Field {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field int_field(std::string name, T RunConfig::*section, int T::*member) {
  return {name,
          [=](RunConfig& c, const std::string& v) { c.*section.*member = parse_number<int>(name, v); },
          [=](const RunConfig& c) { return std::to_string(c.*section.*member); }};
}

template <typename T>
Field real_field(std::string name, T RunConfig::*section, double T::*member) {
  return {name,
          [=](RunConfig& c, const std::string& v) { c.*section.*member = parse_number<double>(name, v); },
          [=](const RunConfig& c) { return format_double(c.*section.*member); }};
}

template <typename T>
Field string_field(std::string name, T RunConfig::*section, std::string T::*member) {
  return {name, [=](RunConfig& c, const std::string& v) { c.*section.*member = v; },
          [=](const RunConfig& c) { return c.*section.*member; }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"task", [](RunConfig& c, const std::string& v) { c.task = parse_enum("task", v, parse_task_kind); },
                 [](const RunConfig& c) { return to_string(c.task); }});
    f.push_back({"seed",
                 [](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});
    f.push_back({"method", [](RunConfig& c, const std::string& v) { c.method = parse_enum("method", v, parse_method); },
                 [](const RunConfig& c) { return to_string(c.method); }});
    // schedule
    f.push_back({"kind",
                 [](RunConfig& c, const std::string& v) { c.schedule.kind = parse_enum("kind", v, parse_schedule_kind); },
                 [](const RunConfig& c) { return to_string(c.schedule.kind); }});
    f.push_back(int_field("T", &RunConfig::schedule, &ScheduleConfig::T));
    f.push_back(real_field("beta_min", &RunConfig::schedule, &ScheduleConfig::beta_min));
    f.push_back(real_field("beta_max", &RunConfig::schedule, &ScheduleConfig::beta_max));
    // training
    f.push_back(int_field("epochs", &RunConfig::train, &TrainConfig::epochs));
    f.push_back(int_field("batch_size", &RunConfig::train, &TrainConfig::batch_size));
    f.push_back(real_field("learning_rate", &RunConfig::train, &TrainConfig::learning_rate));
    f.push_back(real_field("weight_decay", &RunConfig::train, &TrainConfig::weight_decay));
    f.push_back(int_field("warmup_epochs", &RunConfig::train, &TrainConfig::warmup_epochs));
    f.push_back(real_field("grad_clip_norm", &RunConfig::train, &TrainConfig::grad_clip_norm));
    f.push_back({"loss_kind",
                 [](RunConfig& c, const std::string& v) { c.train.loss_kind = parse_enum("loss_kind", v, parse_loss_kind); },
                 [](const RunConfig& c) { return to_string(c.train.loss_kind); }});
    f.push_back(real_field("cfg_dropout_prob", &RunConfig::train, &TrainConfig::cfg_dropout_prob));
    f.push_back(int_field("kfold", &RunConfig::train, &TrainConfig::kfold));
    f.push_back(int_field("shard_size", &RunConfig::train, &TrainConfig::shard_size));
    f.push_back({"checkpoint_every",
                 [](RunConfig& c, const std::string& v) { c.checkpoint_every = parse_number<int>("checkpoint_every", v); },
                 [](const RunConfig& c) { return std::to_string(c.checkpoint_every); }});
    // model
    f.push_back(int_field("hidden_dim", &RunConfig::model, &ModelConfig::hidden_dim));
    f.push_back(int_field("depth", &RunConfig::model, &ModelConfig::depth));
    f.push_back(int_field("time_embed_dim", &RunConfig::model, &ModelConfig::time_embed_dim));
    f.push_back(int_field("heads", &RunConfig::model, &ModelConfig::heads));
    f.push_back(int_field("cond_dim", &RunConfig::model, &ModelConfig::cond_dim));
    f.push_back(int_field("encoder_layers", &RunConfig::model, &ModelConfig::encoder_layers));
    f.push_back(int_field("encoder_heads", &RunConfig::model, &ModelConfig::encoder_heads));
    f.push_back(int_field("encoder_ffn_dim", &RunConfig::model, &ModelConfig::encoder_ffn_dim));
    f.push_back({"pooling",
                 [](RunConfig& c, const std::string& v) { c.model.pooling = parse_enum("pooling", v, parse_pooling); },
                 [](const RunConfig& c) { return to_string(c.model.pooling); }});
    // data
    f.push_back(int_field("train_size", &RunConfig::data, &DataConfig::train_size));
    f.push_back(int_field("test_size", &RunConfig::data, &DataConfig::test_size));
    f.push_back(string_field("train_data", &RunConfig::data, &DataConfig::train_data));
    f.push_back(string_field("test_data", &RunConfig::data, &DataConfig::test_data));
    f.push_back(real_field("blob_sigma", &RunConfig::data, &DataConfig::blob_sigma));
    f.push_back(int_field("seq_len", &RunConfig::data, &DataConfig::seq_len));
    // sampling
    f.push_back(int_field("steps", &RunConfig::sample, &SampleConfig::steps));
    f.push_back({"to_one",
                 [](RunConfig& c, const std::string& v) { c.sample.to_one = parse_enum("to_one", v, parse_to_one); },
                 [](const RunConfig& c) { return to_string(c.sample.to_one); }});
    f.push_back(real_field("guidance_scale", &RunConfig::sample, &SampleConfig::guidance_scale));
    f.push_back({"renoise_variant",
                 [](RunConfig& c, const std::string& v) {
                   c.sample.renoise_variant = parse_enum("renoise_variant", v, parse_renoise_variant);
                 },
                 [](const RunConfig& c) { return to_string(c.sample.renoise_variant); }});
    f.push_back(real_field("temperature", &RunConfig::sample, &SampleConfig::temperature));
    f.push_back({"pdd_rounds",
                 [](RunConfig& c, const std::string& v) { c.pdd_rounds = parse_number<int>("pdd_rounds", v); },
                 [](const RunConfig& c) { return std::to_string(c.pdd_rounds); }});
    return f;
  }();
  return table;
}

const Field* find_field(const std::string& key) {
  for (const Field& f : fields()) {
    if (f.name == key) return &f;
  }
  return nullptr;
}

void apply(RunConfig& c, const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError(key, "unknown config key");
  f->set(c, value);
}

}  // namespace

std::string to_string(Method m) { return m == Method::kAdd ? "add" : "pdd"; }

Method parse_method(const std::string& name) {
  if (name == "add") return Method::kAdd;
  if (name == "pdd") return Method::kPdd;
  throw std::invalid_argument("unknown method '" + name + "' (expected add or pdd)");
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const Field& f : fields()) k.push_back(f.name);
    return k;
  }();
  return keys;
}

void RunConfig::validate() const {
  auto check = [](bool ok, const char* key, const char* what) {
    if (!ok) throw ConfigError(key, what);
  };
  auto rethrow = [](const char* key, const auto& fn) {
    try {
      fn();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(key, e.what());
    }
  };
  check(schedule.T >= 1, "T", "must be >= 1");
  check(schedule.beta_min > 0.0 && schedule.beta_min < 1.0, "beta_min", "must lie in (0, 1)");
  check(schedule.beta_max >= schedule.beta_min && schedule.beta_max < 1.0, "beta_max",
        "must lie in [beta_min, 1)");
  check(train.epochs >= 1, "epochs", "must be >= 1");
  check(train.batch_size >= 1, "batch_size", "must be >= 1");
  check(train.learning_rate >= 0.0, "learning_rate", "must be >= 0");
  check(train.weight_decay >= 0.0, "weight_decay", "must be >= 0");
  check(train.warmup_epochs >= 0 && train.warmup_epochs <= train.epochs, "warmup_epochs",
        "must lie in [0, epochs]");
  check(train.grad_clip_norm > 0.0, "grad_clip_norm", "must be > 0");
  check(train.cfg_dropout_prob >= 0.0 && train.cfg_dropout_prob <= 1.0, "cfg_dropout_prob",
        "must lie in [0, 1]");
  check(train.kfold >= 1, "kfold", "must be >= 1");
  check(method == Method::kPdd || train.kfold <= schedule.T, "kfold", "must not exceed T");
  check(train.shard_size >= 1, "shard_size", "must be >= 1");
  check(checkpoint_every >= 0, "checkpoint_every", "must be >= 0");
  check(model.hidden_dim >= 1, "hidden_dim", "must be >= 1");
  check(model.depth >= 1, "depth", "must be >= 1");
  check(model.time_embed_dim >= 4 && model.time_embed_dim % 2 == 0, "time_embed_dim",
        "must be even and >= 4");
  check(model.heads >= 1 && model.hidden_dim % model.heads == 0, "heads", "must divide hidden_dim");
  check(model.cond_dim >= 1, "cond_dim", "must be >= 1");
  check(model.encoder_layers >= 1, "encoder_layers", "must be >= 1");
  check(model.encoder_heads >= 1 && model.cond_dim % model.encoder_heads == 0, "encoder_heads",
        "must divide cond_dim");
  check(model.encoder_ffn_dim >= 1, "encoder_ffn_dim", "must be >= 1");
  check(data.train_size >= 1, "train_size", "must be >= 1");
  check(data.test_size >= 1, "test_size", "must be >= 1");
  check(data.blob_sigma > 0.0, "blob_sigma", "must be > 0");
  check(data.seq_len >= 9, "seq_len", "must be >= 9");
  check(sample.steps >= 1 && sample.steps <= schedule.T, "steps", "must lie in [1, T]");
  check(sample.guidance_scale >= 0.0, "guidance_scale", "must be >= 0");
  check(sample.temperature > 0.0, "temperature", "must be > 0");
  check(pdd_rounds >= 1, "pdd_rounds", "must be >= 1");
  rethrow("T", [&] { schedule.build(); });
}

RunConfig parse_config(const std::string& text, const std::map<std::string, std::string>& overrides) {
  RunConfig c;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(line, "line " + std::to_string(line_no) + " is not of the form key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError(key, "key given more than once");
    apply(c, key, value);
  }
  for (const auto& [key, value] : overrides) {
    apply(c, key, value);
    seen.insert(key);
  }
  for (const char* required : {"task", "seed"}) {
    if (!seen.count(required)) throw ConfigError(required, "required key missing");
  }
  c.train.seed = mix_seed(c.seed, seed_stream::kTrain);
  c.sample.seed = c.seed;
  c.validate();
  return c;
}

std::string render_config(const RunConfig& c) {
  std::string out;
  for (const Field& f : fields()) out += f.name + " = " + f.get(c) + "\n";
  return out;
}

DenoiserSpec denoiser_spec(const RunConfig& c, int classes, int seq_len) {
  DenoiserSpec s;
  s.classes = c.method == Method::kPdd ? classes + 1 : classes;
  s.cond_dim = c.model.cond_dim;
  s.hidden_dim = c.model.hidden_dim;
  s.depth = c.model.depth;
  s.time_embed_dim = c.model.time_embed_dim;
  s.seq_len = seq_len;
  s.heads = c.model.heads;
  s.prediction = c.method == Method::kAdd && c.train.loss_kind == LossKind::kMseNoise
                     ? Prediction::kNoise
                     : Prediction::kLogits;
  return s;
}

EncoderSpec encoder_spec(const RunConfig& c, int feature_dim) {
  EncoderSpec s;
  s.feature_dim = feature_dim;
  s.model_dim = c.model.cond_dim;
  s.layers = c.model.encoder_layers;
  s.ffn_dim = c.model.encoder_ffn_dim;
  s.heads = c.model.encoder_heads;
  s.pooling = c.model.pooling;
  return s;
}

}  // namespace addiff
