#include "commands.hpp"

#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "addiff/errors.hpp"
#include "addiff/pdd.hpp"
#include "checksum.hpp"

#ifndef ADDIFF_REVISION
#define ADDIFF_REVISION "unknown"
#endif

namespace addiff::cli {

using nlohmann::json;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out.flush()) throw std::runtime_error("write failed: " + path.string());
  }
  fs::rename(tmp, path);
}

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

TrainingSet training_set(const Dataset& d) {
  return TrainingSet{d.features, d.tokens_per_item, d.targets, d.seq_len};
}

fs::path default_out_dir(const fs::path& config_path, const RunConfig& c) {
  const char* root = std::getenv("ADD_OUTPUT_ROOT");
  const fs::path base = root && *root ? fs::path(root) : fs::path("runs");
  return base / (config_path.stem().string() + "-seed" + std::to_string(c.seed));
}

json report_json(const EvalReport& r, TaskKind task) {
  json j = {{"count", r.count}, {"forward_calls", r.forward_calls}};
  if (task == TaskKind::kBlobs) {
    j["accuracy"] = r.accuracy;
  } else {
    j["validity"] = r.validity;
    j["semantic_match"] = r.semantic_match;
  }
  if (!r.sharpness.empty()) {
    double mean = 0.0;
    for (double s : r.sharpness) mean += s;
    j["mean_sharpness"] = mean / static_cast<double>(r.sharpness.size());
    j["final_sharpness"] = r.final_sharpness;
    j["argmax_stability"] = r.argmax_stability;
    j["sharpness_by_step"] = r.sharpness;
  }
  return j;
}

std::vector<std::vector<double>> rows_of(const Matrix& m) {
  std::vector<std::vector<double>> out(m.rows());
  for (Eigen::Index r = 0; r < m.rows(); ++r) out[r].assign(m.row(r).data(), m.row(r).data() + m.cols());
  return out;
}

}  // namespace

Dataset load_split(const RunConfig& c, bool test) {
  const std::string& file = test ? c.data.test_data : c.data.train_data;
  Dataset d;
  if (!file.empty()) {
    d = read_dataset(file);
    if (d.task != c.task) {
      throw std::invalid_argument(file + " holds a " + to_string(d.task) + " dataset, config task is " +
                                  to_string(c.task));
    }
    return d;
  }
  const std::uint64_t seed = mix_seed(c.seed, test ? seed_stream::kTestData : seed_stream::kTrainData);
  const int n = test ? c.data.test_size : c.data.train_size;
  if (c.task == TaskKind::kBlobs) return gen_blobs(make_blob_task(10, 16, 8, c.data.blob_sigma), n, seed);
  return gen_grammar(GrammarTask{c.data.seq_len}, n, seed);
}

TrainOutcome train_run(const RunConfig& c, const std::string& config_echo, const Dataset& train,
                       const fs::path& out_dir) {
  fs::create_directories(out_dir / "checkpoints");
  const fs::path manifest_path = out_dir / "manifest.json";
  const fs::path metrics_path = out_dir / "metrics.jsonl";
  const fs::path last_good = out_dir / "checkpoints" / "last_good.ckpt";
  const fs::path final_path = out_dir / "final.ckpt";

  json manifest = {
      {"config_echo", config_echo},
      {"config", render_config(c)},
      {"revision", ADDIFF_REVISION},
      {"seed", c.seed},
      {"started", utc_now()},
      {"status", "running"},
      {"outputs",
       {{"metrics", metrics_path.string()},
        {"checkpoints", (out_dir / "checkpoints").string()},
        {"final_checkpoint", final_path.string()}}},
  };
  write_text(manifest_path, manifest.dump(2) + "\n");
  write_text(out_dir / "config.txt", config_echo);

  TrainOutcome outcome;
  std::ofstream metrics(metrics_path, std::ios::trunc);
  const Schedule schedule = c.schedule.build();
  NoiseSource init(mix_seed(c.train.seed, seed_stream::kInit));
  Model model{init_denoiser(denoiser_spec(c, train.classes, train.seq_len), init),
              init_encoder(encoder_spec(c, train.feature_dim()), init)};
  const TrainingSet data = training_set(train);
  const auto start = std::chrono::steady_clock::now();

  TrainHooks hooks;
  hooks.on_step = [&](const StepRecord& r) {
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
    metrics << json{{"step", r.step},
                    {"epoch", r.epoch},
                    {"loss", r.metrics.loss},
                    {"grad_norm", r.metrics.grad_norm},
                    {"lr", r.metrics.lr},
                    {"wall_ms", ms.count()}}
                   .dump()
            << '\n';
  };
  hooks.on_epoch = [&](const EpochRecord& r, const Model& m) {
    metrics.flush();
    if (!m.denoiser.tensors.all_finite() || !m.encoder.tensors.all_finite()) {
      throw NumericalError("non-finite parameters after epoch " + std::to_string(r.epoch));
    }
    const Checkpoint ckpt{c.method, c.task, m, schedule, render_config(c), r.epoch + 1};
    save_checkpoint(ckpt, last_good);
    if (c.checkpoint_every > 0 && (r.epoch + 1) % c.checkpoint_every == 0) {
      std::ostringstream name;
      name << "epoch_" << std::setw(4) << std::setfill('0') << r.epoch + 1 << ".ckpt";
      save_checkpoint(ckpt, out_dir / "checkpoints" / name.str());
    }
  };

  try {
    if (c.method == Method::kPdd) {
      pdd_train(model, data, c.train, hooks);
    } else {
      addiff::train(model, data, c.train, schedule, hooks);
    }
    save_checkpoint(Checkpoint{c.method, c.task, model, schedule, render_config(c), c.train.epochs}, final_path);
    outcome.status = "completed";
    outcome.final_checkpoint = final_path;
    outcome.checksum = sha256_file(final_path);
    manifest["checksums"] = {{"final.ckpt", outcome.checksum}};
  } catch (const NumericalError& e) {
    outcome.exit_code = kDiverged;
    outcome.status = "diverged";
    outcome.error = e.what();
    if (fs::exists(last_good)) manifest["last_good_checkpoint"] = last_good.string();
  }
  metrics.flush();
  manifest["status"] = outcome.status;
  manifest["finished"] = utc_now();
  if (!outcome.error.empty()) manifest["error"] = outcome.error;
  write_text(manifest_path, manifest.dump(2) + "\n");
  return outcome;
}

RunConfig checkpoint_config(const Checkpoint& ckpt) { return parse_config(ckpt.config); }

json eval_record(const Checkpoint& ckpt, const Dataset& data, const EvalOptions& options) {
  const EvalReport r = evaluate(ckpt, data, options);
  json j = {{"method", to_string(ckpt.method)}, {"task", to_string(data.task)}};
  if (ckpt.method == Method::kAdd) {
    j["steps"] = options.sample.steps;
    j["to_one"] = to_string(options.sample.to_one);
    j["renoise_variant"] = to_string(options.sample.renoise_variant);
    j["temperature"] = options.sample.temperature;
    j["seed"] = options.sample.seed;
  } else {
    j["pdd_rounds"] = options.pdd_rounds;
  }
  j["guidance_scale"] = options.sample.guidance_scale;
  j.update(report_json(r, data.task));
  return j;
}

std::vector<json> trace_records(const Checkpoint& ckpt, const Dataset& data, int index,
                                const SampleConfig& config) {
  const SampleResult s = trace_item(ckpt, data, index, config);
  const std::vector<double> sharp = onehot_sharpness(s.trajectory);
  std::vector<json> out;
  for (std::size_t j = 0; j < s.trajectory.steps.size(); ++j) {
    const TrajectoryStep& st = s.trajectory.steps[j];
    out.push_back({{"step", j},
                   {"t", st.t},
                   {"sharpness", sharp[j]},
                   {"argmax", st.argmax},
                   {"probs", rows_of(st.probs)},
                   {"logits", rows_of(st.logits)},
                   {"input", rows_of(st.input)}});
  }
  return out;
}

std::vector<AblationCell> ablation_grid(TaskKind task) {
  std::vector<AblationCell> cells;
  for (LossKind loss : {LossKind::kWeightedCe, LossKind::kUnweightedCe, LossKind::kMseNoise}) {
    for (bool cfg : {true, false}) {
      for (ToOne to_one : {ToOne::kArgmaxOneHot, ToOne::kSoftmaxSample}) {
        AblationCell cell;
        cell.task = task;
        cell.loss_kind = loss;
        cell.cfg = cfg;
        cell.to_one = to_one;
        cell.name = to_string(loss) + (cfg ? "-cfg-" : "-nocfg-") + to_string(to_one);
        cells.push_back(cell);
      }
    }
  }
  AblationCell baseline;
  baseline.name = "pdd-baseline";
  baseline.task = TaskKind::kGrammar;
  baseline.method = Method::kPdd;
  cells.push_back(baseline);
  return cells;
}

json ablate_run(const RunConfig& base, const std::string& config_echo, const fs::path& out_dir,
                int workers, std::ostream& log) {
  fs::create_directories(out_dir);
  write_text(out_dir / "manifest.json",
             json{{"config_echo", config_echo},
                  {"config", render_config(base)},
                  {"revision", ADDIFF_REVISION},
                  {"seed", base.seed},
                  {"started", utc_now()},
                  {"outputs", {{"table", (out_dir / "table.json").string()}}}}
                     .dump(2) +
                 "\n");

  const std::vector<AblationCell> cells = ablation_grid(base.task);
  // Cells that differ only in the sampling rule share one trained model.
  struct Job {
    std::vector<int> cells;
    RunConfig config;
    fs::path dir;
    TrainOutcome outcome;
  };
  std::vector<Job> jobs;
  for (int i = 0; i < static_cast<int>(cells.size()); ++i) {
    const AblationCell& cell = cells[i];
    if (cell.to_one == ToOne::kSoftmaxSample && cell.method == Method::kAdd) {
      jobs.back().cells.push_back(i);
      continue;
    }
    RunConfig c = base;
    c.task = cell.task;
    c.method = cell.method;
    c.train.loss_kind = cell.loss_kind;
    if (!cell.cfg && cell.method == Method::kAdd) c.train.cfg_dropout_prob = 0.0;
    c.train.seed = mix_seed(base.seed, 100 + static_cast<std::uint64_t>(jobs.size()));
    const std::string dir = cell.method == Method::kPdd
                                ? cell.name
                                : to_string(cell.loss_kind) + (cell.cfg ? "-cfg" : "-nocfg");
    jobs.push_back(Job{{i}, c, out_dir / dir, {}});
  }

  std::map<TaskKind, std::pair<Dataset, Dataset>> data;
  for (const Job& j : jobs) {
    if (!data.count(j.config.task)) {
      RunConfig c = base;
      c.task = j.config.task;
      if (c.task != base.task) c.data.train_data = c.data.test_data = "";
      data.emplace(c.task, std::make_pair(load_split(c, false), load_split(c, true)));
    }
  }

  std::mutex log_mutex;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k; (k = next++) < jobs.size();) {
      Job& job = jobs[k];
      try {
        job.outcome = train_run(job.config, config_echo, data.at(job.config.task).first, job.dir);
      } catch (const std::exception& e) {
        job.outcome.exit_code = kFailure;
        job.outcome.status = "failed";
        job.outcome.error = e.what();
      }
      std::lock_guard<std::mutex> lock(log_mutex);
      log << "trained " << job.dir.filename().string() << ": " << job.outcome.status << '\n';
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < std::max(1, workers); ++w) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();

  json table = json::array();
  for (const Job& job : jobs) {
    for (int i : job.cells) {
      const AblationCell& cell = cells[i];
      json row = {{"cell", cell.name},
                  {"task", to_string(cell.task)},
                  {"method", to_string(cell.method)},
                  {"loss_kind", cell.method == Method::kAdd ? to_string(cell.loss_kind) : "masked_ce"},
                  {"cfg", cell.cfg},
                  {"to_one", cell.method == Method::kAdd ? to_string(cell.to_one) : "confidence_unmask"},
                  {"status", job.outcome.status}};
      if (job.outcome.exit_code == kOk) {
        try {
          const Checkpoint ckpt = load_checkpoint(job.outcome.final_checkpoint);
          EvalOptions opt;
          opt.sample = base.sample;
          opt.sample.to_one = cell.to_one;
          opt.sample.guidance_scale = cell.cfg ? base.sample.guidance_scale : 1.0;
          opt.pdd_rounds = base.pdd_rounds;
          row["checksum"] = job.outcome.checksum;
          row.update(eval_record(ckpt, data.at(cell.task).second, opt));
        } catch (const std::exception& e) {
          row["status"] = "failed";
          row["error"] = e.what();
        }
      } else {
        row["error"] = job.outcome.error;
      }
      table.push_back(row);
    }
  }

  std::ostringstream tsv;
  tsv << "cell\ttask\tmethod\tloss_kind\tcfg\tto_one\tstatus\taccuracy\tvalidity\tsemantic_match\tfinal_sharpness\n";
  auto field = [](const json& row, const char* key) -> std::string {
    if (!row.contains(key)) return "-";
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << row.at(key).get<double>();
    return s.str();
  };
  for (const json& row : table) {
    tsv << row["cell"].get<std::string>() << '\t' << row["task"].get<std::string>() << '\t'
        << row["method"].get<std::string>() << '\t' << row["loss_kind"].get<std::string>() << '\t'
        << (row["cfg"].get<bool>() ? "on" : "off") << '\t' << row["to_one"].get<std::string>() << '\t'
        << row["status"].get<std::string>() << '\t' << field(row, "accuracy") << '\t'
        << field(row, "validity") << '\t' << field(row, "semantic_match") << '\t'
        << field(row, "final_sharpness") << '\n';
  }
  write_text(out_dir / "table.json", table.dump(2) + "\n");
  write_text(out_dir / "table.tsv", tsv.str());
  return table;
}

// ---------------------------------------------------------------- CLI

namespace {

struct KeyFlags {
  std::map<std::string, std::string> values;

  void attach(CLI::App* app) {
    for (const std::string& key : config_keys()) {
      app->add_option_function<std::string>(
          "--" + key, [this, key](const std::string& v) { values[key] = v; },
          "override config key " + key);
    }
  }
};

struct SampleFlags {
  std::map<std::string, std::string> values;

  void attach(CLI::App* app) {
    for (const char* key : {"steps", "to_one", "guidance_scale", "renoise_variant", "temperature", "seed",
                            "pdd_rounds"}) {
      const std::string k = key;
      app->add_option_function<std::string>("--" + k, [this, k](const std::string& v) { values[k] = v; },
                                            "sampling override");
    }
  }

  /// Stored run config with the flags applied on top. --seed reseeds
  /// sampling only; the run seed still selects the default test split.
  RunConfig resolve(const Checkpoint& ckpt) const {
    std::map<std::string, std::string> keys = values;
    const auto seed = keys.find("seed");
    std::optional<std::string> sample_seed;
    if (seed != keys.end()) {
      sample_seed = seed->second;
      keys.erase(seed);
    }
    RunConfig c = parse_config(ckpt.config, keys);
    if (sample_seed) {
      const char* end = sample_seed->data() + sample_seed->size();
      auto [ptr, ec] = std::from_chars(sample_seed->data(), end, c.sample.seed);
      if (ec != std::errc() || ptr != end) throw ConfigError("seed", "cannot parse '" + *sample_seed + "'");
    }
    return c;
  }
};

Dataset eval_dataset(const std::string& path, const RunConfig& c) {
  return path.empty() ? load_split(c, true) : read_dataset(path);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Gaussian diffusion over one-hot labels: training, sampling and evaluation", "addiff"};
  app.require_subcommand(1);

  // train
  CLI::App* train_cmd = app.add_subcommand("train", "train a model from a config file");
  std::string config_path, out_dir;
  KeyFlags train_keys;
  train_cmd->add_option("config", config_path, "key = value config file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", out_dir, "run directory (default $ADD_OUTPUT_ROOT/<config>-seed<seed>)");
  train_keys.attach(train_cmd);

  // eval
  CLI::App* eval_cmd = app.add_subcommand("eval", "sample every item of a dataset and score it");
  std::string ckpt_path, dataset_path, record_path;
  int limit = -1;
  SampleFlags eval_flags;
  eval_cmd->add_option("--checkpoint", ckpt_path)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--dataset", dataset_path, "dataset file (default: the run's test split)");
  eval_cmd->add_option("--limit", limit, "evaluate only the first N items");
  eval_cmd->add_option("--out", record_path, "also write the record to this file");
  eval_flags.attach(eval_cmd);

  // trace
  CLI::App* trace_cmd = app.add_subcommand("trace", "dump the per-step trajectory of one item");
  int index = 0;
  std::string trace_path;
  SampleFlags trace_flags;
  trace_cmd->add_option("--checkpoint", ckpt_path)->required()->check(CLI::ExistingFile);
  trace_cmd->add_option("--dataset", dataset_path, "dataset file (default: the run's test split)");
  trace_cmd->add_option("--index", index, "dataset item to trace");
  trace_cmd->add_option("--out", trace_path, "trajectory file (JSON lines)")->required();
  trace_flags.attach(trace_cmd);

  // ablate
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "run the loss x guidance x sampling grid");
  int workers = 1;
  KeyFlags ablate_keys;
  ablate_cmd->add_option("config", config_path)->required()->check(CLI::ExistingFile);
  ablate_cmd->add_option("--out", out_dir, "output directory");
  ablate_cmd->add_option("--workers", workers, "cells trained concurrently")->check(CLI::PositiveNumber);
  ablate_keys.attach(ablate_cmd);

  // dataset gen
  CLI::App* dataset_cmd = app.add_subcommand("dataset", "dataset utilities");
  dataset_cmd->require_subcommand(1);
  CLI::App* gen_cmd = dataset_cmd->add_subcommand("gen", "generate a dataset file");
  std::string task_name, gen_path;
  int count = 0, seq_len = 12;
  std::uint64_t seed = 0;
  double sigma = DataConfig{}.blob_sigma;
  gen_cmd->add_option("--task", task_name)->required()->check(CLI::IsMember({"blobs", "grammar"}));
  gen_cmd->add_option("--count", count)->required()->check(CLI::PositiveNumber);
  gen_cmd->add_option("--seed", seed)->required();
  gen_cmd->add_option("--out", gen_path)->required();
  gen_cmd->add_option("--blob_sigma", sigma);
  gen_cmd->add_option("--seq_len", seq_len);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    // --help exits 0; every other parse failure is a usage error.
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  }

  try {
    if (*train_cmd) {
      const std::string echo = read_text(config_path);
      const RunConfig c = parse_config(echo, train_keys.values);
      const fs::path dir = out_dir.empty() ? default_out_dir(config_path, c) : fs::path(out_dir);
      const TrainOutcome o = train_run(c, echo, load_split(c, false), dir);
      if (o.exit_code == kOk) {
        out << "final checkpoint " << o.final_checkpoint.string() << " sha256 " << o.checksum << '\n';
      } else {
        err << "training " << o.status << ": " << o.error << " (last good checkpoint kept in "
            << (dir / "checkpoints").string() << ")\n";
      }
      return o.exit_code;
    }
    if (*eval_cmd) {
      const Checkpoint ckpt = load_checkpoint(ckpt_path);
      const RunConfig c = eval_flags.resolve(ckpt);
      EvalOptions opt{c.sample, c.pdd_rounds, limit};
      const std::string line = eval_record(ckpt, eval_dataset(dataset_path, c), opt).dump();
      out << line << '\n';
      if (!record_path.empty()) write_text(record_path, line + "\n");
      return kOk;
    }
    if (*trace_cmd) {
      const Checkpoint ckpt = load_checkpoint(ckpt_path);
      const RunConfig c = trace_flags.resolve(ckpt);
      std::string text;
      const std::vector<json> records = trace_records(ckpt, eval_dataset(dataset_path, c), index, c.sample);
      for (const json& r : records) text += r.dump() + "\n";
      write_text(trace_path, text);
      out << records.size() << " steps written to " << trace_path << "; final argmax "
          << json(records.back()["argmax"]).dump() << '\n';
      return kOk;
    }
    if (*ablate_cmd) {
      const std::string echo = read_text(config_path);
      const RunConfig c = parse_config(echo, ablate_keys.values);
      const fs::path dir = out_dir.empty() ? default_out_dir(config_path, c) : fs::path(out_dir);
      const json table = ablate_run(c, echo, dir, workers, out);
      bool all_ok = true;
      for (const json& row : table) all_ok = all_ok && row["status"] == "completed";
      out << "table written to " << (dir / "table.tsv").string() << '\n';
      return all_ok ? kOk : kPartial;
    }
    if (*gen_cmd) {
      const TaskKind task = parse_task_kind(task_name);
      const Dataset d = task == TaskKind::kBlobs ? gen_blobs(make_blob_task(10, 16, 8, sigma), count, seed)
                                                 : gen_grammar(GrammarTask{seq_len}, count, seed);
      write_dataset(d, gen_path);
      out << "wrote " << d.size() << " " << task_name << " items to " << gen_path << '\n';
      return kOk;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}

}  // namespace addiff::cli
