#include "addiff/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace addiff {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'A', 'D', 'D', 'C', 'K', 'P', 'T', '\0'};

static_assert(std::endian::native == std::endian::little, "little-endian host required");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated");
  return v;
}

json denoiser_json(const DenoiserSpec& s) {
  return {{"classes", s.classes},         {"cond_dim", s.cond_dim},
          {"hidden_dim", s.hidden_dim},   {"depth", s.depth},
          {"time_embed_dim", s.time_embed_dim}, {"seq_len", s.seq_len},
          {"heads", s.heads},             {"prediction", to_string(s.prediction)}};
}

DenoiserSpec denoiser_from(const json& j) {
  DenoiserSpec s;
  s.classes = j.at("classes");
  s.cond_dim = j.at("cond_dim");
  s.hidden_dim = j.at("hidden_dim");
  s.depth = j.at("depth");
  s.time_embed_dim = j.at("time_embed_dim");
  s.seq_len = j.at("seq_len");
  s.heads = j.at("heads");
  s.prediction = parse_prediction(j.at("prediction"));
  s.validate();
  return s;
}

json encoder_json(const EncoderSpec& s) {
  return {{"feature_dim", s.feature_dim}, {"model_dim", s.model_dim}, {"layers", s.layers},
          {"ffn_dim", s.ffn_dim},         {"heads", s.heads},         {"pooling", to_string(s.pooling)}};
}

EncoderSpec encoder_from(const json& j) {
  EncoderSpec s;
  s.feature_dim = j.at("feature_dim");
  s.model_dim = j.at("model_dim");
  s.layers = j.at("layers");
  s.ffn_dim = j.at("ffn_dim");
  s.heads = j.at("heads");
  s.pooling = parse_pooling(j.at("pooling"));
  s.validate();
  return s;
}

void write_matrix(std::ostream& out, const Matrix& m) {
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

}  // namespace

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  json dir = json::array();
  auto list = [&](const std::string& prefix, const ParamSet& p) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      dir.push_back({{"name", prefix + p.name(i)}, {"rows", p[i].rows()}, {"cols", p[i].cols()}});
    }
  };
  list("denoiser.", c.model.denoiser.tensors);
  list("encoder.", c.model.encoder.tensors);
  const std::span<const double> abar = c.schedule.alpha_bars();
  dir.push_back({{"name", "schedule.alpha_bar"}, {"rows", 1}, {"cols", abar.size()}});

  json header = {
      {"method", to_string(c.method)},
      {"task", to_string(c.task)},
      {"epoch", c.epoch},
      {"denoiser", denoiser_json(c.model.denoiser.spec)},
      {"encoder", encoder_json(c.model.encoder.spec)},
      {"schedule",
       {{"kind", to_string(c.schedule.kind())},
        {"T", c.schedule.horizon()},
        {"beta_min", c.schedule.beta_min()},
        {"beta_max", c.schedule.beta_max()}}},
      {"config", c.config},
      {"tensors", dir},
  };
  const std::string text = header.dump();

  // Written beside the target and renamed, so a reader never sees a partial file.
  std::filesystem::path tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (std::size_t i = 0; i < c.model.denoiser.tensors.size(); ++i) write_matrix(out, c.model.denoiser.tensors[i]);
    for (std::size_t i = 0; i < c.model.encoder.tensors.size(); ++i) write_matrix(out, c.model.encoder.tensors[i]);
    out.write(reinterpret_cast<const char*>(abar.data()), static_cast<std::streamsize>(abar.size() * sizeof(double)));
    out.flush();
    if (!out) throw std::runtime_error("checkpoint write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

namespace {

Checkpoint load_unchecked(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error(path.string() + " is not a checkpoint");
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  const auto length = get<std::uint64_t>(in);
  if (length > (1u << 28)) throw std::runtime_error("checkpoint: implausible header length");
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw std::runtime_error("checkpoint: truncated header");
  const json header = json::parse(text);

  Checkpoint c{parse_method(header.at("method")),
               parse_task_kind(header.at("task")),
               {},
               Schedule::build(ScheduleKind::kLinear, 1, 0.5, 0.5),
               header.at("config"),
               header.at("epoch")};
  c.model.denoiser.spec = denoiser_from(header.at("denoiser"));
  c.model.encoder.spec = encoder_from(header.at("encoder"));

  std::vector<double> abar;
  for (const json& t : header.at("tensors")) {
    const std::string name = t.at("name");
    const long rows = t.at("rows"), cols = t.at("cols");
    if (rows < 0 || cols < 0 || rows * cols > (1L << 28)) throw std::runtime_error("checkpoint: bad shape for " + name);
    Matrix m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated tensor " + name);
    if (name.rfind("denoiser.", 0) == 0) {
      c.model.denoiser.tensors.add(name.substr(9), std::move(m));
    } else if (name.rfind("encoder.", 0) == 0) {
      c.model.encoder.tensors.add(name.substr(8), std::move(m));
    } else if (name == "schedule.alpha_bar") {
      abar.assign(m.data(), m.data() + m.size());
    } else {
      throw std::runtime_error("checkpoint: unknown tensor " + name);
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw std::runtime_error("checkpoint: trailing bytes");

  const json& s = header.at("schedule");
  if (static_cast<int>(abar.size()) != static_cast<int>(s.at("T")) + 1) {
    throw std::runtime_error("checkpoint: alpha-bar table does not match T");
  }
  c.schedule = Schedule::from_alpha_bars(parse_schedule_kind(s.at("kind")), s.at("beta_min"),
                                         s.at("beta_max"), std::move(abar));

  // Shapes must agree with what the specs would build.
  NoiseSource scratch(0);
  const ParamSet d_ref = init_denoiser(c.model.denoiser.spec, scratch).tensors;
  const ParamSet e_ref = init_encoder(c.model.encoder.spec, scratch).tensors;
  auto same_layout = [](const ParamSet& a, const ParamSet& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a.name(i) != b.name(i) || a[i].rows() != b[i].rows() || a[i].cols() != b[i].cols()) return false;
    }
    return true;
  };
  if (!same_layout(c.model.denoiser.tensors, d_ref) || !same_layout(c.model.encoder.tensors, e_ref)) {
    throw std::runtime_error("checkpoint: tensors do not match the stored specs");
  }
  if (c.model.encoder.spec.model_dim != c.model.denoiser.spec.cond_dim) {
    throw std::runtime_error("checkpoint: encoder width differs from the denoiser condition width");
  }
  return c;
}

}  // namespace

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return load_unchecked(path);
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint: malformed header in " + path.string() + ": " + e.what());
  }
}

}  // namespace addiff
