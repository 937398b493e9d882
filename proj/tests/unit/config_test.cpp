#include "addiff/config.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "addiff/checkpoint.hpp"
#include "gradcheck.hpp"

namespace addiff {
namespace {

namespace fs = std::filesystem;

std::string error_key(const std::string& text, const std::map<std::string, std::string>& ov = {}) {
  try {
    parse_config(text, ov);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<no error>";
}

TEST(Config, MinimalFileUsesDefaults) {
  const RunConfig c = parse_config("task = blobs\nseed = 7\n");
  EXPECT_EQ(c.task, TaskKind::kBlobs);
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.method, Method::kAdd);
  EXPECT_EQ(c.train.epochs, TrainConfig{}.epochs);
  EXPECT_EQ(c.sample.steps, 20);
  EXPECT_EQ(c.data.blob_sigma, 2.55);
}

TEST(Config, ParsesValuesCommentsAndOverrides) {
  const std::string text =
      "# a comment\n"
      "task = grammar   # trailing\n"
      "seed = 3\n"
      "\n"
      "method = pdd\n"
      "epochs = 4\n"
      "learning_rate = 0.002\n"
      "kind = cosine\n"
      "loss_kind = unweighted_ce\n"
      "pooling = class_token\n";
  const RunConfig c = parse_config(text, {{"epochs", "9"}, {"guidance_scale", "1.5"}});
  EXPECT_EQ(c.task, TaskKind::kGrammar);
  EXPECT_EQ(c.method, Method::kPdd);
  EXPECT_EQ(c.train.epochs, 9);
  EXPECT_EQ(c.train.learning_rate, 0.002);
  EXPECT_EQ(c.schedule.kind, ScheduleKind::kCosine);
  EXPECT_EQ(c.train.loss_kind, LossKind::kUnweightedCe);
  EXPECT_EQ(c.model.pooling, Pooling::kClassToken);
  EXPECT_EQ(c.sample.guidance_scale, 1.5);
}

TEST(Config, RenderReparsesToTheSameListing) {
  const RunConfig c = parse_config("task = grammar\nseed = 11\nbatch_size = 17\nbeta_max = 0.03\n");
  const std::string listing = render_config(c);
  EXPECT_EQ(render_config(parse_config(listing)), listing);
  for (const std::string& key : config_keys()) {
    EXPECT_NE(listing.find(key + " = "), std::string::npos) << key;
  }
}

TEST(Config, ErrorsNameTheKey) {
  EXPECT_EQ(error_key("seed = 1\n"), "task");
  EXPECT_EQ(error_key("task = blobs\n"), "seed");
  EXPECT_EQ(error_key("task = blobs\nseed = 1\nlearning_rat = 0.1\n"), "learning_rat");
  EXPECT_EQ(error_key("task = blobs\nseed = 1\nepochs = ten\n"), "epochs");
  EXPECT_EQ(error_key("task = blobs\nseed = 1\nepochs = 3.5\n"), "epochs");
  EXPECT_EQ(error_key("task = blobs\nseed = 1\nseed = 2\n"), "seed");
  EXPECT_EQ(error_key("task = mnist\nseed = 1\n"), "task");
  EXPECT_EQ(error_key("task = blobs\nseed = 1\nbeta_max = 1.5\n"), "beta_max");
  EXPECT_EQ(error_key("task = blobs\nseed = 1\nwarmup_epochs = 9\nepochs = 3\n"), "warmup_epochs");
  EXPECT_EQ(error_key("task = blobs\nseed = 1\n", {{"bogus", "1"}}), "bogus");
  EXPECT_EQ(error_key("task = blobs\nseed = 1\nsteps = 0\n"), "steps");
  EXPECT_THROW(parse_config("task blobs\n"), ConfigError);
}

TEST(Config, SpecsFollowTheModelSection) {
  const RunConfig c = parse_config("task = blobs\nseed = 1\nhidden_dim = 48\ncond_dim = 24\n");
  const DenoiserSpec d = denoiser_spec(c, 10, 1);
  EXPECT_EQ(d.hidden_dim, 48);
  EXPECT_EQ(d.cond_dim, 24);
  EXPECT_EQ(d.classes, 10);
  const EncoderSpec e = encoder_spec(c, 16);
  EXPECT_EQ(e.model_dim, 24);
  EXPECT_EQ(e.feature_dim, 16);
}

TEST(Config, MethodNames) {
  EXPECT_EQ(parse_method("add"), Method::kAdd);
  EXPECT_EQ(parse_method(to_string(Method::kPdd)), Method::kPdd);
  EXPECT_THROW(parse_method("ar"), std::invalid_argument);
}

Checkpoint sample_checkpoint() {
  NoiseSource n(1);
  DenoiserSpec d;
  d.classes = 5;
  d.seq_len = 3;
  d.hidden_dim = 8;
  d.heads = 2;
  d.cond_dim = 4;
  d.time_embed_dim = 4;
  EncoderSpec e;
  e.feature_dim = 6;
  e.model_dim = 4;
  Checkpoint c{Method::kAdd, TaskKind::kGrammar, Model{init_denoiser(d, n), init_encoder(e, n)},
               Schedule::build(ScheduleKind::kCosine, 100, 1e-4, 0.02), "task = grammar\nseed = 5\n", 3};
  for (std::size_t i = 0; i < c.model.denoiser.tensors.size(); ++i) {
    Matrix& m = c.model.denoiser.tensors[i];
    m = testing::random_matrix(m.rows(), m.cols(), n);
  }
  return c;
}

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "addiff_config_test";
  fs::create_directories(dir);
  return dir / name;
}

TEST(Checkpoint, RoundTripIsExact) {
  const Checkpoint c = sample_checkpoint();
  const fs::path p = temp_path("a.ckpt");
  save_checkpoint(c, p);
  const Checkpoint back = load_checkpoint(p);
  EXPECT_EQ(back.method, c.method);
  EXPECT_EQ(back.task, c.task);
  EXPECT_EQ(back.epoch, 3);
  EXPECT_EQ(back.config, c.config);
  EXPECT_EQ(back.model.denoiser.spec, c.model.denoiser.spec);
  EXPECT_EQ(back.model.encoder.spec, c.model.encoder.spec);
  EXPECT_EQ(back.schedule.horizon(), 100);
  EXPECT_EQ(back.schedule.kind(), ScheduleKind::kCosine);
  for (int t = 0; t <= 100; ++t) EXPECT_EQ(back.schedule.alpha_bar(t), c.schedule.alpha_bar(t));
  ASSERT_EQ(back.model.denoiser.tensors.size(), c.model.denoiser.tensors.size());
  for (std::size_t i = 0; i < c.model.denoiser.tensors.size(); ++i) {
    EXPECT_EQ(back.model.denoiser.tensors.name(i), c.model.denoiser.tensors.name(i));
    EXPECT_TRUE(back.model.denoiser.tensors[i] == c.model.denoiser.tensors[i]);
  }
  for (std::size_t i = 0; i < c.model.encoder.tensors.size(); ++i) {
    EXPECT_TRUE(back.model.encoder.tensors[i] == c.model.encoder.tensors[i]);
  }
  // Saving what was loaded reproduces the file byte for byte.
  const fs::path q = temp_path("b.ckpt");
  save_checkpoint(back, q);
  std::ifstream a(p, std::ios::binary), b(q, std::ios::binary);
  EXPECT_EQ(std::string(std::istreambuf_iterator<char>(a), {}), std::string(std::istreambuf_iterator<char>(b), {}));
}

TEST(Checkpoint, RejectsDamagedFiles) {
  const fs::path p = temp_path("c.ckpt");
  save_checkpoint(sample_checkpoint(), p);
  std::string bytes;
  {
    std::ifstream in(p, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::string& content) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << content;
  };
  write(bytes.substr(0, bytes.size() - 8));
  EXPECT_THROW(load_checkpoint(p), std::runtime_error);
  write("XXXXXXXX" + bytes.substr(8));
  EXPECT_THROW(load_checkpoint(p), std::runtime_error);
  std::string v = bytes;
  v[8] = 9;
  write(v);
  EXPECT_THROW(load_checkpoint(p), std::runtime_error);
  write(bytes.substr(0, 30));
  EXPECT_THROW(load_checkpoint(p), std::runtime_error);
  std::string h = bytes;
  h[20] = '[';  // first byte of the JSON header
  write(h);
  EXPECT_THROW(load_checkpoint(p), std::runtime_error);
  write(bytes + "extra");
  EXPECT_THROW(load_checkpoint(p), std::runtime_error);
  EXPECT_THROW(load_checkpoint(temp_path("none.ckpt")), std::runtime_error);
}

}  // namespace
}  // namespace addiff
