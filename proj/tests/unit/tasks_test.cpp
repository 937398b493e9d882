#include "addiff/tasks.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace addiff {
namespace {

namespace fs = std::filesystem;

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "addiff_tasks_test";
  fs::create_directories(dir);
  return dir / name;
}

TEST(Blobs, ClassFrequenciesAreUniform) {
  const BlobTask task = make_blob_task();
  const Dataset d = gen_blobs(task, 100000, 1);
  std::vector<int> counts(10, 0);
  for (int y : d.targets) ++counts.at(y);
  const double sd = std::sqrt(1e5 * 0.1 * 0.9);
  for (int k = 0; k < 10; ++k) EXPECT_LT(std::abs(counts[k] - 1e4), 3 * sd) << "class " << k;
}

TEST(Blobs, Deterministic) {
  const BlobTask task = make_blob_task();
  EXPECT_TRUE(gen_blobs(task, 50, 3) == gen_blobs(task, 50, 3));
  EXPECT_FALSE(gen_blobs(task, 50, 3) == gen_blobs(task, 50, 4));
  const Dataset d = gen_blobs(task, 5, 3);
  EXPECT_EQ(d.features.rows(), 5 * 8);
  EXPECT_EQ(d.features.cols(), 16);
  EXPECT_EQ(d.tokens_per_item, 8);
}

TEST(Blobs, TinySigmaTokensSitOnTheMeans) {
  const BlobTask task = make_blob_task(10, 16, 8, 1e-12);
  const Dataset d = gen_blobs(task, 200, 5);
  for (int i = 0; i < d.size(); ++i) {
    const Matrix x = d.instance(i);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      EXPECT_LT((x.row(r) - task.means.row(d.targets[i])).cwiseAbs().maxCoeff(), 1e-10);
    }
  }
  EXPECT_EQ(bayes_accuracy(task, d), 1.0);
}

TEST(Blobs, IdenticalMeansGiveChance) {
  BlobTask task = make_blob_task(2, 4, 2, 1.0);
  const Dataset d = gen_blobs(task, 20000, 6);
  // Shift class 1 onto class 0 without regenerating the draws: the class
  // label is then independent of the features.
  Dataset shifted = d;
  const RowVector delta = task.means.row(0) - task.means.row(1);
  for (int i = 0; i < d.size(); ++i) {
    if (d.targets[i] == 1) shifted.features.middleRows(i * 2, 2).rowwise() += delta;
  }
  task.means.row(1) = task.means.row(0);
  const double acc = bayes_accuracy(task, shifted);
  EXPECT_NEAR(acc, 0.5, 3 * std::sqrt(0.25 / 20000));
}

// Full Gaussian log-likelihood summed over every token, without the
// mean-distance shortcut.
int loglik_predict(const BlobTask& task, const Matrix& tokens) {
  int best = 0;
  double best_ll = -INFINITY;
  for (int k = 0; k < task.classes; ++k) {
    double ll = 0.0;
    for (Eigen::Index r = 0; r < tokens.rows(); ++r) {
      ll -= (tokens.row(r) - task.means.row(k)).squaredNorm() / (2 * task.sigma * task.sigma);
    }
    if (ll > best_ll) {
      best_ll = ll;
      best = k;
    }
  }
  return best;
}

TEST(Blobs, DefaultOracleAccuracyIsPinned) {
  const BlobTask task = make_blob_task();
  const Dataset d = gen_blobs(task, 100000, 4);
  int correct = 0;
  for (int i = 0; i < d.size(); ++i) correct += loglik_predict(task, d.instance(i)) == d.targets[i];
  const double oracle = correct / 1e5;
  EXPECT_NEAR(bayes_accuracy(task, d), oracle, 1e-12);
  EXPECT_NEAR(oracle, 0.97106, 1e-9);
}

TEST(Blobs, Errors) {
  const BlobTask task = make_blob_task();
  EXPECT_THROW(gen_blobs(task, 0, 1), std::invalid_argument);
  EXPECT_THROW(make_blob_task(10, 16, 8, 0.0), std::invalid_argument);
  EXPECT_THROW(bayes_predict(task, Matrix::Zero(8, 3)), std::invalid_argument);
  EXPECT_THROW(bayes_accuracy(make_blob_task(10, 8), gen_blobs(task, 4, 1)), std::invalid_argument);
  BlobTask dup = task;
  dup.means.row(3) = dup.means.row(2);
  EXPECT_THROW(dup.validate(), std::invalid_argument);
}

std::vector<Surface> all_surfaces() {
  std::vector<Surface> out;
  for (int bits = 0; bits < 8; ++bits) out.push_back(Surface{(bits & 1) != 0, (bits & 2) != 0, (bits & 4) != 0});
  return out;
}

// parse is a left inverse of render, so render is injective.
TEST(Grammar, RenderIsInjectiveOverTheWholeSceneSpace) {
  const GrammarTask task;
  long checked = 0;
  for (long i = 0; i < GrammarTask::scene_count(); ++i) {
    const Scene s = scene_at(i);
    for (const Surface& f : all_surfaces()) {
      const std::vector<int> tokens = render(task, s, f);
      ASSERT_EQ(tokens.size(), 12u);
      const std::optional<Parse> p = parse(task, tokens);
      ASSERT_TRUE(p.has_value()) << to_text(tokens);
      ASSERT_EQ(p->scene, s);
      ASSERT_EQ(p->surface, f);
      ++checked;
    }
  }
  EXPECT_EQ(checked, GrammarTask::scene_count() * 8);
}

TEST(Grammar, ScenesEnumerateWithoutRepeats) {
  EXPECT_EQ(GrammarTask::scene_count(), 12L * 24 * 22 * 24);
  EXPECT_EQ(scene_at(0), (Scene{0, 0, 0, 0}));
  EXPECT_EQ(scene_at(GrammarTask::scene_count() - 1), (Scene{11, 23, 21, 23}));
  EXPECT_THROW(scene_at(-1), std::out_of_range);
  EXPECT_THROW(scene_at(GrammarTask::scene_count()), std::out_of_range);
}

TEST(Grammar, KnownRenderings) {
  const GrammarTask task;
  const Scene s{2, 5, 7, 9};
  const std::vector<int> active = render(task, s, Surface{false, true, false});
  const std::vector<int> expected_active{vocab::kThe, vocab::kFirstAdjective + 2, vocab::kFirstNoun + 5,
                                         vocab::kFirstVerb + 7, vocab::kA, vocab::kFirstNoun + 9,
                                         vocab::kStop, 0, 0, 0, 0, 0};
  EXPECT_EQ(active, expected_active);
  const std::vector<int> passive = render(task, s, Surface{true, false, true});
  const std::vector<int> expected_passive{vocab::kThe, vocab::kFirstNoun + 9, vocab::kWas,
                                          vocab::kFirstVerb + 7, vocab::kBy, vocab::kA,
                                          vocab::kFirstAdjective + 2, vocab::kFirstNoun + 5,
                                          vocab::kStop, 0, 0, 0};
  EXPECT_EQ(passive, expected_passive);
}

TEST(Grammar, GeneratedDataIsValidAndConditionsMatch) {
  const GrammarTask task;
  const Dataset d = gen_grammar(task, 2000, 7);
  EXPECT_EQ(d.classes, GrammarTask::vocab_size());
  EXPECT_EQ(d.feature_dim(), GrammarTask::feature_dim());
  EXPECT_EQ(d.tokens_per_item, 1);
  int passive = 0;
  for (int i = 0; i < d.size(); ++i) {
    const std::span<const int> t = d.target(i);
    ASSERT_TRUE(validity(task, t));
    const Matrix f = d.instance(i);
    const Scene s = scene_from_features(std::span<const double>(f.data(), f.size()));
    EXPECT_TRUE(semantic_match(task, t, s));
    passive += parse(task, t)->surface.passive;
  }
  EXPECT_GT(passive, 800);
  EXPECT_LT(passive, 1200);
  EXPECT_TRUE(gen_grammar(task, 100, 8) == gen_grammar(task, 100, 8));
  EXPECT_THROW(gen_grammar(task, 0, 8), std::invalid_argument);
}

TEST(Grammar, FeaturesRoundTrip) {
  for (long i = 0; i < GrammarTask::scene_count(); i += 997) {
    const Scene s = scene_at(i);
    const RowVector f = scene_features(s);
    EXPECT_EQ(scene_from_features(std::span<const double>(f.data(), f.size())), s);
    EXPECT_EQ((f.array() != 0.0).count(), 4);
    EXPECT_NEAR(f.squaredNorm() / f.size(), 1.0, 1e-12);
  }
  EXPECT_THROW(scene_from_features(std::vector<double>(5)), std::invalid_argument);
}

TEST(Grammar, ShuffledSentencesAreMostlyInvalid) {
  const GrammarTask task;
  const Dataset d = gen_grammar(task, 2000, 9);
  NoiseSource n(10);
  int valid = 0, matching = 0;
  for (int i = 0; i < d.size(); ++i) {
    std::vector<int> t(d.target(i).begin(), d.target(i).end());
    std::shuffle(t.begin(), t.end(), n.engine());
    const Matrix f = d.instance(i);
    valid += validity(task, t);
    matching += semantic_match(task, t, scene_from_features(std::span<const double>(f.data(), f.size())));
  }
  EXPECT_LT(valid, 20);
  EXPECT_LE(matching, valid);
}

TEST(Grammar, InvalidSequences) {
  const GrammarTask task;
  EXPECT_FALSE(validity(task, std::vector<int>(12, vocab::kPad)));
  std::vector<int> t = render(task, Scene{1, 2, 3, 4}, Surface{});
  EXPECT_TRUE(validity(task, t));
  EXPECT_FALSE(semantic_match(task, t, Scene{1, 2, 3, 5}));
  t.push_back(0);
  EXPECT_FALSE(validity(task, t));  // wrong length
  t = render(task, Scene{1, 2, 3, 4}, Surface{});
  t[9] = vocab::kStop;  // trailing junk after the stop
  EXPECT_FALSE(validity(task, t));
  t = render(task, Scene{1, 2, 3, 4}, Surface{});
  std::swap(t[2], t[3]);
  EXPECT_FALSE(validity(task, t));
  t = render(task, Scene{1, 2, 3, 4}, Surface{});
  t[0] = 200;  // outside the vocabulary
  EXPECT_FALSE(validity(task, t));
  EXPECT_THROW(GrammarTask{8}.validate(), std::invalid_argument);
}

TEST(Grammar, LongerSequencesPadFurther) {
  const GrammarTask task{16};
  const std::vector<int> t = render(task, Scene{0, 1, 2, 3}, Surface{true, true, true});
  ASSERT_EQ(t.size(), 16u);
  EXPECT_TRUE(validity(task, t));
  EXPECT_EQ(std::count(t.begin(), t.end(), vocab::kPad), 7);
}

TEST(Grammar, Text) {
  const GrammarTask task;
  const std::string s = to_text(render(task, Scene{0, 0, 0, 1}, Surface{}));
  EXPECT_FALSE(s.empty());
  EXPECT_EQ(s.back(), '.');
}

TEST(DatasetFile, RoundTripsBothTasks) {
  const fs::path p = temp_file("roundtrip.bin");
  for (const Dataset& d : {gen_blobs(make_blob_task(), 37, 11), gen_grammar(GrammarTask{}, 23, 12)}) {
    write_dataset(d, p);
    const Dataset back = read_dataset(p);
    EXPECT_TRUE(back == d);
    EXPECT_EQ(back.task, d.task);
    EXPECT_EQ(back.seed, d.seed);
    EXPECT_EQ(back.sigma, d.sigma);
    EXPECT_EQ(back.task_seed, d.task_seed);
  }
}

TEST(DatasetFile, RejectsCorruptFiles) {
  const fs::path p = temp_file("corrupt.bin");
  write_dataset(gen_blobs(make_blob_task(), 10, 13), p);
  std::string bytes;
  {
    std::ifstream in(p, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::string& content) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << content;
  };
  write(bytes.substr(0, bytes.size() - 5));
  EXPECT_THROW(read_dataset(p), std::runtime_error);
  write(bytes + "x");
  EXPECT_THROW(read_dataset(p), std::runtime_error);
  write("not a dataset\n");
  EXPECT_THROW(read_dataset(p), std::runtime_error);
  std::string bad = bytes;
  bad.replace(bad.find("seed"), 4, "sead");
  write(bad);
  EXPECT_THROW(read_dataset(p), std::runtime_error);
  EXPECT_THROW(read_dataset(temp_file("missing.bin")), std::runtime_error);
}

TEST(TaskKind, Names) {
  EXPECT_EQ(parse_task_kind("blobs"), TaskKind::kBlobs);
  EXPECT_EQ(parse_task_kind(to_string(TaskKind::kGrammar)), TaskKind::kGrammar);
  EXPECT_THROW(parse_task_kind("imagenet"), std::invalid_argument);
}

}  // namespace
}  // namespace addiff
