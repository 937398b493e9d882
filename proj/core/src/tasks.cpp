#include "addiff/tasks.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace addiff {

namespace {

constexpr const char* kAdjectiveWords[vocab::kAdjectives] = {
    "red", "small", "old", "happy", "quiet", "brave", "tall", "lazy", "clever", "young", "green",
    "angry"};
constexpr const char* kNounWords[vocab::kNouns] = {
    "dog",   "cat",   "bird",  "horse", "child", "farmer", "teacher", "doctor",
    "sailor", "king", "queen", "fox",   "wolf",  "bear",   "rabbit",  "mouse",
    "pilot", "baker", "nurse", "clown", "tiger", "lion",   "goat",    "owl"};
constexpr const char* kVerbWords[vocab::kVerbs] = {
    "chased", "pushed", "watched", "followed", "helped", "painted", "called", "carried",
    "lifted", "kicked", "pulled", "visited",  "greeted", "guarded", "hugged", "washed",
    "fed",    "found",  "held",   "caught",   "met",     "taught"};

bool is_adjective(int t) { return t >= vocab::kFirstAdjective && t < vocab::kFirstNoun; }
bool is_noun(int t) { return t >= vocab::kFirstNoun && t < vocab::kFirstVerb; }
bool is_verb(int t) { return t >= vocab::kFirstVerb && t < vocab::kSize; }
bool is_det(int t) { return t == vocab::kThe || t == vocab::kA; }
int det(bool definite) { return definite ? vocab::kThe : vocab::kA; }

constexpr char kDatasetMagic[] = "addiff-dataset";
constexpr int kDatasetVersion = 1;

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("dataset: truncated record data");
  return value;
}

}  // namespace

// ---------------------------------------------------------------- blobs

void BlobTask::validate() const {
  if (classes < 2 || dim < 1 || tokens < 1) throw std::invalid_argument("blob task: bad dims");
  if (!(sigma > 0.0)) throw std::invalid_argument("blob task: sigma must be positive");
  if (means.rows() != classes || means.cols() != dim) {
    throw std::invalid_argument("blob task: means must be classes x dim");
  }
  for (int a = 0; a < classes; ++a) {
    for (int b = a + 1; b < classes; ++b) {
      if (means.row(a) == means.row(b)) throw std::invalid_argument("blob task: duplicate class means");
    }
  }
}

BlobTask make_blob_task(int classes, int dim, int tokens, double sigma, std::uint64_t task_seed) {
  BlobTask task{classes, dim, tokens, sigma, task_seed, Matrix(classes, dim)};
  NoiseSource noise(task_seed);
  for (int k = 0; k < classes; ++k) {
    for (int j = 0; j < dim; ++j) task.means(k, j) = noise.normal();
  }
  task.validate();
  return task;
}

Dataset gen_blobs(const BlobTask& task, int n, std::uint64_t seed) {
  task.validate();
  if (n < 1) throw std::invalid_argument("gen_blobs: n must be >= 1");
  Dataset d;
  d.task = TaskKind::kBlobs;
  d.seed = seed;
  d.classes = task.classes;
  d.seq_len = 1;
  d.tokens_per_item = task.tokens;
  d.sigma = task.sigma;
  d.task_seed = task.task_seed;
  d.features.resize(static_cast<Eigen::Index>(n) * task.tokens, task.dim);
  d.targets.resize(n);
  NoiseSource noise(seed);
  for (int i = 0; i < n; ++i) {
    const int k = noise.uniform_int(0, task.classes - 1);
    d.targets[i] = k;
    for (int l = 0; l < task.tokens; ++l) {
      const Eigen::Index row = static_cast<Eigen::Index>(i) * task.tokens + l;
      for (int j = 0; j < task.dim; ++j) d.features(row, j) = task.means(k, j) + task.sigma * noise.normal();
    }
  }
  return d;
}

int bayes_predict(const BlobTask& task, const Matrix& tokens) {
  if (tokens.cols() != task.dim) throw std::invalid_argument("bayes_predict: feature dim mismatch");
  // Equal isotropic covariances: the log-likelihood ranks classes by the
  // squared distance of the token mean to each class mean.
  const RowVector mean = tokens.colwise().mean();
  int best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (int k = 0; k < task.classes; ++k) {
    const double dist = (mean - task.means.row(k)).squaredNorm();
    if (dist < best_dist) {
      best_dist = dist;
      best = k;
    }
  }
  return best;
}

double bayes_accuracy(const BlobTask& task, const Dataset& data) {
  if (data.feature_dim() != task.dim || data.tokens_per_item != task.tokens ||
      data.classes != task.classes || data.seq_len != 1) {
    throw std::invalid_argument("bayes_accuracy: dataset does not match the task");
  }
  int correct = 0;
  for (int i = 0; i < data.size(); ++i) correct += bayes_predict(task, data.instance(i)) == data.targets[i];
  return data.size() > 0 ? static_cast<double>(correct) / data.size() : 0.0;
}

// ---------------------------------------------------------------- grammar

void GrammarTask::validate() const {
  if (seq_len < 9) throw std::invalid_argument("grammar task: seq_len must be >= 9");
}

std::vector<int> render(const GrammarTask& task, const Scene& s, const Surface& f) {
  task.validate();
  const int adj = vocab::kFirstAdjective + s.adjective;
  const int subj = vocab::kFirstNoun + s.subject;
  const int verb = vocab::kFirstVerb + s.verb;
  const int obj = vocab::kFirstNoun + s.object;
  std::vector<int> out;
  if (f.passive) {
    out = {det(f.object_definite), obj, vocab::kWas, verb, vocab::kBy, det(f.subject_definite), adj,
           subj, vocab::kStop};
  } else {
    out = {det(f.subject_definite), adj, subj, verb, det(f.object_definite), obj, vocab::kStop};
  }
  out.resize(task.seq_len, vocab::kPad);
  return out;
}

std::optional<Parse> parse(const GrammarTask& task, std::span<const int> t) {
  if (static_cast<int>(t.size()) != task.seq_len) return std::nullopt;
  auto padded_from = [&](int start) {
    for (int i = start; i < task.seq_len; ++i) {
      if (t[i] != vocab::kPad) return false;
    }
    return true;
  };
  Parse p;
  if (is_det(t[0]) && is_adjective(t[1]) && is_noun(t[2]) && is_verb(t[3]) && is_det(t[4]) &&
      is_noun(t[5]) && t[6] == vocab::kStop && padded_from(7)) {
    p.surface = {false, t[0] == vocab::kThe, t[4] == vocab::kThe};
    p.scene = {t[1] - vocab::kFirstAdjective, t[2] - vocab::kFirstNoun, t[3] - vocab::kFirstVerb,
               t[5] - vocab::kFirstNoun};
    return p;
  }
  if (is_det(t[0]) && is_noun(t[1]) && t[2] == vocab::kWas && is_verb(t[3]) && t[4] == vocab::kBy &&
      is_det(t[5]) && is_adjective(t[6]) && is_noun(t[7]) && t[8] == vocab::kStop && padded_from(9)) {
    p.surface = {true, t[5] == vocab::kThe, t[0] == vocab::kThe};
    p.scene = {t[6] - vocab::kFirstAdjective, t[7] - vocab::kFirstNoun, t[3] - vocab::kFirstVerb,
               t[1] - vocab::kFirstNoun};
    return p;
  }
  return std::nullopt;
}

bool validity(const GrammarTask& task, std::span<const int> tokens) {
  return parse(task, tokens).has_value();
}

bool semantic_match(const GrammarTask& task, std::span<const int> tokens, const Scene& scene) {
  const std::optional<Parse> p = parse(task, tokens);
  return p && p->scene == scene;
}

RowVector scene_features(const Scene& s) {
  RowVector f = RowVector::Zero(GrammarTask::feature_dim());
  int offset = 0;
  f(offset + s.adjective) = kSceneFeatureHeight;
  offset += vocab::kAdjectives;
  f(offset + s.subject) = kSceneFeatureHeight;
  offset += vocab::kNouns;
  f(offset + s.verb) = kSceneFeatureHeight;
  offset += vocab::kVerbs;
  f(offset + s.object) = kSceneFeatureHeight;
  return f;
}

Scene scene_from_features(std::span<const double> f) {
  if (static_cast<int>(f.size()) != GrammarTask::feature_dim()) {
    throw std::invalid_argument("scene_from_features: wrong width");
  }
  auto slot = [&](int offset, int width) {
    int best = 0;
    for (int i = 1; i < width; ++i) {
      if (f[offset + i] > f[offset + best]) best = i;
    }
    return best;
  };
  Scene s;
  int offset = 0;
  s.adjective = slot(offset, vocab::kAdjectives);
  offset += vocab::kAdjectives;
  s.subject = slot(offset, vocab::kNouns);
  offset += vocab::kNouns;
  s.verb = slot(offset, vocab::kVerbs);
  offset += vocab::kVerbs;
  s.object = slot(offset, vocab::kNouns);
  return s;
}

Scene scene_at(long index) {
  if (index < 0 || index >= GrammarTask::scene_count()) throw std::out_of_range("scene_at");
  Scene s;
  s.object = static_cast<int>(index % vocab::kNouns);
  index /= vocab::kNouns;
  s.verb = static_cast<int>(index % vocab::kVerbs);
  index /= vocab::kVerbs;
  s.subject = static_cast<int>(index % vocab::kNouns);
  index /= vocab::kNouns;
  s.adjective = static_cast<int>(index);
  return s;
}

std::string to_text(std::span<const int> tokens) {
  std::string out;
  for (int t : tokens) {
    if (t == vocab::kPad) continue;
    std::string word;
    if (t == vocab::kStop) word = ".";
    else if (t == vocab::kThe) word = "the";
    else if (t == vocab::kA) word = "a";
    else if (t == vocab::kWas) word = "was";
    else if (t == vocab::kBy) word = "by";
    else if (is_adjective(t)) word = kAdjectiveWords[t - vocab::kFirstAdjective];
    else if (is_noun(t)) word = kNounWords[t - vocab::kFirstNoun];
    else if (is_verb(t)) word = kVerbWords[t - vocab::kFirstVerb];
    else word = "<" + std::to_string(t) + ">";
    if (!out.empty() && word != ".") out += ' ';
    out += word;
  }
  return out;
}

Dataset gen_grammar(const GrammarTask& task, int n, std::uint64_t seed) {
  task.validate();
  if (n < 1) throw std::invalid_argument("gen_grammar: n must be >= 1");
  Dataset d;
  d.task = TaskKind::kGrammar;
  d.seed = seed;
  d.classes = GrammarTask::vocab_size();
  d.seq_len = task.seq_len;
  d.tokens_per_item = 1;
  d.features.resize(n, GrammarTask::feature_dim());
  d.targets.reserve(static_cast<std::size_t>(n) * task.seq_len);
  NoiseSource noise(seed);
  for (int i = 0; i < n; ++i) {
    Scene s;
    s.adjective = noise.uniform_int(0, vocab::kAdjectives - 1);
    s.subject = noise.uniform_int(0, vocab::kNouns - 1);
    s.verb = noise.uniform_int(0, vocab::kVerbs - 1);
    s.object = noise.uniform_int(0, vocab::kNouns - 1);
    Surface f;
    f.passive = noise.bernoulli(0.5);
    f.subject_definite = noise.bernoulli(0.5);
    f.object_definite = noise.bernoulli(0.5);
    d.features.row(i) = scene_features(s);
    const std::vector<int> seq = render(task, s, f);
    d.targets.insert(d.targets.end(), seq.begin(), seq.end());
  }
  return d;
}

// ---------------------------------------------------------------- storage

std::string to_string(TaskKind k) { return k == TaskKind::kBlobs ? "blobs" : "grammar"; }

TaskKind parse_task_kind(const std::string& name) {
  if (name == "blobs") return TaskKind::kBlobs;
  if (name == "grammar") return TaskKind::kGrammar;
  throw std::invalid_argument("unknown task '" + name + "' (expected blobs or grammar)");
}

Matrix Dataset::instance(int i) const {
  return features.middleRows(static_cast<Eigen::Index>(i) * tokens_per_item, tokens_per_item);
}

std::span<const int> Dataset::target(int i) const {
  return std::span<const int>(targets).subspan(static_cast<std::size_t>(i) * seq_len, seq_len);
}

bool operator==(const Dataset& a, const Dataset& b) {
  return a.task == b.task && a.seed == b.seed && a.classes == b.classes && a.seq_len == b.seq_len &&
         a.tokens_per_item == b.tokens_per_item && a.sigma == b.sigma &&
         a.task_seed == b.task_seed && a.features.rows() == b.features.rows() &&
         a.features.cols() == b.features.cols() && a.features == b.features &&
         a.targets == b.targets;
}

void write_dataset(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  std::ostringstream sigma;
  sigma.precision(17);
  sigma << d.sigma;
  out << kDatasetMagic << ' ' << kDatasetVersion << '\n'
      << "task " << to_string(d.task) << '\n'
      << "count " << d.size() << '\n'
      << "seed " << d.seed << '\n'
      << "classes " << d.classes << '\n'
      << "seq_len " << d.seq_len << '\n'
      << "tokens_per_item " << d.tokens_per_item << '\n'
      << "feature_dim " << d.feature_dim() << '\n'
      << "sigma " << sigma.str() << '\n'
      << "task_seed " << d.task_seed << '\n'
      << "end\n";
  for (int i = 0; i < d.size(); ++i) {
    const Matrix x = d.instance(i);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      for (Eigen::Index c = 0; c < x.cols(); ++c) put_le<double>(out, x(r, c));
    }
    for (int t : d.target(i)) put_le<std::int32_t>(out, t);
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != kDatasetMagic || version != kDatasetVersion) {
    throw std::runtime_error(path.string() + " is not a version-1 dataset file");
  }
  Dataset d;
  long count = -1, feature_dim = -1;
  std::string key;
  while (in >> key && key != "end") {
    if (key == "task") {
      std::string v;
      in >> v;
      d.task = parse_task_kind(v);
    } else if (key == "count") in >> count;
    else if (key == "seed") in >> d.seed;
    else if (key == "classes") in >> d.classes;
    else if (key == "seq_len") in >> d.seq_len;
    else if (key == "tokens_per_item") in >> d.tokens_per_item;
    else if (key == "feature_dim") in >> feature_dim;
    else if (key == "sigma") in >> d.sigma;
    else if (key == "task_seed") in >> d.task_seed;
    else throw std::runtime_error("dataset header: unknown field '" + key + "'");
    if (!in) throw std::runtime_error("dataset header: bad value for '" + key + "'");
  }
  if (key != "end" || in.get() != '\n') throw std::runtime_error("dataset header: missing end line");
  if (count < 0 || feature_dim < 1 || d.seq_len < 1 || d.tokens_per_item < 1 || d.classes < 1) {
    throw std::runtime_error("dataset header: incomplete");
  }
  d.features.resize(count * d.tokens_per_item, feature_dim);
  d.targets.resize(static_cast<std::size_t>(count) * d.seq_len);
  for (long i = 0; i < count; ++i) {
    for (int r = 0; r < d.tokens_per_item; ++r) {
      for (long c = 0; c < feature_dim; ++c) d.features(i * d.tokens_per_item + r, c) = get_le<double>(in);
    }
    for (int j = 0; j < d.seq_len; ++j) {
      const int t = get_le<std::int32_t>(in);
      if (t < 0 || t >= d.classes) throw std::runtime_error("dataset: target out of range");
      d.targets[static_cast<std::size_t>(i) * d.seq_len + j] = t;
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw std::runtime_error("dataset: trailing bytes");
  return d;
}

}  // namespace addiff
