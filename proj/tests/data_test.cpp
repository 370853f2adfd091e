#include "unitslu/data.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "unitslu/quantizer.hpp"

namespace unitslu {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / name) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string operator/(const std::string& leaf) const { return (path_ / leaf).string(); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

FeatureIoErrorCode read_error(const std::string& path) {
  try {
    read_features(path);
  } catch (const FeatureIoError& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error reading " << path;
  return FeatureIoErrorCode::kIo;
}

TEST(Features, RoundTripIsBitExact) {
  TempDir dir("unitslu_features_test");
  std::mt19937_64 rng(1);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  FeatureMatrix m(7, 5);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  m(0, 0) = -0.0f;
  write_features(dir / "a.uftm", m);
  const FeatureMatrix back = read_features(dir / "a.uftm");
  ASSERT_EQ(back.rows(), 7);
  ASSERT_EQ(back.cols(), 5);
  EXPECT_EQ(std::memcmp(back.data(), m.data(), sizeof(float) * 35), 0);
  write_features(dir / "b.uftm", back);
  EXPECT_EQ(read_bytes(dir / "a.uftm"), read_bytes(dir / "b.uftm"));
  EXPECT_EQ(read_bytes(dir / "a.uftm").size(), 16u + 4u * 35u);
}

TEST(Features, DistinctErrorCodes) {
  TempDir dir("unitslu_features_err_test");
  FeatureMatrix m = FeatureMatrix::Ones(10, 3);
  write_features(dir / "ok.uftm", m);
  const std::string bytes = read_bytes(dir / "ok.uftm");

  std::string magic = bytes;
  magic[1] = 'X';
  write_text(dir / "magic.uftm", magic);
  EXPECT_EQ(read_error(dir / "magic.uftm"), FeatureIoErrorCode::kBadMagic);

  // Header says 10 frames, payload holds 9.
  write_text(dir / "short.uftm", bytes.substr(0, bytes.size() - 12));
  EXPECT_EQ(read_error(dir / "short.uftm"), FeatureIoErrorCode::kTruncated);

  write_text(dir / "long.uftm", bytes + std::string(12, '\0'));
  EXPECT_EQ(read_error(dir / "long.uftm"), FeatureIoErrorCode::kShapeMismatch);

  write_text(dir / "header.uftm", bytes.substr(0, 9));
  EXPECT_EQ(read_error(dir / "header.uftm"), FeatureIoErrorCode::kTruncated);

  std::string version = bytes;
  version[4] = 9;
  write_text(dir / "version.uftm", version);
  EXPECT_EQ(read_error(dir / "version.uftm"), FeatureIoErrorCode::kBadVersion);

  EXPECT_EQ(read_error(dir / "missing.uftm"), FeatureIoErrorCode::kIo);
}

TEST(Manifest, EmptyFileAndOrder) {
  TempDir dir("unitslu_manifest_test");
  write_text(dir / "empty.jsonl", "");
  EXPECT_EQ(load_manifest(dir / "empty.jsonl").size(), 0u);

  write_text(dir / "three.jsonl",
             R"({"id":"c","features":"c.uftm","task":"SNER","target":"B-city boston"}
{"id":"a","features":"a.uftm","task":"ICSF","target":"<INT:f> <INT:f>","transcript":"to boston"}

{"id":"b","features":"/abs/b.uftm","wav":"b.wav","task":"SSP","target":"[ IN:A ]","units":[3,1,4]}
)");
  const Manifest m = load_manifest(dir / "three.jsonl");
  ASSERT_EQ(m.size(), 3u);
  EXPECT_EQ(m.records[0].id, "c");
  EXPECT_EQ(m.records[1].id, "a");
  EXPECT_EQ(m.records[2].id, "b");
  EXPECT_EQ(m.records[0].annotation, SluRecord::sner({{"city", {"boston"}}}));
  EXPECT_EQ(*m.records[1].transcript, (std::vector<std::string>{"to", "boston"}));
  EXPECT_EQ(*m.records[2].units, (UnitSequence{3, 1, 4}));
  EXPECT_EQ(*m.records[2].wav, "b.wav");
  EXPECT_EQ(m.resolve("c.uftm"), dir / "c.uftm");
  EXPECT_EQ(m.resolve("/abs/b.uftm"), "/abs/b.uftm");

  save_manifest(m, dir / "again.jsonl");
  const Manifest again = load_manifest(dir / "again.jsonl");
  ASSERT_EQ(again.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(again.records[i].annotation, m.records[i].annotation);
    EXPECT_EQ(again.records[i].features, m.records[i].features);
  }
}

TEST(Manifest, Errors) {
  TempDir dir("unitslu_manifest_err_test");
  auto message = [&](const std::string& text) -> std::string {
    write_text(dir / "m.jsonl", text);
    try {
      load_manifest(dir / "m.jsonl");
    } catch (const std::runtime_error& e) {
      return e.what();
    }
    return "";
  };
  const std::string line = R"({"id":"x","features":"x.uftm","task":"SNER","target":"B-a b"})";
  EXPECT_NE(message(line + "\n" + line + "\n").find("duplicate id 'x'"), std::string::npos);
  EXPECT_NE(message(line + "\n{not json\n").find("line 2"), std::string::npos);
  EXPECT_NE(message(R"({"id":"y","task":"SNER","target":""})").find("line 1"), std::string::npos);
  EXPECT_NE(message(R"({"id":"y","features":"f","task":"SNER","target":"I-a b"})")
                .find("repair"),
            std::string::npos);
  EXPECT_NE(message(R"({"id":"y","features":"f","task":"XYZ","target":""})"), "");
  EXPECT_THROW(load_manifest(dir / "missing.jsonl"), std::runtime_error);
}

TEST(Manifest, MissingFeatureFileIsReportedLazily) {
  TempDir dir("unitslu_manifest_lazy_test");
  write_text(dir / "m.jsonl", R"({"id":"x","features":"nope.uftm","task":"SNER","target":"B-a b"})");
  const Manifest m = load_manifest(dir / "m.jsonl");
  try {
    load_dataset(m);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("nope.uftm"), std::string::npos);
  }
}

SynthConfig small_config(Task task, double sigma = 0.05) {
  SynthConfig c;
  c.task = task;
  c.sigma = sigma;
  c.size = 60;
  c.seed = 3;
  return c;
}

TEST(Synthetic, DeterministicAndValid) {
  for (Task task : {Task::kSner, Task::kIcsf, Task::kSsp}) {
    const SyntheticCorpus a = generate_synthetic(small_config(task));
    const SyntheticCorpus b = generate_synthetic(small_config(task));
    ASSERT_EQ(a.utterances.size(), 60u);
    EXPECT_TRUE(a.anchors == b.anchors);
    for (std::size_t i = 0; i < a.utterances.size(); ++i) {
      const auto& u = a.utterances[i];
      EXPECT_TRUE(u.features == b.utterances[i].features);
      EXPECT_EQ(u.record, b.utterances[i].record);
      const auto tokens = serialize_target(u.record);
      const auto parsed = parse_target(task, tokens);
      EXPECT_TRUE(parsed.warnings.empty());
      EXPECT_EQ(parsed.record, u.record);
      EXPECT_EQ(deduplicate(u.units), u.units);
      EXPECT_EQ(static_cast<std::size_t>(u.features.rows()), u.frame_phones.size());
      EXPECT_EQ(deduplicate(u.frame_phones), u.units);
      if (task == Task::kSsp) {
        std::function<int(const ParseNode&)> depth = [&](const ParseNode& n) {
          int d = 0;
          for (const auto& c : n.children) d = std::max(d, depth(c));
          return d + 1;
        };
        EXPECT_LE(depth(*u.record.tree), 4);
      }
    }
  }
}

TEST(Synthetic, AnchorsAreSeparatedUnitVectorsAndPhonesCovered) {
  const SyntheticCorpus c = generate_synthetic(small_config(Task::kSner));
  for (int i = 0; i < c.anchors.rows(); ++i) {
    EXPECT_NEAR(c.anchors.row(i).norm(), 1.0, 1e-5);
    for (int j = 0; j < i; ++j) EXPECT_GE((c.anchors.row(i) - c.anchors.row(j)).norm(), 1.0f);
  }
  std::vector<bool> covered(30, false);
  for (const auto& word : c.lexicon) {
    for (std::size_t k = 0; k < word.size(); ++k) {
      covered[static_cast<std::size_t>(word[k])] = true;
      if (k) EXPECT_NE(word[k], word[k - 1]);
    }
  }
  EXPECT_TRUE(std::all_of(covered.begin(), covered.end(), [](bool b) { return b; }));
}

TEST(Synthetic, DifferentSeedsDiffer) {
  SynthConfig a = small_config(Task::kSner);
  SynthConfig b = a;
  b.seed = 4;
  EXPECT_FALSE(generate_synthetic(a).anchors == generate_synthetic(b).anchors);
}

TEST(Synthetic, NoiselessUnitsAreRecoveredByTheQuantizer) {
  SynthConfig cfg = small_config(Task::kIcsf, 0.0);
  cfg.size = 100;
  const SyntheticCorpus c = generate_synthetic(cfg);
  std::vector<FeatureMatrix> feats;
  for (const auto& u : c.utterances) feats.push_back(u.features);
  const Codebook cb = kmeans_fit(pool_frames(feats), {cfg.n_units, 100, 1e-6, 1});
  // Relabel centroids by their nearest anchor.
  std::vector<int> to_phone(static_cast<std::size_t>(cb.k()));
  const Eigen::MatrixXd anchors = c.anchors.cast<double>();
  for (int j = 0; j < cb.k(); ++j) {
    to_phone[static_cast<std::size_t>(j)] =
        oracle::nearest_row(anchors, cb.centroids.row(j).cast<double>());
  }
  std::vector<int> sorted = to_phone;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(std::unique(sorted.begin(), sorted.end()), sorted.end());
  for (const auto& u : c.utterances) {
    UnitSequence got = quantize_utterance(cb, u.features);
    for (int& v : got) v = to_phone[static_cast<std::size_t>(v)];
    ASSERT_EQ(got, u.units) << u.id;
  }
}

TEST(Synthetic, NoisyFramesClusterByPhone) {
  SynthConfig cfg = small_config(Task::kSner, 0.05);
  cfg.size = 100;
  const SyntheticCorpus c = generate_synthetic(cfg);
  std::vector<FeatureMatrix> feats;
  std::vector<int> labels;
  for (const auto& u : c.utterances) {
    feats.push_back(u.features);
    labels.insert(labels.end(), u.frame_phones.begin(), u.frame_phones.end());
  }
  const FeatureMatrix pooled = pool_frames(feats);
  const Codebook cb = kmeans_fit(pooled, {cfg.n_units, 100, 1e-6, 1});
  EXPECT_GT(oracle::purity(assign(cb, pooled), labels), 0.95);
}

TEST(Synthetic, ImpossibleConfigs) {
  SynthConfig c = small_config(Task::kSner);
  c.n_slot_types = 50;
  EXPECT_THROW(generate_synthetic(c), std::invalid_argument);
  c = small_config(Task::kSner);
  c.sigma = -1;
  EXPECT_THROW(generate_synthetic(c), std::invalid_argument);
  c = small_config(Task::kSner);
  c.size = 0;
  EXPECT_THROW(generate_synthetic(c), std::invalid_argument);
  c = small_config(Task::kSner);
  c.n_units = 200;
  c.feature_dim = 2;
  EXPECT_THROW(generate_synthetic(c), std::invalid_argument);
}

TEST(Synthetic, WriteCorpusLoadsBack) {
  TempDir dir("unitslu_corpus_test");
  const SyntheticCorpus c = generate_synthetic(small_config(Task::kSsp));
  write_corpus(c.utterances, dir.path().string(), "train");
  const Dataset d = load_dataset(load_manifest(dir / "train.jsonl"));
  ASSERT_EQ(d.size(), c.utterances.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(d[i].id, c.utterances[i].id);
    EXPECT_TRUE(d[i].features == c.utterances[i].features);
    EXPECT_EQ(d[i].record, c.utterances[i].record);
    EXPECT_EQ(d[i].units, c.utterances[i].units);
    EXPECT_EQ(d[i].transcript, c.utterances[i].transcript);
  }
  const auto units = read_unit_file(dir / "train_units.txt");
  EXPECT_EQ(units.size(), d.size());
}

}  // namespace
}  // namespace unitslu
