#include "unitslu/data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <unordered_set>

#include <json.hpp>

#include "unitslu/binary_io.hpp"
#include "unitslu/quantizer.hpp"

namespace unitslu {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr char kFeatureMagic[5] = "UFTM";
constexpr std::uint32_t kFeatureVersion = 1;

struct WordRoles {
  int first_intent = 0;
  int close_word = 0;
  int first_value = 0;
  int n_values = 0;
};

WordRoles roles_for(const SynthConfig& c) {
  WordRoles r;
  r.first_intent = c.n_slot_types;
  r.close_word = c.n_slot_types + c.n_intents;
  r.first_value = r.close_word + 1;
  r.n_values = c.n_latent_words - r.first_value;
  return r;
}

std::string word_name(int w) { return "w" + std::to_string(w); }
std::string slot_name(int s) { return "slot" + std::to_string(s); }
std::string intent_name(int i) { return "intent" + std::to_string(i); }

FeatureMatrix make_anchors(const SynthConfig& c, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  FeatureMatrix anchors(c.n_units, c.feature_dim);
  for (int u = 0; u < c.n_units; ++u) {
    for (int attempt = 0;; ++attempt) {
      if (attempt > 100000) {
        throw std::invalid_argument("generate_synthetic: cannot place " +
                                    std::to_string(c.n_units) + " separated anchors in dim " +
                                    std::to_string(c.feature_dim));
      }
      Eigen::VectorXd v(c.feature_dim);
      for (int d = 0; d < c.feature_dim; ++d) v[d] = normal(rng);
      if (v.norm() == 0.0) continue;
      v.normalize();
      bool ok = true;
      for (int o = 0; o < u && ok; ++o) {
        ok = (anchors.row(o).cast<double>().transpose() - v).norm() >= 1.0;
      }
      if (ok) {
        anchors.row(u) = v.cast<float>().transpose();
        break;
      }
    }
  }
  return anchors;
}

std::vector<std::vector<int>> make_lexicon(const SynthConfig& c, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_phones(c.min_phones_per_word, c.max_phones_per_word);
  std::uniform_int_distribution<int> phone(0, c.n_units - 1);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::vector<std::vector<int>> lex;
    std::set<std::vector<int>> seen;
    std::vector<bool> covered(static_cast<std::size_t>(c.n_units), false);
    bool ok = true;
    for (int w = 0; w < c.n_latent_words && ok; ++w) {
      std::vector<int> phones;
      const int len = n_phones(rng);
      while (static_cast<int>(phones.size()) < len) {
        const int p = phone(rng);
        if (c.n_units > 1 && !phones.empty() && phones.back() == p) continue;
        phones.push_back(p);
      }
      ok = seen.insert(phones).second;
      for (int p : phones) covered[static_cast<std::size_t>(p)] = true;
      lex.push_back(std::move(phones));
    }
    if (ok && std::all_of(covered.begin(), covered.end(), [](bool b) { return b; })) return lex;
  }
  throw std::invalid_argument(
      "generate_synthetic: lexicon cannot cover every unit with distinct words; "
      "use more words or fewer units");
}

struct Utterance {
  std::vector<int> words;
  SluRecord record;
};

std::vector<Entity> spoken_entities(const SynthConfig& c, const WordRoles& roles,
                                    std::mt19937_64& rng, std::vector<int>& words) {
  std::uniform_int_distribution<int> n_ent(1, c.max_entities);
  std::uniform_int_distribution<int> slot(0, c.n_slot_types - 1);
  std::uniform_int_distribution<int> value(roles.first_value,
                                           roles.first_value + roles.n_values - 1);
  std::uniform_int_distribution<int> n_words(1, 2);
  std::uniform_int_distribution<int> n_filler(0, 1);
  for (int i = n_filler(rng); i > 0; --i) words.push_back(value(rng));
  std::vector<Entity> entities;
  for (int e = n_ent(rng); e > 0; --e) {
    const int s = slot(rng);
    words.push_back(s);
    Entity ent{slot_name(s), {}};
    for (int k = n_words(rng); k > 0; --k) {
      const int w = value(rng);
      words.push_back(w);
      ent.value.push_back(word_name(w));
    }
    entities.push_back(std::move(ent));
  }
  return entities;
}

ParseNode spoken_tree(const SynthConfig& c, const WordRoles& roles, std::mt19937_64& rng,
                      std::vector<int>& words, int depth) {
  std::uniform_int_distribution<int> intent(0, c.n_intents - 1);
  std::uniform_int_distribution<int> slot(0, c.n_slot_types - 1);
  std::uniform_int_distribution<int> value(roles.first_value,
                                           roles.first_value + roles.n_values - 1);
  std::uniform_int_distribution<int> n_children(1, 2);
  std::uniform_int_distribution<int> n_words(1, 2);
  std::bernoulli_distribution nest(0.3);

  const int i = intent(rng);
  words.push_back(roles.first_intent + i);
  ParseNode node{"IN:" + intent_name(i), {}};
  for (int k = n_children(rng); k > 0; --k) {
    const int s = slot(rng);
    words.push_back(s);
    ParseNode child{"SL:" + slot_name(s), {}};
    // An IN node plus its SL child adds two levels.
    if (depth + 2 < 4 && nest(rng)) {
      child.children.push_back(spoken_tree(c, roles, rng, words, depth + 2));
    } else {
      for (int w = n_words(rng); w > 0; --w) words.push_back(value(rng));
    }
    node.children.push_back(std::move(child));
  }
  words.push_back(roles.close_word);
  return node;
}

Utterance sample_utterance(const SynthConfig& c, const WordRoles& roles, std::mt19937_64& rng) {
  Utterance u;
  switch (c.task) {
    case Task::kSner:
      u.record = SluRecord::sner(spoken_entities(c, roles, rng, u.words));
      break;
    case Task::kIcsf: {
      const int i = std::uniform_int_distribution<int>(0, c.n_intents - 1)(rng);
      u.words.push_back(roles.first_intent + i);
      auto entities = spoken_entities(c, roles, rng, u.words);
      u.record = SluRecord::icsf(intent_name(i), std::move(entities));
      break;
    }
    case Task::kSsp:
      u.record = SluRecord::ssp(spoken_tree(c, roles, rng, u.words, 1));
      break;
  }
  return u;
}

std::string relative_to(const fs::path& path, const fs::path& base) {
  return fs::relative(path, base).generic_string();
}

}  // namespace

// ---- feature files ---------------------------------------------------------

void write_features(const std::string& path, const FeatureMatrix& features) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FeatureIoError(FeatureIoErrorCode::kIo, "cannot write features '" + path + "'");
  binary::write_magic(out, kFeatureMagic);
  binary::write_u32(out, kFeatureVersion);
  binary::write_u32(out, static_cast<std::uint32_t>(features.rows()));
  binary::write_u32(out, static_cast<std::uint32_t>(features.cols()));
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    for (Eigen::Index c = 0; c < features.cols(); ++c) binary::write_f32(out, features(r, c));
  }
  if (!out) throw FeatureIoError(FeatureIoErrorCode::kIo, "error writing features '" + path + "'");
}

FeatureMatrix read_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FeatureIoError(FeatureIoErrorCode::kIo, "cannot read features '" + path + "'");
  if (!binary::read_magic(in, kFeatureMagic)) {
    throw FeatureIoError(FeatureIoErrorCode::kBadMagic, "features '" + path + "': bad magic");
  }
  try {
    const auto version = binary::read_u32(in);
    if (version != kFeatureVersion) {
      throw FeatureIoError(FeatureIoErrorCode::kBadVersion,
                           "features '" + path + "': unsupported version " +
                               std::to_string(version));
    }
    const auto frames = binary::read_u32(in);
    const auto dim = binary::read_u32(in);
    const std::uint64_t expected = 16ull + 4ull * frames * dim;
    in.seekg(0, std::ios::end);
    const auto actual = static_cast<std::uint64_t>(in.tellg());
    if (actual < expected) {
      throw FeatureIoError(FeatureIoErrorCode::kTruncated,
                           "features '" + path + "': header declares " + std::to_string(frames) +
                               "x" + std::to_string(dim) + " but payload is truncated");
    }
    if (actual > expected) {
      throw FeatureIoError(FeatureIoErrorCode::kShapeMismatch,
                           "features '" + path + "': payload larger than header " +
                               std::to_string(frames) + "x" + std::to_string(dim));
    }
    in.seekg(16);
    FeatureMatrix m(frames, dim);
    for (std::uint32_t r = 0; r < frames; ++r) {
      for (std::uint32_t c = 0; c < dim; ++c) m(r, c) = binary::read_f32(in);
    }
    return m;
  } catch (const binary::TruncatedError&) {
    throw FeatureIoError(FeatureIoErrorCode::kTruncated, "features '" + path + "': truncated header");
  }
}

// ---- manifests -------------------------------------------------------------

std::string Manifest::resolve(const std::string& path) const {
  const fs::path p(path);
  if (p.is_absolute() || base_dir.empty()) return p.string();
  return (fs::path(base_dir) / p).string();
}

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read manifest '" + path + "'");
  Manifest m;
  m.base_dir = fs::path(path).parent_path().string();
  std::unordered_set<std::string> ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "manifest '" + path + "' line " + std::to_string(line_no);
    ManifestRecord rec;
    try {
      const json j = json::parse(line);
      rec.id = j.at("id").get<std::string>();
      rec.features = j.at("features").get<std::string>();
      if (j.contains("wav")) rec.wav = j.at("wav").get<std::string>();
      const Task task = parse_task(j.at("task").get<std::string>());
      const auto tokens = split_tokens(j.at("target").get<std::string>());
      auto parsed = parse_target(task, tokens);
      if (!parsed.warnings.empty()) {
        throw std::runtime_error("gold annotation needs repair: " + parsed.warnings.front());
      }
      validate(parsed.record);
      rec.annotation = std::move(parsed.record);
      if (j.contains("transcript")) {
        rec.transcript = split_tokens(j.at("transcript").get<std::string>());
      }
      if (j.contains("units")) rec.units = j.at("units").get<UnitSequence>();
    } catch (const std::exception& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
    if (!ids.insert(rec.id).second) {
      throw std::runtime_error(where + ": duplicate id '" + rec.id + "'");
    }
    m.records.push_back(std::move(rec));
  }
  return m;
}

void save_manifest(const Manifest& manifest, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest '" + path + "'");
  for (const auto& r : manifest.records) {
    json j;
    j["id"] = r.id;
    j["features"] = r.features;
    if (r.wav) j["wav"] = *r.wav;
    j["task"] = std::string(to_string(r.annotation.task));
    j["target"] = join_tokens(serialize_target(r.annotation));
    if (r.transcript) j["transcript"] = join_tokens(*r.transcript);
    if (r.units) j["units"] = *r.units;
    out << j.dump() << '\n';
  }
}

Dataset load_dataset(const Manifest& manifest) {
  Dataset data;
  data.reserve(manifest.size());
  for (const auto& r : manifest.records) {
    const std::string path = manifest.resolve(r.features);
    if (!fs::exists(path)) {
      throw std::runtime_error("utterance '" + r.id + "': feature file '" + path +
                               "' does not exist");
    }
    Example ex;
    ex.id = r.id;
    ex.features = read_features(path);
    ex.record = r.annotation;
    if (r.transcript) ex.transcript = *r.transcript;
    if (r.units) ex.units = *r.units;
    data.push_back(std::move(ex));
  }
  return data;
}

// ---- synthetic corpus ------------------------------------------------------

void validate(const SynthConfig& c) {
  auto positive = [](int v, const char* field) {
    if (v < 1) throw std::invalid_argument(std::string("SynthConfig.") + field + " must be >= 1");
  };
  positive(c.n_latent_words, "n_latent_words");
  positive(c.n_slot_types, "n_slot_types");
  positive(c.n_intents, "n_intents");
  positive(c.feature_dim, "feature_dim");
  positive(c.n_units, "n_units");
  positive(c.min_frames_per_phone, "min_frames_per_phone");
  positive(c.min_phones_per_word, "min_phones_per_word");
  positive(c.max_entities, "max_entities");
  positive(c.size, "size");
  if (c.max_frames_per_phone < c.min_frames_per_phone) {
    throw std::invalid_argument("SynthConfig: frames-per-phone range is empty");
  }
  if (c.max_phones_per_word < c.min_phones_per_word) {
    throw std::invalid_argument("SynthConfig: phones-per-word range is empty");
  }
  if (!(c.sigma >= 0.0)) throw std::invalid_argument("SynthConfig.sigma must be >= 0");
  // Slot triggers, intent keywords and a closing word precede >= 2 value words.
  const int needed = c.n_slot_types + c.n_intents + 1 + 2;
  if (c.n_latent_words < needed) {
    throw std::invalid_argument("SynthConfig: " + std::to_string(c.n_slot_types) +
                                " slot types and " + std::to_string(c.n_intents) +
                                " intents need at least " + std::to_string(needed) +
                                " latent words, got " + std::to_string(c.n_latent_words));
  }
}

SyntheticCorpus generate_synthetic(const SynthConfig& config) {
  validate(config);
  SyntheticCorpus corpus;
  corpus.config = config;
  std::mt19937_64 global(derive_seed(config.seed, 0));
  corpus.anchors = make_anchors(config, global);
  corpus.lexicon = make_lexicon(config, global);
  const WordRoles roles = roles_for(config);

  corpus.utterances.resize(static_cast<std::size_t>(config.size));
  for (int idx = 0; idx < config.size; ++idx) {
    std::mt19937_64 rng(derive_seed(config.seed, static_cast<std::uint64_t>(idx) + 1));
    Utterance u = sample_utterance(config, roles, rng);

    SyntheticUtterance& out = corpus.utterances[static_cast<std::size_t>(idx)];
    char id[32];
    std::snprintf(id, sizeof(id), "utt%05d", idx);
    out.id = id;
    out.record = std::move(u.record);

    std::vector<int> phones;
    for (int w : u.words) {
      out.transcript.push_back(word_name(w));
      const auto& p = corpus.lexicon[static_cast<std::size_t>(w)];
      phones.insert(phones.end(), p.begin(), p.end());
    }
    out.units = deduplicate(phones);

    std::uniform_int_distribution<int> dur(config.min_frames_per_phone,
                                           config.max_frames_per_phone);
    std::normal_distribution<double> noise(0.0, config.sigma > 0.0 ? config.sigma : 1.0);
    for (int p : phones) {
      for (int k = dur(rng); k > 0; --k) out.frame_phones.push_back(p);
    }
    out.features.resize(static_cast<Eigen::Index>(out.frame_phones.size()), config.feature_dim);
    for (std::size_t f = 0; f < out.frame_phones.size(); ++f) {
      const auto row = static_cast<Eigen::Index>(f);
      out.features.row(row) = corpus.anchors.row(out.frame_phones[f]);
      if (config.sigma > 0.0) {
        for (int d = 0; d < config.feature_dim; ++d) {
          out.features(row, d) += static_cast<float>(noise(rng));
        }
      }
    }
  }
  return corpus;
}

Manifest write_corpus(std::span<const SyntheticUtterance> utterances, const std::string& dir,
                      const std::string& name) {
  const fs::path base(dir);
  fs::create_directories(base / "features");
  Manifest m;
  m.base_dir = base.string();
  std::vector<UnitSequence> units;
  for (const auto& u : utterances) {
    const fs::path feat = base / "features" / (u.id + ".uftm");
    write_features(feat.string(), u.features);
    ManifestRecord r;
    r.id = u.id;
    r.features = relative_to(feat, base);
    r.annotation = u.record;
    r.transcript = u.transcript;
    r.units = u.units;
    m.records.push_back(std::move(r));
    units.push_back(u.units);
  }
  save_manifest(m, (base / (name + ".jsonl")).string());
  write_unit_file((base / (name + "_units.txt")).string(), units);
  return m;
}

Dataset to_dataset(std::span<const SyntheticUtterance> utterances) {
  Dataset data;
  data.reserve(utterances.size());
  for (const auto& u : utterances) {
    data.push_back(Example{u.id, u.features, u.record, u.transcript, u.units});
  }
  return data;
}

}  // namespace unitslu
