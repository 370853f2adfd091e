#pragma once

// Feature files, JSON-lines manifests and the synthetic corpus generator.
//
// Feature file: "UFTM", u32 version, u32 n_frames, u32 dim, then row-major
// little-endian f32 values.
//
// Manifest line: {"id": ..., "features": <path>, "task": "SNER|ICSF|SSP",
//                 "target": "<space-joined target sequence>",
//                 "wav": <path>?, "transcript": "<words>"?, "units": [ids]?}
// Relative paths resolve against the manifest's directory.

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "unitslu/serialization.hpp"
#include "unitslu/types.hpp"

namespace unitslu {

enum class FeatureIoErrorCode { kIo, kBadMagic, kBadVersion, kTruncated, kShapeMismatch };

class FeatureIoError : public std::runtime_error {
 public:
  FeatureIoError(FeatureIoErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  FeatureIoErrorCode code() const { return code_; }

 private:
  FeatureIoErrorCode code_;
};

void write_features(const std::string& path, const FeatureMatrix& features);
FeatureMatrix read_features(const std::string& path);

struct ManifestRecord {
  std::string id;
  std::string features;                 // as written in the manifest
  std::optional<std::string> wav;
  SluRecord annotation;
  std::optional<std::vector<std::string>> transcript;
  std::optional<UnitSequence> units;
};

struct Manifest {
  std::string base_dir;
  std::vector<ManifestRecord> records;

  std::size_t size() const { return records.size(); }
  std::string resolve(const std::string& path) const;
};

/// Throws std::runtime_error on duplicate ids, malformed lines (with the line
/// number) and gold annotations that need repair.
Manifest load_manifest(const std::string& path);
void save_manifest(const Manifest& manifest, const std::string& path);

/// An utterance with its features loaded.
struct Example {
  std::string id;
  FeatureMatrix features;
  SluRecord record;
  std::vector<std::string> transcript;
  UnitSequence units;
};
using Dataset = std::vector<Example>;

/// Reads every referenced feature file.
Dataset load_dataset(const Manifest& manifest);

struct SynthConfig {
  Task task = Task::kSner;
  int n_latent_words = 40;
  int n_slot_types = 4;
  int n_intents = 4;
  int feature_dim = 16;
  int n_units = 30;  // phone alphabet size
  int min_frames_per_phone = 2;
  int max_frames_per_phone = 6;
  int min_phones_per_word = 2;
  int max_phones_per_word = 4;
  int max_entities = 3;
  double sigma = 0.05;
  std::uint64_t seed = 0;
  int size = 100;
};

/// Throws std::invalid_argument for impossible configurations.
void validate(const SynthConfig& config);

struct SyntheticUtterance {
  std::string id;
  FeatureMatrix features;
  SluRecord record;
  std::vector<std::string> transcript;  // spoken words
  UnitSequence units;                   // deduplicated latent phone stream
  std::vector<int> frame_phones;        // latent phone per frame
};

struct SyntheticCorpus {
  SynthConfig config;
  FeatureMatrix anchors;                  // n_units x feature_dim, unit norm
  std::vector<std::vector<int>> lexicon;  // word -> phones
  std::vector<SyntheticUtterance> utterances;
};

SyntheticCorpus generate_synthetic(const SynthConfig& config);

/// Writes features/<id>.uftm, <name>.jsonl and <name>_units.txt under `dir`.
Manifest write_corpus(std::span<const SyntheticUtterance> utterances, const std::string& dir,
                      const std::string& name = "manifest");

Dataset to_dataset(std::span<const SyntheticUtterance> utterances);

}  // namespace unitslu
