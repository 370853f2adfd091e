#pragma once

// Edit-distance kernel and the corpus-level SLU metrics: slot F1 (full and
// type-only), slot-value CER, SLU-F1, intent accuracy and exact-match tree
// accuracy. All corpus metrics pool counts over utterances (micro average).

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "unitslu/serialization.hpp"

namespace unitslu {

struct EditCounts {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;   // reference tokens missing from the hypothesis
  std::size_t insertions = 0;  // hypothesis tokens absent from the reference
  std::size_t ref_len = 0;

  std::size_t distance() const { return substitutions + deletions + insertions; }
  bool operator==(const EditCounts&) const = default;
};

/// Minimal unit-cost Levenshtein alignment. When several alignments reach the
/// minimum, the backtrace prefers substitution/match, then insertion, then
/// deletion.
template <typename T>
EditCounts edit_distance(std::span<const T> hyp, std::span<const T> ref) {
  const std::size_t n = hyp.size();
  const std::size_t m = ref.size();
  const std::size_t w = m + 1;
  std::vector<std::size_t> cost((n + 1) * w);
  for (std::size_t i = 0; i <= n; ++i) cost[i * w] = i;
  for (std::size_t j = 0; j <= m; ++j) cost[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = cost[(i - 1) * w + j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      const std::size_t ins = cost[(i - 1) * w + j] + 1;
      const std::size_t del = cost[i * w + j - 1] + 1;
      cost[i * w + j] = std::min({diag, ins, del});
    }
  }
  EditCounts counts;
  counts.ref_len = m;
  std::size_t i = n;
  std::size_t j = m;
  while (i > 0 || j > 0) {
    const std::size_t here = cost[i * w + j];
    if (i > 0 && j > 0) {
      const bool same = hyp[i - 1] == ref[j - 1];
      if (cost[(i - 1) * w + j - 1] + (same ? 0 : 1) == here) {
        if (!same) ++counts.substitutions;
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && cost[(i - 1) * w + j] + 1 == here) {
      ++counts.insertions;
      --i;
    } else {
      ++counts.deletions;
      --j;
    }
  }
  return counts;
}

inline EditCounts edit_distance(std::string_view hyp, std::string_view ref) {
  return edit_distance<char>(std::span<const char>(hyp.data(), hyp.size()),
                             std::span<const char>(ref.data(), ref.size()));
}

inline EditCounts edit_distance(const std::vector<std::string>& hyp,
                                const std::vector<std::string>& ref) {
  return edit_distance<std::string>(std::span<const std::string>(hyp),
                                    std::span<const std::string>(ref));
}

enum class Granularity { kChar, kWord };

class UndefinedRateError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// (S+D+I)/ref_len. Word granularity splits on whitespace. Throws
/// UndefinedRateError when the reference is empty at that granularity.
double token_error_rate(std::string_view hyp, std::string_view ref, Granularity granularity);

enum class SlotMatch { kFull, kTypeOnly };

double slot_f1(std::span<const SluRecord> preds, std::span<const SluRecord> golds,
               SlotMatch mode);

/// Pooled slot-value character error rate.
double slot_value_cer(std::span<const SluRecord> preds, std::span<const SluRecord> golds);
/// Per-utterance mean of the same quantity, skipping utterances with no gold
/// value characters. nullopt when every utterance is skipped.
std::optional<double> slot_value_cer_utterance_mean(std::span<const SluRecord> preds,
                                                    std::span<const SluRecord> golds);

double slu_f1(std::span<const SluRecord> preds, std::span<const SluRecord> golds);
double intent_accuracy(std::span<const SluRecord> preds, std::span<const SluRecord> golds);
double em_tree(std::span<const SluRecord> preds, std::span<const SluRecord> golds);

/// One predicted/gold slot pairing within an utterance. Exact (type, value)
/// matches are paired first; the remaining slots of each type pair in order
/// of appearance. Unpaired sides hold nullopt.
struct SlotPair {
  std::optional<Entity> pred;
  std::optional<Entity> gold;
};
std::vector<SlotPair> pair_slots(const std::vector<Entity>& pred, const std::vector<Entity>& gold);

namespace metric_name {
inline constexpr std::string_view kF1 = "F1";
inline constexpr std::string_view kSlotTypeF1 = "ST-F1";
inline constexpr std::string_view kSvCer = "SV-CER";
inline constexpr std::string_view kSluF1 = "SLU-F1";
inline constexpr std::string_view kIntentAcc = "INT-Acc";
inline constexpr std::string_view kEmTree = "EM-Tree";
}  // namespace metric_name

/// True for metrics where lower is better.
bool is_error_rate(std::string_view metric);

struct MetricReport {
  std::map<std::string, double> values;
  std::size_t utterances = 0;
  std::optional<double> sv_cer_utterance_mean;

  bool has(std::string_view name) const { return values.count(std::string(name)) != 0; }
  double at(std::string_view name) const;
  bool operator==(const MetricReport&) const = default;
};

/// Metrics reported per task: SNER F1/ST-F1/SV-CER; ICSF adds SLU-F1 and
/// INT-Acc; SSP EM-Tree. Dataset profiles restrict to one benchmark's columns.
std::vector<std::string> metrics_for_task(Task task);
std::vector<std::string> metrics_for_dataset(std::string_view dataset);

MetricReport compute_report(Task task, std::span<const SluRecord> preds,
                            std::span<const SluRecord> golds,
                            std::span<const std::string> metrics = {});

/// key=value lines, one metric per line.
std::string format_report(const MetricReport& report);
std::string report_to_json(const MetricReport& report);
MetricReport report_from_json(std::string_view json);

}  // namespace unitslu
