#include "unitslu/metrics.hpp"

#include <random>

#include <gtest/gtest.h>

#include "golden.hpp"
#include "oracles.hpp"

namespace unitslu {
namespace {

using Words = std::vector<std::string>;

Words random_words(std::mt19937_64& rng, std::size_t max_len) {
  static const Words alphabet = {"a", "b", "c", "d"};
  Words w(std::uniform_int_distribution<std::size_t>(0, max_len)(rng));
  for (auto& t : w) t = alphabet[std::uniform_int_distribution<std::size_t>(0, 3)(rng)];
  return w;
}

std::vector<SluRecord> records(Task task, const std::vector<std::string>& lines) {
  std::vector<SluRecord> out;
  for (const auto& l : lines) out.push_back(parse_target(task, split_tokens(l)).record);
  return out;
}

TEST(EditDistance, Basics) {
  EXPECT_EQ(edit_distance("abc", "abc"), (EditCounts{0, 0, 0, 3}));
  EXPECT_EQ(edit_distance("", "abc"), (EditCounts{0, 3, 0, 3}));
  EXPECT_EQ(edit_distance("abc", ""), (EditCounts{0, 0, 3, 0}));
  EXPECT_EQ(edit_distance("kitten", "sitting").distance(), 3u);
}

TEST(EditDistance, MatchesOracleOnRandomPairs) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const Words a = random_words(rng, 12);
    const Words b = random_words(rng, 12);
    const EditCounts c = edit_distance(a, b);
    ASSERT_EQ(c.distance(), oracle::levenshtein(a, b));
    ASSERT_EQ(c.ref_len, b.size());
    // Every reference token is matched, substituted or deleted; likewise for
    // hypothesis tokens with insertions.
    ASSERT_LE(c.substitutions + c.deletions, b.size());
    ASSERT_EQ(b.size() - c.substitutions - c.deletions, a.size() - c.substitutions - c.insertions);
  }
}

TEST(EditDistance, SymmetryAndTriangle) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 500; ++i) {
    const Words a = random_words(rng, 12);
    const Words b = random_words(rng, 12);
    const Words c = random_words(rng, 12);
    const EditCounts ab = edit_distance(a, b);
    const EditCounts ba = edit_distance(b, a);
    EXPECT_EQ(edit_distance(a, a).distance(), 0u);
    EXPECT_EQ(ab.distance(), ba.distance());
    EXPECT_LE(edit_distance(a, c).distance(), ab.distance() + edit_distance(b, c).distance());
  }
}

TEST(EditDistance, PrefersSubstitutionOnTies) {
  // "ab" vs "ba": two substitutions or one insertion plus one deletion.
  EXPECT_EQ(edit_distance("ab", "ba"), (EditCounts{2, 0, 0, 2}));
}

TEST(TokenErrorRate, Examples) {
  EXPECT_DOUBLE_EQ(token_error_rate("abc", "abc", Granularity::kChar), 0.0);
  EXPECT_DOUBLE_EQ(token_error_rate("abd", "abc", Granularity::kChar), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(token_error_rate("", "abc", Granularity::kChar), 1.0);
  EXPECT_DOUBLE_EQ(token_error_rate("new yorks", "new york", Granularity::kWord), 0.5);
  EXPECT_THROW(token_error_rate("a", "", Granularity::kChar), UndefinedRateError);
  EXPECT_THROW(token_error_rate("a", "  ", Granularity::kWord), UndefinedRateError);
}

TEST(SlotF1, Examples) {
  const auto gold = records(Task::kSner, {"B-a x B-b y"});
  const auto one = records(Task::kSner, {"B-a x"});
  const auto none = records(Task::kSner, {""});
  EXPECT_DOUBLE_EQ(slot_f1(gold, gold, SlotMatch::kFull), 1.0);
  EXPECT_DOUBLE_EQ(slot_f1(none, gold, SlotMatch::kFull), 0.0);
  EXPECT_DOUBLE_EQ(slot_f1(one, gold, SlotMatch::kFull), 2.0 / 3.0);
  EXPECT_THROW(slot_f1(one, records(Task::kSner, {"", ""}), SlotMatch::kFull),
               std::invalid_argument);
}

TEST(SlotValueCer, Examples) {
  const auto gold = records(Task::kSner, {"B-city boston"});
  EXPECT_DOUBLE_EQ(slot_value_cer(gold, gold), 0.0);
  EXPECT_DOUBLE_EQ(slot_value_cer(records(Task::kSner, {"B-city bostn"}), gold), 1.0 / 6.0);
  EXPECT_DOUBLE_EQ(
      slot_value_cer(records(Task::kSner, {""}), records(Task::kSner, {"B-city la"})), 1.0);
  EXPECT_THROW(slot_value_cer(records(Task::kSner, {"B-a b"}), records(Task::kSner, {""})),
               UndefinedRateError);
}

TEST(SluF1, Examples) {
  const auto gold = records(Task::kIcsf, {"<INT:f> B-city boston <INT:f>"});
  EXPECT_DOUBLE_EQ(slu_f1(gold, gold), 1.0);
  EXPECT_DOUBLE_EQ(slu_f1(records(Task::kIcsf, {"<INT:f> <INT:f>"}), gold), 0.0);
  EXPECT_NEAR(slu_f1(records(Task::kIcsf, {"<INT:f> B-city bostn <INT:f>"}), gold), 5.0 / 12.0,
              1e-15);
}

TEST(IntentAccuracy, Examples) {
  const auto gold = records(Task::kIcsf, {"<INT:a> <INT:a>", "<INT:b> <INT:b>"});
  EXPECT_DOUBLE_EQ(intent_accuracy(gold, gold), 1.0);
  EXPECT_DOUBLE_EQ(intent_accuracy(records(Task::kIcsf, {"<INT:a> <INT:a>", "<INT:a> <INT:a>"}),
                                   gold),
                   0.5);
  EXPECT_DOUBLE_EQ(intent_accuracy(records(Task::kIcsf, {"<INT:b> <INT:b>", "<INT:a> <INT:a>"}),
                                   gold),
                   0.0);
}

TEST(EmTree, Examples) {
  const auto gold = records(Task::kSsp, {"[ IN:A [ SL:B ] [ SL:C ] ]"});
  EXPECT_DOUBLE_EQ(em_tree(gold, gold), 1.0);
  EXPECT_DOUBLE_EQ(em_tree(records(Task::kSsp, {"[ IN:A [ SL:B ] [ SL:D ] ]"}), gold), 0.0);
  EXPECT_DOUBLE_EQ(em_tree(records(Task::kSsp, {"[ IN:A [ SL:B [ SL:C ] ] ]"}), gold), 0.0);
}

TEST(Metrics, PropertyOrderingsOnRandomCorpora) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<SluRecord> preds;
    std::vector<SluRecord> golds;
    for (int u = 0; u < 5; ++u) {
      golds.push_back(oracle::random_record(Task::kIcsf, rng));
      // Predictions: a perturbed copy of gold, or a fresh random record.
      SluRecord p = std::bernoulli_distribution(0.5)(rng)
                        ? golds.back()
                        : oracle::random_record(Task::kIcsf, rng);
      if (!p.entities.empty() && std::bernoulli_distribution(0.5)(rng)) {
        p.entities.back().value.back() += "x";
      }
      preds.push_back(std::move(p));
    }
    const double full = slot_f1(preds, golds, SlotMatch::kFull);
    const double type = slot_f1(preds, golds, SlotMatch::kTypeOnly);
    const double slu = slu_f1(preds, golds);
    for (double v : {full, type, slu}) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
    ASSERT_GE(type, full);
    ASSERT_GE(slu + 1e-12, full);
    ASSERT_DOUBLE_EQ(slot_f1(golds, golds, SlotMatch::kFull),
                     std::any_of(golds.begin(), golds.end(),
                                 [](const SluRecord& r) { return !r.entities.empty(); })
                         ? 1.0
                         : 0.0);
  }
}

TEST(Metrics, EmTreeEqualsCanonicalStringMatch) {
  std::mt19937_64 rng(4);
  std::vector<SluRecord> preds;
  std::vector<SluRecord> golds;
  for (int u = 0; u < 200; ++u) {
    golds.push_back(oracle::random_record(Task::kSsp, rng, 3));
    preds.push_back(std::bernoulli_distribution(0.4)(rng) ? golds.back()
                                                          : oracle::random_record(Task::kSsp, rng, 3));
  }
  std::size_t same = 0;
  for (std::size_t u = 0; u < golds.size(); ++u) {
    same += join_tokens(serialize_target(preds[u])) == join_tokens(serialize_target(golds[u]));
  }
  EXPECT_DOUBLE_EQ(em_tree(preds, golds), static_cast<double>(same) / 200.0);
}

TEST(Metrics, PartitionIndependence) {
  std::mt19937_64 rng(6);
  std::vector<SluRecord> preds;
  std::vector<SluRecord> golds;
  for (int u = 0; u < 40; ++u) {
    golds.push_back(oracle::random_record(Task::kSner, rng));
    preds.push_back(oracle::random_record(Task::kSner, rng));
  }
  std::vector<SluRecord> rp(preds.rbegin(), preds.rend());
  std::vector<SluRecord> rg(golds.rbegin(), golds.rend());
  EXPECT_EQ(slot_f1(preds, golds, SlotMatch::kFull), slot_f1(rp, rg, SlotMatch::kFull));
  EXPECT_EQ(slot_value_cer(preds, golds), slot_value_cer(rp, rg));
}

TEST(Metrics, GoldenFile) {
  const auto outcome = golden::check_metrics_golden(std::string(UNITSLU_GOLDEN_DIR) +
                                                    "/metrics_golden.json");
  EXPECT_GE(outcome.cases, 20);
  for (const auto& m : outcome.mismatches) {
    ADD_FAILURE() << m.case_name << " " << m.metric << ": expected " << m.expected << ", got "
                  << m.actual;
  }
}

TEST(MetricReport, TaskMappingAndJson) {
  EXPECT_EQ(metrics_for_task(Task::kSner), (std::vector<std::string>{"F1", "ST-F1", "SV-CER"}));
  EXPECT_EQ(metrics_for_task(Task::kSsp), (std::vector<std::string>{"EM-Tree"}));
  EXPECT_EQ(metrics_for_dataset("SLURP"), (std::vector<std::string>{"SLU-F1", "INT-Acc"}));
  EXPECT_THROW(metrics_for_dataset("LibriSpeech"), std::invalid_argument);

  const auto golds = records(Task::kIcsf, {"<INT:a> B-x yes <INT:a>"});
  const auto preds = records(Task::kIcsf, {"<INT:a> B-x yeah <INT:a>"});
  const MetricReport r = compute_report(Task::kIcsf, preds, golds);
  EXPECT_EQ(r.values.size(), 5u);
  EXPECT_EQ(report_from_json(report_to_json(r)), r);
  EXPECT_NE(format_report(r).find("INT-Acc=1.000000"), std::string::npos);

  // No gold slot values: SV-CER is undefined and left out.
  const auto empty = records(Task::kSner, {""});
  EXPECT_FALSE(compute_report(Task::kSner, empty, empty).has("SV-CER"));
}

}  // namespace
}  // namespace unitslu
