#include "unitslu/serialization.hpp"

#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"

namespace unitslu {
namespace {

using Tokens = std::vector<std::string>;

TEST(SerializeTarget, SnerUsesBeginThenInsideTags) {
  const auto r = SluRecord::sner({{"fromloc.city_name", {"new", "york"}}});
  EXPECT_EQ(serialize_target(r),
            (Tokens{"B-fromloc.city_name", "new", "I-fromloc.city_name", "york"}));
}

TEST(SerializeTarget, IcsfWithoutEntitiesIsJustTheWrap) {
  EXPECT_EQ(serialize_target(SluRecord::icsf("flight", {})),
            (Tokens{"<INT:flight>", "<INT:flight>"}));
}

TEST(SerializeTarget, SspSingleChild) {
  const auto r = SluRecord::ssp({"IN:GET_WEATHER", {{"SL:LOCATION", {}}}});
  EXPECT_EQ(serialize_target(r), (Tokens{"[", "IN:GET_WEATHER", "[", "SL:LOCATION", "]", "]"}));
}

TEST(SerializeTarget, RejectsMalformedRecordsNamingTheField) {
  try {
    serialize_target(SluRecord::sner({{"city", {}}}));
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("entities[0].value"), std::string::npos);
  }
  EXPECT_THROW(serialize_target(SluRecord::ssp({"SL:X", {}})), ValidationError);
  EXPECT_THROW(serialize_target(SluRecord::icsf("", {})), ValidationError);
  SluRecord wrong = SluRecord::sner({});
  wrong.intent = "flight";
  EXPECT_THROW(serialize_target(wrong), ValidationError);
  EXPECT_THROW(serialize_target(SluRecord::sner({{"ci ty", {"a"}}})), ValidationError);
  EXPECT_THROW(serialize_target(SluRecord::sner({{"city", {"<pad>"}}})), ValidationError);
}

TEST(ParseTarget, ValidSnerHasNoWarnings) {
  const Tokens t = {"B-toloc.city_name", "boston"};
  const auto p = parse_target(Task::kSner, t);
  EXPECT_TRUE(p.warnings.empty());
  EXPECT_EQ(p.record, SluRecord::sner({{"toloc.city_name", {"boston"}}}));
}

TEST(ParseTarget, OrphanInsideIsPromoted) {
  const Tokens t = {"I-toloc.city_name", "boston"};
  const auto p = parse_target(Task::kSner, t);
  EXPECT_EQ(p.warnings.size(), 1u);
  EXPECT_EQ(p.record, SluRecord::sner({{"toloc.city_name", {"boston"}}}));
}

TEST(ParseTarget, UnclosedBracketsAreClosedWithOneWarning) {
  const Tokens t = {"[", "IN:A", "[", "SL:B"};
  const auto p = parse_target(Task::kSsp, t);
  EXPECT_EQ(p.warnings.size(), 1u);
  EXPECT_EQ(p.record, SluRecord::ssp({"IN:A", {{"SL:B", {}}}}));
}

TEST(ParseTarget, LeadingIntentWins) {
  const Tokens t = {"<INT:a>", "B-x", "w", "<INT:b>"};
  const auto p = parse_target(Task::kIcsf, t);
  EXPECT_EQ(p.warnings.size(), 1u);
  EXPECT_EQ(p.record.intent, "a");
  EXPECT_EQ(p.record.entities, (std::vector<Entity>{{"x", {"w"}}}));
}

TEST(ParseTarget, EmptyInputGivesEmptyRecords) {
  EXPECT_TRUE(parse_target(Task::kSner, Tokens{}).record.entities.empty());
  EXPECT_TRUE(parse_target(Task::kSner, Tokens{}).warnings.empty());
  EXPECT_FALSE(parse_target(Task::kIcsf, Tokens{}).warnings.empty());
  EXPECT_FALSE(parse_target(Task::kSsp, Tokens{}).warnings.empty());
}

TEST(ParseTask, RejectsUnknownTask) {
  EXPECT_EQ(parse_task("icsf"), Task::kIcsf);
  EXPECT_THROW(parse_task("NER"), std::invalid_argument);
}

TEST(RoundTrip, PropertyAcrossTasks) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 3000; ++i) {
    const Task task = static_cast<Task>(i % 3);
    const SluRecord r = oracle::random_record(task, rng);
    const Tokens tokens = serialize_target(r);
    const auto p = parse_target(task, tokens);
    ASSERT_TRUE(p.warnings.empty()) << join_tokens(tokens);
    ASSERT_EQ(p.record, r) << join_tokens(tokens);
    ASSERT_EQ(split_tokens(join_tokens(tokens)), tokens);
  }
}

TEST(RoundTrip, SspBracketBalanceAndIcsfFraming) {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 500; ++i) {
    const Tokens ssp = serialize_target(oracle::random_record(Task::kSsp, rng));
    int depth = 0;
    for (const auto& t : ssp) {
      depth += t == "[" ? 1 : t == "]" ? -1 : 0;
      ASSERT_GE(depth, 0);
    }
    EXPECT_EQ(depth, 0);
    const Tokens icsf = serialize_target(oracle::random_record(Task::kIcsf, rng));
    ASSERT_GE(icsf.size(), 2u);
    EXPECT_EQ(icsf.front(), icsf.back());
    EXPECT_TRUE(icsf.front().starts_with("<INT:"));
  }
}

TEST(ParseTarget, TotalOnRandomTokens) {
  std::mt19937_64 rng(13);
  for (int i = 0; i < 3000; ++i) {
    const Tokens t = oracle::random_tokens(rng, 40);
    for (Task task : {Task::kSner, Task::kIcsf, Task::kSsp}) {
      const auto p = parse_target(task, t);
      EXPECT_EQ(p.record.task, task);
      // A clean parse means the input was canonical.
      if (p.warnings.empty()) EXPECT_EQ(serialize_target(p.record), t) << join_tokens(t);
    }
  }
}

TEST(ParseTarget, HandlesVeryLongAndDeepInput) {
  Tokens deep;
  for (int i = 0; i < 5000; ++i) {
    deep.push_back("[");
    deep.push_back(i % 2 ? "SL:x" : "IN:x");
  }
  const auto p = parse_target(Task::kSsp, deep);
  EXPECT_EQ(p.warnings.size(), 1u);
}

TEST(Vocab, FirstOccurrenceOrder) {
  const std::vector<TargetSequence> corpora = {{"a", "b"}, {"b", "c"}};
  const Vocab v = build_vocab(corpora);
  EXPECT_EQ(v.size(), 7);
  EXPECT_EQ(v.id("<pad>"), 0);
  EXPECT_EQ(v.id("<s>"), 1);
  EXPECT_EQ(v.id("</s>"), 2);
  EXPECT_EQ(v.id("<unk>"), 3);
  EXPECT_EQ(v.id("a"), 4);
  EXPECT_EQ(v.id("b"), 5);
  EXPECT_EQ(v.id("c"), 6);
}

TEST(Vocab, EmptyAndUnknown) {
  const Vocab v = build_vocab({});
  EXPECT_EQ(v.size(), 4);
  EXPECT_EQ(v.id("zzz"), Vocab::kUnk);
  const Tokens extra = {"x", "x", "y"};
  const std::vector<TargetSequence> corpora = {{"y"}};
  EXPECT_EQ(build_vocab(corpora, extra).tokens(),
            (Tokens{"<pad>", "<s>", "</s>", "<unk>", "y", "x"}));
}

TEST(Vocab, TrainingSequencesEncodeWithoutUnk) {
  std::mt19937_64 rng(5);
  std::vector<TargetSequence> corpora;
  for (int i = 0; i < 200; ++i) {
    corpora.push_back(serialize_target(oracle::random_record(static_cast<Task>(i % 3), rng)));
  }
  const Vocab v = build_vocab(corpora);
  for (const auto& seq : corpora) {
    const auto ids = v.encode(seq);
    EXPECT_EQ(std::count(ids.begin(), ids.end(), Vocab::kUnk), 0);
    EXPECT_EQ(v.decode(ids), seq);
  }
  for (int id = 0; id < v.size(); ++id) EXPECT_EQ(v.id(v.token(id)), id);
}

TEST(Vocab, SaveLoadRoundTrip) {
  const std::vector<TargetSequence> corpora = {{"B-city", "é", "[", "IN:A"}};
  const Vocab v = build_vocab(corpora);
  const auto path = (std::filesystem::temp_directory_path() / "unitslu_vocab_test.txt").string();
  v.save(path);
  EXPECT_EQ(Vocab::load(path), v);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace unitslu
