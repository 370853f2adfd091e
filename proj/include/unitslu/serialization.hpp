#pragma once

// Target-sequence grammars for the three SLU tasks and the token vocabulary
// shared by the decoders.
//
//   SNER  B-<type> w1 I-<type> w2 ...
//   ICSF  <INT:intent> (SNER body) <INT:intent>
//   SSP   [ IN:X [ SL:Y ] ]        (labels only, no words)

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace unitslu {

enum class Task { kSner, kIcsf, kSsp };

std::string_view to_string(Task task);
/// Accepts "SNER", "ICSF", "SSP" (case-insensitive). Throws std::invalid_argument.
Task parse_task(std::string_view name);

struct Entity {
  std::string slot_type;
  std::vector<std::string> value;

  bool operator==(const Entity&) const = default;
};

struct ParseNode {
  std::string label;
  std::vector<ParseNode> children;

  bool operator==(const ParseNode&) const = default;
};

struct SluRecord {
  Task task = Task::kSner;
  std::vector<Entity> entities;     // SNER, ICSF
  std::string intent;               // ICSF
  std::optional<ParseNode> tree;    // SSP

  bool operator==(const SluRecord&) const = default;

  static SluRecord sner(std::vector<Entity> entities);
  static SluRecord icsf(std::string intent, std::vector<Entity> entities);
  static SluRecord ssp(ParseNode tree);
};

using TargetSequence = std::vector<std::string>;

/// Raised when a record violates its task's invariants. what() names the field.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

void validate(const SluRecord& record);

/// Throws ValidationError for malformed records.
TargetSequence serialize_target(const SluRecord& record);

struct ParseResult {
  SluRecord record;
  std::vector<std::string> warnings;
};

/// Total over arbitrary token sequences. Repairs (orphan I- promotion,
/// auto-closing brackets, leading-intent-wins) are reported as warnings.
ParseResult parse_target(Task task, std::span<const std::string> tokens);

/// Space-joined, one utterance per line.
std::string join_tokens(std::span<const std::string> tokens);
std::vector<std::string> split_tokens(std::string_view line);

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumSpecials = 4;

  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kBosToken = "<s>";
  static constexpr std::string_view kEosToken = "</s>";
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocab();

  /// Appends `token` unless already present; returns its id.
  int add(const std::string& token);

  int size() const { return static_cast<int>(id_to_token_.size()); }
  bool contains(const std::string& token) const;
  int id(const std::string& token) const;  // kUnk when absent
  const std::string& token(int id) const;

  std::vector<int> encode(std::span<const std::string> tokens) const;
  /// Specials are dropped.
  std::vector<std::string> decode(std::span<const int> ids) const;

  const std::vector<std::string>& tokens() const { return id_to_token_; }

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

  bool operator==(const Vocab& other) const { return id_to_token_ == other.id_to_token_; }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

bool is_special_token(std::string_view token);

Vocab build_vocab(std::span<const TargetSequence> corpora,
                  std::span<const std::string> extra = {});

}  // namespace unitslu
