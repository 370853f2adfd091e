#include "unitslu/serialization.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace unitslu {
namespace {

constexpr std::string_view kBegin = "B-";
constexpr std::string_view kInside = "I-";
constexpr std::string_view kIntentOpen = "<INT:";
constexpr std::string_view kIntentClose = ">";
constexpr std::string_view kOpen = "[";
constexpr std::string_view kClose = "]";

bool has_whitespace(std::string_view s) {
  return std::any_of(s.begin(), s.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

bool starts_with(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}

bool is_intent_token(std::string_view t) {
  return t.size() > kIntentOpen.size() + kIntentClose.size() &&
         starts_with(t, kIntentOpen) && t.back() == '>';
}

std::string intent_of(std::string_view t) {
  return std::string(t.substr(kIntentOpen.size(),
                              t.size() - kIntentOpen.size() - kIntentClose.size()));
}

std::string intent_token(const std::string& intent) {
  return std::string(kIntentOpen) + intent + std::string(kIntentClose);
}

bool is_tag(std::string_view t) {
  return t.size() > 2 && (starts_with(t, kBegin) || starts_with(t, kInside));
}

bool is_tree_label(std::string_view t) {
  return t.size() > 3 && (starts_with(t, "IN:") || starts_with(t, "SL:"));
}

// A word must not be confusable with any structural token.
bool is_reserved_looking(std::string_view t) {
  return is_special_token(t) || is_tag(t) || starts_with(t, kIntentOpen) ||
         t == kOpen || t == kClose;
}

void validate_label(const std::string& value, const std::string& field) {
  if (value.empty()) throw ValidationError(field + ": empty");
  if (has_whitespace(value)) throw ValidationError(field + ": contains whitespace");
  if (is_special_token(value)) throw ValidationError(field + ": reserved token");
}

void validate_entities(const std::vector<Entity>& entities) {
  for (std::size_t i = 0; i < entities.size(); ++i) {
    const auto& e = entities[i];
    const std::string where = "entities[" + std::to_string(i) + "]";
    validate_label(e.slot_type, where + ".slot_type");
    if (e.slot_type.find_first_of("<>[]") != std::string::npos) {
      throw ValidationError(where + ".slot_type: contains a reserved character");
    }
    if (e.value.empty()) throw ValidationError(where + ".value: empty");
    for (std::size_t j = 0; j < e.value.size(); ++j) {
      const auto& w = e.value[j];
      const std::string wf = where + ".value[" + std::to_string(j) + "]";
      if (w.empty()) throw ValidationError(wf + ": empty word");
      if (has_whitespace(w)) throw ValidationError(wf + ": contains whitespace");
      if (is_reserved_looking(w)) throw ValidationError(wf + ": reserved token '" + w + "'");
    }
  }
}

void validate_node(const ParseNode& node, const std::string& where, bool root) {
  if (!is_tree_label(node.label)) {
    throw ValidationError(where + ".label: '" + node.label + "' lacks IN:/SL: prefix");
  }
  if (root && !starts_with(node.label, "IN:")) {
    throw ValidationError(where + ".label: root must be an IN: label");
  }
  if (has_whitespace(node.label)) throw ValidationError(where + ".label: contains whitespace");
  if (node.label.find_first_of("[]") != std::string::npos) {
    throw ValidationError(where + ".label: contains a bracket");
  }
  for (std::size_t i = 0; i < node.children.size(); ++i) {
    validate_node(node.children[i], where + ".children[" + std::to_string(i) + "]", false);
  }
}

bool usable_word(std::string_view w) {
  return !w.empty() && !has_whitespace(std::string(w)) && !is_reserved_looking(w);
}

bool usable_slot_type(std::string_view t) {
  return !t.empty() && !has_whitespace(std::string(t)) && !is_special_token(t) &&
         t.find_first_of("<>[]") == std::string_view::npos;
}

void emit_entities(const std::vector<Entity>& entities, TargetSequence& out) {
  for (const auto& e : entities) {
    out.push_back(std::string(kBegin) + e.slot_type);
    out.push_back(e.value.front());
    for (std::size_t j = 1; j < e.value.size(); ++j) {
      out.push_back(std::string(kInside) + e.slot_type);
      out.push_back(e.value[j]);
    }
  }
}

void emit_tree(const ParseNode& node, TargetSequence& out) {
  out.emplace_back(kOpen);
  out.push_back(node.label);
  for (const auto& c : node.children) emit_tree(c, out);
  out.emplace_back(kClose);
}

std::vector<Entity> parse_entities(std::span<const std::string> tokens,
                                   std::vector<std::string>& warnings) {
  std::vector<Entity> entities;
  // An entity is "open" after a tag and "complete" once its word arrives.
  bool open_tag = false;
  bool have_entity = false;

  auto drop_dangling = [&](std::size_t pos) {
    if (open_tag) {
      warnings.push_back("tag without word before position " + std::to_string(pos) +
                         " dropped");
      if (entities.back().value.empty()) {
        entities.pop_back();
        have_entity = !entities.empty();
      }
      open_tag = false;
    }
  };

  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string& tok = tokens[i];
    if (is_tag(tok)) {
      drop_dangling(i);
      const std::string type = tok.substr(2);
      if (!usable_slot_type(type)) {
        warnings.push_back("tag '" + tok + "' at position " + std::to_string(i) +
                           " has an unusable slot type; dropped");
        continue;
      }
      const bool inside = starts_with(tok, kInside);
      if (inside && have_entity && entities.back().slot_type == type) {
        open_tag = true;
        continue;
      }
      if (inside) {
        warnings.push_back("orphan '" + tok + "' at position " + std::to_string(i) +
                           " promoted to B-");
      }
      entities.push_back(Entity{type, {}});
      have_entity = true;
      open_tag = true;
    } else if (open_tag && !usable_word(tok)) {
      warnings.push_back("reserved token '" + tok + "' at position " + std::to_string(i) +
                         " dropped");
    } else if (open_tag) {
      entities.back().value.push_back(tok);
      open_tag = false;
    } else {
      warnings.push_back("stray token '" + tok + "' at position " + std::to_string(i) +
                         " dropped");
    }
  }
  drop_dangling(tokens.size());
  return entities;
}

struct Frame {
  ParseNode node;
  bool placeholder = false;  // "[" that was not followed by a label
};

void attach(std::vector<Frame>& stack, std::optional<ParseNode>& root, ParseNode node,
            std::vector<std::string>& warnings) {
  // Placeholders are transparent: their children belong to the nearest real frame.
  for (auto it = stack.rbegin(); it != stack.rend(); ++it) {
    if (!it->placeholder) {
      it->node.children.push_back(std::move(node));
      return;
    }
  }
  if (!root) {
    if (!starts_with(node.label, "IN:")) {
      warnings.push_back("root label '" + node.label + "' is not an IN: label");
    }
    root = std::move(node);
  } else {
    warnings.push_back("extra top-level node '" + node.label + "' dropped");
  }
}

void close_frame(std::vector<Frame>& stack, std::optional<ParseNode>& root,
                 std::vector<std::string>& warnings) {
  Frame f = std::move(stack.back());
  stack.pop_back();
  if (f.placeholder) {
    for (auto& c : f.node.children) attach(stack, root, std::move(c), warnings);
  } else {
    attach(stack, root, std::move(f.node), warnings);
  }
}

std::optional<ParseNode> parse_tree(std::span<const std::string> tokens,
                                    std::vector<std::string>& warnings) {
  std::optional<ParseNode> root;
  std::vector<Frame> stack;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string& tok = tokens[i];
    if (tok == kOpen) {
      if (i + 1 < tokens.size() && is_tree_label(tokens[i + 1]) &&
          tokens[i + 1].find_first_of("[]") == std::string::npos &&
          !has_whitespace(tokens[i + 1])) {
        stack.push_back(Frame{ParseNode{tokens[i + 1], {}}, false});
        ++i;
      } else {
        warnings.push_back("'[' without label at position " + std::to_string(i));
        stack.push_back(Frame{ParseNode{}, true});
      }
    } else if (tok == kClose) {
      if (stack.empty()) {
        warnings.push_back("unmatched ']' at position " + std::to_string(i) + " ignored");
      } else {
        close_frame(stack, root, warnings);
      }
    } else {
      warnings.push_back("stray token '" + tok + "' at position " + std::to_string(i) +
                         " dropped");
    }
  }
  if (!stack.empty()) {
    warnings.push_back(std::to_string(stack.size()) + " unclosed bracket(s) auto-closed");
    while (!stack.empty()) close_frame(stack, root, warnings);
  }
  if (!root) warnings.push_back("no parse tree found");
  return root;
}

}  // namespace

std::string_view to_string(Task task) {
  switch (task) {
    case Task::kSner: return "SNER";
    case Task::kIcsf: return "ICSF";
    case Task::kSsp: return "SSP";
  }
  return "?";
}

Task parse_task(std::string_view name) {
  std::string upper(name);
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (upper == "SNER") return Task::kSner;
  if (upper == "ICSF") return Task::kIcsf;
  if (upper == "SSP") return Task::kSsp;
  throw std::invalid_argument("unknown task '" + std::string(name) + "'");
}

SluRecord SluRecord::sner(std::vector<Entity> entities) {
  SluRecord r;
  r.task = Task::kSner;
  r.entities = std::move(entities);
  return r;
}

SluRecord SluRecord::icsf(std::string intent, std::vector<Entity> entities) {
  SluRecord r;
  r.task = Task::kIcsf;
  r.intent = std::move(intent);
  r.entities = std::move(entities);
  return r;
}

SluRecord SluRecord::ssp(ParseNode tree) {
  SluRecord r;
  r.task = Task::kSsp;
  r.tree = std::move(tree);
  return r;
}

void validate(const SluRecord& record) {
  switch (record.task) {
    case Task::kSner:
      if (!record.intent.empty()) throw ValidationError("intent: must be empty for SNER");
      if (record.tree) throw ValidationError("tree: must be absent for SNER");
      validate_entities(record.entities);
      break;
    case Task::kIcsf:
      if (record.tree) throw ValidationError("tree: must be absent for ICSF");
      validate_label(record.intent, "intent");
      if (record.intent.find('>') != std::string::npos) {
        throw ValidationError("intent: contains '>'");
      }
      validate_entities(record.entities);
      break;
    case Task::kSsp:
      if (!record.entities.empty()) throw ValidationError("entities: must be empty for SSP");
      if (!record.intent.empty()) throw ValidationError("intent: must be empty for SSP");
      if (!record.tree) throw ValidationError("tree: missing for SSP");
      validate_node(*record.tree, "tree", true);
      break;
  }
}

TargetSequence serialize_target(const SluRecord& record) {
  validate(record);
  TargetSequence out;
  switch (record.task) {
    case Task::kSner:
      emit_entities(record.entities, out);
      break;
    case Task::kIcsf:
      out.push_back(intent_token(record.intent));
      emit_entities(record.entities, out);
      out.push_back(intent_token(record.intent));
      break;
    case Task::kSsp:
      emit_tree(*record.tree, out);
      break;
  }
  return out;
}

ParseResult parse_target(Task task, std::span<const std::string> tokens) {
  ParseResult result;
  result.record.task = task;
  auto& warnings = result.warnings;
  switch (task) {
    case Task::kSner:
      result.record.entities = parse_entities(tokens, warnings);
      break;
    case Task::kIcsf: {
      std::size_t begin = 0;
      std::size_t end = tokens.size();
      std::optional<std::string> leading;
      std::optional<std::string> trailing;
      if (end > 0 && is_intent_token(tokens[0])) {
        leading = intent_of(tokens[0]);
        begin = 1;
      }
      if (end > begin && is_intent_token(tokens[end - 1])) {
        trailing = intent_of(tokens[end - 1]);
        --end;
      }
      if (leading && trailing) {
        if (*leading != *trailing) {
          warnings.push_back("leading intent '" + *leading + "' differs from trailing '" +
                             *trailing + "'; leading kept");
        }
        result.record.intent = *leading;
      } else if (leading) {
        warnings.push_back("missing trailing intent");
        result.record.intent = *leading;
      } else if (trailing) {
        warnings.push_back("missing leading intent; trailing used");
        result.record.intent = *trailing;
      } else {
        warnings.push_back("no intent found");
      }
      std::vector<std::string> body;
      body.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        if (is_intent_token(tokens[i])) {
          warnings.push_back("intent token inside body at position " + std::to_string(i) +
                             " dropped");
        } else {
          body.push_back(tokens[i]);
        }
      }
      result.record.entities = parse_entities(body, warnings);
      break;
    }
    case Task::kSsp:
      result.record.tree = parse_tree(tokens, warnings);
      break;
    default:
      throw std::invalid_argument("parse_target: task id out of range");
  }
  return result;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

std::vector<std::string> split_tokens(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream in{std::string(line)};
  std::string tok;
  while (in >> tok) out.push_back(std::move(tok));
  return out;
}

bool is_special_token(std::string_view token) {
  return token == Vocab::kPadToken || token == Vocab::kBosToken ||
         token == Vocab::kEosToken || token == Vocab::kUnkToken;
}

Vocab::Vocab() {
  for (auto t : {kPadToken, kBosToken, kEosToken, kUnkToken}) {
    token_to_id_.emplace(std::string(t), size());
    id_to_token_.emplace_back(t);
  }
}

int Vocab::add(const std::string& token) {
  auto [it, inserted] = token_to_id_.try_emplace(token, size());
  if (inserted) id_to_token_.push_back(token);
  return it->second;
}

bool Vocab::contains(const std::string& token) const {
  return token_to_id_.count(token) != 0;
}

int Vocab::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) {
    throw std::out_of_range("Vocab::token: id " + std::to_string(id) + " out of range");
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(std::span<const std::string> tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocab::decode(std::span<const int> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) {
    if (i >= kNumSpecials && i < size()) out.push_back(token(i));
  }
  return out;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocab '" + path + "'");
  for (const auto& t : id_to_token_) out << t << '\n';
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read vocab '" + path + "'");
  Vocab v;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    if (line_no < kNumSpecials) {
      if (line != v.id_to_token_[static_cast<std::size_t>(line_no)]) {
        throw std::runtime_error("vocab '" + path + "': special token mismatch at line " +
                                 std::to_string(line_no + 1));
      }
    } else if (v.add(line) != line_no) {
      throw std::runtime_error("vocab '" + path + "': duplicate token '" + line + "'");
    }
    ++line_no;
  }
  return v;
}

Vocab build_vocab(std::span<const TargetSequence> corpora, std::span<const std::string> extra) {
  Vocab v;
  for (const auto& seq : corpora) {
    for (const auto& t : seq) v.add(t);
  }
  for (const auto& t : extra) v.add(t);
  return v;
}

}  // namespace unitslu
