#include "unitslu/metrics.hpp"

#include <iomanip>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace unitslu {
namespace {

void check_aligned(std::size_t preds, std::size_t golds, const char* who) {
  if (preds != golds) {
    throw std::invalid_argument(std::string(who) + ": " + std::to_string(preds) +
                                " predictions vs " + std::to_string(golds) + " references");
  }
}

std::string value_string(const Entity& e) { return join_tokens(e.value); }

std::string slot_key(const Entity& e, SlotMatch mode) {
  if (mode == SlotMatch::kTypeOnly) return e.slot_type;
  // '\n' never occurs inside a validated token.
  return e.slot_type + '\n' + value_string(e);
}

double f1_from(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

struct ValueErrors {
  std::size_t edits = 0;
  std::size_t gold_chars = 0;
};

ValueErrors utterance_value_errors(const std::vector<Entity>& pred,
                                   const std::vector<Entity>& gold) {
  ValueErrors acc;
  for (const auto& pair : pair_slots(pred, gold)) {
    if (pair.pred && pair.gold) {
      const std::string p = value_string(*pair.pred);
      const std::string g = value_string(*pair.gold);
      acc.edits += edit_distance(p, g).distance();
      acc.gold_chars += g.size();
    } else if (pair.gold) {
      const std::size_t len = value_string(*pair.gold).size();
      acc.edits += len;
      acc.gold_chars += len;
    } else {
      acc.edits += value_string(*pair.pred).size();
    }
  }
  return acc;
}

}  // namespace

double token_error_rate(std::string_view hyp, std::string_view ref, Granularity granularity) {
  if (granularity == Granularity::kChar) {
    if (ref.empty()) throw UndefinedRateError("token_error_rate: empty reference");
    const auto c = edit_distance(hyp, ref);
    return static_cast<double>(c.distance()) / static_cast<double>(c.ref_len);
  }
  const auto h = split_tokens(hyp);
  const auto r = split_tokens(ref);
  if (r.empty()) throw UndefinedRateError("token_error_rate: empty reference");
  const auto c = edit_distance(h, r);
  return static_cast<double>(c.distance()) / static_cast<double>(c.ref_len);
}

std::vector<SlotPair> pair_slots(const std::vector<Entity>& pred, const std::vector<Entity>& gold) {
  std::vector<SlotPair> pairs;
  std::vector<bool> pred_used(pred.size(), false);
  std::vector<bool> gold_used(gold.size(), false);

  for (std::size_t g = 0; g < gold.size(); ++g) {
    for (std::size_t p = 0; p < pred.size(); ++p) {
      if (!pred_used[p] && pred[p] == gold[g]) {
        pred_used[p] = gold_used[g] = true;
        pairs.push_back({pred[p], gold[g]});
        break;
      }
    }
  }
  for (std::size_t g = 0; g < gold.size(); ++g) {
    if (gold_used[g]) continue;
    for (std::size_t p = 0; p < pred.size(); ++p) {
      if (!pred_used[p] && pred[p].slot_type == gold[g].slot_type) {
        pred_used[p] = gold_used[g] = true;
        pairs.push_back({pred[p], gold[g]});
        break;
      }
    }
    if (!gold_used[g]) pairs.push_back({std::nullopt, gold[g]});
  }
  for (std::size_t p = 0; p < pred.size(); ++p) {
    if (!pred_used[p]) pairs.push_back({pred[p], std::nullopt});
  }
  return pairs;
}

double slot_f1(std::span<const SluRecord> preds, std::span<const SluRecord> golds,
               SlotMatch mode) {
  check_aligned(preds.size(), golds.size(), "slot_f1");
  std::size_t tp = 0;
  std::size_t n_pred = 0;
  std::size_t n_gold = 0;
  for (std::size_t u = 0; u < preds.size(); ++u) {
    std::unordered_map<std::string, long> counts;
    for (const auto& e : golds[u].entities) ++counts[slot_key(e, mode)];
    for (const auto& e : preds[u].entities) {
      auto it = counts.find(slot_key(e, mode));
      if (it != counts.end() && it->second > 0) {
        --it->second;
        ++tp;
      }
    }
    n_pred += preds[u].entities.size();
    n_gold += golds[u].entities.size();
  }
  const double p = n_pred ? static_cast<double>(tp) / static_cast<double>(n_pred) : 0.0;
  const double r = n_gold ? static_cast<double>(tp) / static_cast<double>(n_gold) : 0.0;
  return f1_from(p, r);
}

double slot_value_cer(std::span<const SluRecord> preds, std::span<const SluRecord> golds) {
  check_aligned(preds.size(), golds.size(), "slot_value_cer");
  ValueErrors total;
  for (std::size_t u = 0; u < preds.size(); ++u) {
    const auto e = utterance_value_errors(preds[u].entities, golds[u].entities);
    total.edits += e.edits;
    total.gold_chars += e.gold_chars;
  }
  if (total.gold_chars == 0) {
    throw UndefinedRateError("slot_value_cer: references contain no slot-value characters");
  }
  return static_cast<double>(total.edits) / static_cast<double>(total.gold_chars);
}

std::optional<double> slot_value_cer_utterance_mean(std::span<const SluRecord> preds,
                                                    std::span<const SluRecord> golds) {
  check_aligned(preds.size(), golds.size(), "slot_value_cer_utterance_mean");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t u = 0; u < preds.size(); ++u) {
    const auto e = utterance_value_errors(preds[u].entities, golds[u].entities);
    if (e.gold_chars == 0) continue;
    sum += static_cast<double>(e.edits) / static_cast<double>(e.gold_chars);
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

double slu_f1(std::span<const SluRecord> preds, std::span<const SluRecord> golds) {
  check_aligned(preds.size(), golds.size(), "slu_f1");
  double credit = 0.0;
  std::size_t n_pred = 0;
  std::size_t n_gold = 0;
  for (std::size_t u = 0; u < preds.size(); ++u) {
    for (const auto& pair : pair_slots(preds[u].entities, golds[u].entities)) {
      if (!pair.pred || !pair.gold) continue;
      const std::string p = value_string(*pair.pred);
      const std::string g = value_string(*pair.gold);
      const double cer = token_error_rate(p, g, Granularity::kChar);
      const double wer = token_error_rate(p, g, Granularity::kWord);
      credit += 1.0 - std::min(1.0, (cer + wer) / 2.0);
    }
    n_pred += preds[u].entities.size();
    n_gold += golds[u].entities.size();
  }
  const double p = n_pred ? credit / static_cast<double>(n_pred) : 0.0;
  const double r = n_gold ? credit / static_cast<double>(n_gold) : 0.0;
  return f1_from(p, r);
}

double intent_accuracy(std::span<const SluRecord> preds, std::span<const SluRecord> golds) {
  check_aligned(preds.size(), golds.size(), "intent_accuracy");
  if (golds.empty()) throw UndefinedRateError("intent_accuracy: empty corpus");
  std::size_t correct = 0;
  for (std::size_t u = 0; u < preds.size(); ++u) {
    if (golds[u].intent.empty()) {
      throw std::invalid_argument("intent_accuracy: reference " + std::to_string(u) +
                                  " has no intent");
    }
    if (preds[u].intent == golds[u].intent) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(golds.size());
}

double em_tree(std::span<const SluRecord> preds, std::span<const SluRecord> golds) {
  check_aligned(preds.size(), golds.size(), "em_tree");
  if (golds.empty()) throw UndefinedRateError("em_tree: empty corpus");
  std::size_t correct = 0;
  for (std::size_t u = 0; u < preds.size(); ++u) {
    if (!golds[u].tree) {
      throw std::invalid_argument("em_tree: reference " + std::to_string(u) + " has no tree");
    }
    if (preds[u].tree == golds[u].tree) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(golds.size());
}

bool is_error_rate(std::string_view metric) { return metric == metric_name::kSvCer; }

double MetricReport::at(std::string_view name) const {
  auto it = values.find(std::string(name));
  if (it == values.end()) {
    throw std::out_of_range("metric '" + std::string(name) + "' not in report");
  }
  return it->second;
}

std::vector<std::string> metrics_for_task(Task task) {
  using namespace metric_name;
  switch (task) {
    case Task::kSner:
      return {std::string(kF1), std::string(kSlotTypeF1), std::string(kSvCer)};
    case Task::kIcsf:
      return {std::string(kF1), std::string(kSlotTypeF1), std::string(kSvCer),
              std::string(kSluF1), std::string(kIntentAcc)};
    case Task::kSsp:
      return {std::string(kEmTree)};
  }
  return {};
}

std::vector<std::string> metrics_for_dataset(std::string_view dataset) {
  using namespace metric_name;
  auto s = [](std::string_view v) { return std::string(v); };
  if (dataset == "ATIS") return {s(kF1), s(kSlotTypeF1), s(kIntentAcc)};
  if (dataset == "SLUE-SNER") return {s(kF1), s(kSlotTypeF1), s(kSvCer)};
  if (dataset == "SLURP") return {s(kSluF1), s(kIntentAcc)};
  if (dataset == "SNIPS") return {s(kSlotTypeF1), s(kSvCer), s(kIntentAcc)};
  if (dataset == "STOP") return {s(kEmTree)};
  throw std::invalid_argument("unknown dataset profile '" + std::string(dataset) + "'");
}

MetricReport compute_report(Task task, std::span<const SluRecord> preds,
                            std::span<const SluRecord> golds,
                            std::span<const std::string> metrics) {
  check_aligned(preds.size(), golds.size(), "compute_report");
  const std::vector<std::string> names =
      metrics.empty() ? metrics_for_task(task)
                      : std::vector<std::string>(metrics.begin(), metrics.end());
  MetricReport report;
  report.utterances = golds.size();
  for (const auto& name : names) {
    using namespace metric_name;
    if (name == kF1) {
      report.values[name] = slot_f1(preds, golds, SlotMatch::kFull);
    } else if (name == kSlotTypeF1) {
      report.values[name] = slot_f1(preds, golds, SlotMatch::kTypeOnly);
    } else if (name == kSvCer) {
      // Corpora without any gold slot value leave SV-CER undefined; omit it.
      try {
        report.values[name] = slot_value_cer(preds, golds);
        report.sv_cer_utterance_mean = slot_value_cer_utterance_mean(preds, golds);
      } catch (const UndefinedRateError&) {
      }
    } else if (name == kSluF1) {
      report.values[name] = slu_f1(preds, golds);
    } else if (name == kIntentAcc) {
      report.values[name] = intent_accuracy(preds, golds);
    } else if (name == kEmTree) {
      report.values[name] = em_tree(preds, golds);
    } else {
      throw std::invalid_argument("unknown metric '" + name + "'");
    }
  }
  return report;
}

std::string format_report(const MetricReport& report) {
  std::ostringstream out;
  out << std::setprecision(6) << std::fixed;
  for (const auto& [name, value] : report.values) out << name << '=' << value << '\n';
  if (report.sv_cer_utterance_mean) {
    out << "SV-CER-utterance-mean=" << *report.sv_cer_utterance_mean << '\n';
  }
  out << "utterances=" << report.utterances << '\n';
  return out.str();
}

std::string report_to_json(const MetricReport& report) {
  nlohmann::json j;
  j["metrics"] = report.values;
  j["utterances"] = report.utterances;
  j["sv_cer_utterance_mean"] =
      report.sv_cer_utterance_mean ? nlohmann::json(*report.sv_cer_utterance_mean)
                                   : nlohmann::json(nullptr);
  return j.dump(2);
}

MetricReport report_from_json(std::string_view json) {
  const auto j = nlohmann::json::parse(json);
  MetricReport report;
  report.values = j.at("metrics").get<std::map<std::string, double>>();
  report.utterances = j.at("utterances").get<std::size_t>();
  if (!j.at("sv_cer_utterance_mean").is_null()) {
    report.sv_cer_utterance_mean = j.at("sv_cer_utterance_mean").get<double>();
  }
  return report;
}

}  // namespace unitslu
