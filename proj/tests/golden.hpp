#pragma once

// Loader for golden/metrics_golden.json: each case lists gold and predicted
// target strings and the hand-computed metric values.

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "unitslu/metrics.hpp"
#include "unitslu/serialization.hpp"

namespace golden {

struct Mismatch {
  std::string case_name;
  std::string metric;
  double expected = 0.0;
  double actual = 0.0;
};

struct Outcome {
  int cases = 0;
  std::vector<Mismatch> mismatches;
};

inline std::vector<unitslu::SluRecord> parse_all(unitslu::Task task,
                                                 const nlohmann::json& lines) {
  std::vector<unitslu::SluRecord> out;
  for (const auto& line : lines) {
    const auto tokens = unitslu::split_tokens(line.get<std::string>());
    out.push_back(unitslu::parse_target(task, tokens).record);
  }
  return out;
}

inline Outcome check_metrics_golden(const std::string& path, double tol = 1e-12) {
  std::ifstream in(path);
  const auto doc = nlohmann::json::parse(in);
  Outcome out;
  for (const auto& c : doc.at("cases")) {
    ++out.cases;
    const auto name = c.at("name").get<std::string>();
    const auto task = unitslu::parse_task(c.at("task").get<std::string>());
    const auto golds = parse_all(task, c.at("golds"));
    const auto preds = parse_all(task, c.at("preds"));
    const auto report = unitslu::compute_report(task, preds, golds);
    for (const auto& [metric, value] : c.at("expected").items()) {
      const double expected = value.get<double>();
      const double actual = report.has(metric) ? report.at(metric) : NAN;
      if (!(std::abs(actual - expected) <= tol)) {
        out.mismatches.push_back({name, metric, expected, actual});
      }
    }
    if (report.values.size() != c.at("expected").size()) {
      out.mismatches.push_back({name, "<metric set>", static_cast<double>(c.at("expected").size()),
                                static_cast<double>(report.values.size())});
    }
    if (c.contains("sv_cer_utterance_mean")) {
      const double expected = c.at("sv_cer_utterance_mean").get<double>();
      const double actual = report.sv_cer_utterance_mean.value_or(NAN);
      if (!(std::abs(actual - expected) <= tol)) {
        out.mismatches.push_back({name, "SV-CER utterance mean", expected, actual});
      }
    }
  }
  return out;
}

}  // namespace golden
