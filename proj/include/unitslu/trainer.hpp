#pragma once

// Multi-task training loop, evaluation, few-shot subsampling and the
// learning-rate / batch-size grid search.

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "unitslu/data.hpp"
#include "unitslu/metrics.hpp"
#include "unitslu/model.hpp"
#include "unitslu/serialization.hpp"

namespace unitslu {

/// What the auxiliary decoder predicts. kNone trains the SLU decoder alone.
enum class AuxTarget { kUnits, kText, kNone };

std::string_view to_string(AuxTarget aux);
AuxTarget parse_aux_target(std::string_view name);

struct TrainConfig {
  double lambda = 0.5;
  int steps = 10000;
  double lr = 2e-4;
  int batch_size = 16;  // utterances per step
  std::uint64_t seed = 0;
  int eval_every = 0;   // 0: evaluate on dev only after the last step
  AuxTarget aux = AuxTarget::kUnits;
  /// Empty: the task default (F1 for SNER/ICSF, EM-Tree for SSP).
  std::string dev_metric;
  /// Empty: nothing written to disk.
  std::string checkpoint_dir;

  bool operator==(const TrainConfig&) const = default;
};

inline constexpr int kDefaultSteps = 10000;
inline constexpr int kFewShotSteps = 5000;

/// Throws std::invalid_argument. Note aux == kNone with lambda != 0 is accepted
/// and lambda is treated as 0.
void validate(const TrainConfig& config);

/// The lambda the loop actually uses.
double effective_lambda(const TrainConfig& config);

std::string default_dev_metric(Task task);

struct StepRecord {
  int step = 0;
  LossBreakdown loss;
  double lr = 0.0;
  double grad_norm = 0.0;

  bool operator==(const StepRecord& o) const {
    return step == o.step && loss.l_slu == o.loss.l_slu && loss.l_aux == o.loss.l_aux &&
           loss.lambda == o.loss.lambda && loss.total == o.loss.total && lr == o.lr &&
           grad_norm == o.grad_norm;
  }
};

struct EvalRecord {
  int step = 0;
  MetricReport report;

  bool operator==(const EvalRecord&) const = default;
};

struct RunLog {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  std::string metric;
  std::optional<double> best_score;
  int best_step = 0;
  double wall_clock_seconds = 0.0;
  std::string checkpoint_path;

  /// Equality ignoring wall-clock time.
  bool same_trajectory(const RunLog& other) const;
};

void save_runlog(const RunLog& log, const std::string& path);
RunLog load_runlog(const std::string& path);

/// A trained model plus the vocabularies needed to use it.
struct TrainedModel {
  Task task = Task::kSner;
  AuxTarget aux = AuxTarget::kUnits;
  Vocab slu_vocab;
  Vocab aux_vocab;
  Parameters params;
};

struct TrainResult {
  RunLog log;
  TrainedModel model;          // best dev checkpoint
  OptimizerState state;        // optimizer state at the best step
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(int step, const std::string& what)
      : std::runtime_error("training diverged at step " + std::to_string(step) + ": " + what),
        step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

/// Vocabularies derived from a training set. Units are tokenised as their
/// decimal id; when no unit targets exist the auxiliary vocabulary holds only
/// the special tokens.
Vocab slu_vocab_for(const Dataset& data);
Vocab aux_vocab_for(const Dataset& data, AuxTarget aux);

/// Token id sequences (without BOS/EOS) for each decoder.
std::vector<int> slu_ids(const Example& ex, const Vocab& vocab);
std::vector<int> aux_ids(const Example& ex, AuxTarget aux, const Vocab& vocab);

/// Runs `config.steps` Adam steps. `model_config` supplies the architecture;
/// its input_dim, vocabulary sizes and seed are overwritten from the data and
/// `config.seed`. Throws DivergenceError on a non-finite loss or gradient.
TrainResult train(const TrainConfig& config, const ModelConfig& model_config,
                  const Dataset& train_set, const Dataset& dev_set);

/// Maps an utterance to a predicted target sequence.
using Predictor = std::function<TargetSequence(const Example&)>;

Predictor greedy_predictor(const TrainedModel& model);

/// Parses every prediction tolerantly and scores it against the gold records.
MetricReport evaluate(const Predictor& predictor, const Dataset& data, Task task,
                      std::span<const std::string> metrics = {},
                      std::vector<SluRecord>* predictions = nullptr);

/// Throws std::runtime_error when the model does not fit the data.
MetricReport evaluate(const TrainedModel& model, const Dataset& data,
                      std::span<const std::string> metrics = {});

/// Fraction of SLU target positions (EOS included) predicted correctly under
/// teacher forcing.
double teacher_forced_accuracy(const TrainedModel& model, const Dataset& data);

/// Fraction of utterances whose greedy SLU output equals the gold sequence.
double greedy_exact_match(const TrainedModel& model, const Dataset& data);

/// checkpoint.bin, slu_vocab.txt, aux_vocab.txt and meta.json under `dir`.
void save_trained(const std::string& dir, const TrainedModel& model, const OptimizerState& state);
TrainedModel load_trained(const std::string& dir);

/// round(fraction * N) items drawn without replacement, in original order.
Dataset subsample_few_shot(const Dataset& data, double fraction, std::uint64_t seed);
std::vector<std::size_t> few_shot_indices(std::size_t n, double fraction, std::uint64_t seed);

struct SearchGrid {
  std::vector<double> lrs;
  std::vector<int> batch_sizes;

  /// lr in {2e-5, 6e-5, 2e-4, 6e-4, 2e-3}, batch size in {96, 192, 384}.
  static SearchGrid full();
};

struct SearchRun {
  TrainConfig config;
  std::optional<RunLog> log;  // empty when the run diverged
  std::string error;
};

struct SearchResult {
  TrainConfig best;
  RunLog best_log;
  std::vector<SearchRun> runs;
};

/// Higher is better unless the metric is an error rate; ties prefer the
/// smaller lr, then the smaller batch size.
bool better_run(const SearchRun& a, const SearchRun& b, std::string_view metric);

/// Trains every grid point and keeps the best dev score. Throws
/// std::runtime_error when every run diverged.
SearchResult hyper_search(const TrainConfig& base, const SearchGrid& grid,
                          const ModelConfig& model_config, const Dataset& train_set,
                          const Dataset& dev_set);

}  // namespace unitslu
