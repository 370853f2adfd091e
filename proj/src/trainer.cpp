#include "unitslu/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

namespace unitslu {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr std::uint64_t kShuffleStream = 0x73687566;
constexpr std::uint64_t kDropoutStream = 0x64726f70;

Task dataset_task(const Dataset& data, const char* what) {
  if (data.empty()) throw std::invalid_argument(std::string(what) + " set is empty");
  const Task task = data.front().record.task;
  for (const auto& ex : data) {
    if (ex.record.task != task) {
      throw std::invalid_argument(std::string(what) + " set mixes tasks ('" + ex.id + "')");
    }
  }
  return task;
}

int feature_dim(const Dataset& data) {
  const auto dim = data.front().features.cols();
  for (const auto& ex : data) {
    if (ex.features.cols() != dim) {
      throw std::invalid_argument("utterance '" + ex.id + "' has feature dim " +
                                  std::to_string(ex.features.cols()) + ", expected " +
                                  std::to_string(dim));
    }
    if (ex.features.rows() < 1) throw std::invalid_argument("utterance '" + ex.id + "' has no frames");
  }
  return static_cast<int>(dim);
}

// Argmax with ties to the lowest id.
int argmax(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  int best = 0;
  for (int i = 1; i < row.size(); ++i) {
    if (row[i] > row[best]) best = i;
  }
  return best;
}

Batch batch_for(const Dataset& data, std::span<const std::size_t> items, const TrainedModel& m,
                bool with_aux) {
  std::vector<FeatureMatrix> feats;
  std::vector<std::vector<int>> slu;
  std::vector<std::vector<int>> aux;
  for (std::size_t i : items) {
    const Example& ex = data[i];
    feats.push_back(ex.features);
    slu.push_back(slu_ids(ex, m.slu_vocab));
    if (with_aux) aux.push_back(aux_ids(ex, m.aux, m.aux_vocab));
  }
  return make_batch(feats, slu, aux);
}

json step_json(const StepRecord& s) {
  return {{"type", "step"},         {"step", s.step},        {"l_slu", s.loss.l_slu},
          {"l_aux", s.loss.l_aux},  {"lambda", s.loss.lambda}, {"total", s.loss.total},
          {"lr", s.lr},             {"grad_norm", s.grad_norm}};
}

std::string lr_tag(double lr) {
  std::ostringstream os;
  os << lr;
  return os.str();
}

}  // namespace

std::string_view to_string(AuxTarget aux) {
  switch (aux) {
    case AuxTarget::kUnits:
      return "units";
    case AuxTarget::kText:
      return "text";
    case AuxTarget::kNone:
      return "none";
  }
  return "?";
}

AuxTarget parse_aux_target(std::string_view name) {
  if (name == "units") return AuxTarget::kUnits;
  if (name == "text") return AuxTarget::kText;
  if (name == "none") return AuxTarget::kNone;
  throw std::invalid_argument("unknown auxiliary target '" + std::string(name) +
                              "' (expected units, text or none)");
}

void validate(const TrainConfig& c) {
  if (!(c.lambda >= 0.0 && c.lambda <= 1.0)) {
    throw std::invalid_argument("TrainConfig.lambda must lie in [0, 1]");
  }
  if (c.steps < 1) throw std::invalid_argument("TrainConfig.steps must be >= 1");
  if (!(c.lr >= 0.0)) throw std::invalid_argument("TrainConfig.lr must be >= 0");
  if (c.batch_size < 1) throw std::invalid_argument("TrainConfig.batch_size must be >= 1");
  if (c.eval_every < 0) throw std::invalid_argument("TrainConfig.eval_every must be >= 0");
}

double effective_lambda(const TrainConfig& c) { return c.aux == AuxTarget::kNone ? 0.0 : c.lambda; }

std::string default_dev_metric(Task task) {
  return std::string(task == Task::kSsp ? metric_name::kEmTree : metric_name::kF1);
}

bool RunLog::same_trajectory(const RunLog& o) const {
  return steps == o.steps && evals == o.evals && metric == o.metric &&
         best_score == o.best_score && best_step == o.best_step &&
         checkpoint_path == o.checkpoint_path;
}

void save_runlog(const RunLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write run log '" + path + "'");
  for (const auto& s : log.steps) out << step_json(s).dump() << '\n';
  for (const auto& e : log.evals) {
    json j = {{"type", "eval"}, {"step", e.step}, {"report", json::parse(report_to_json(e.report))}};
    out << j.dump() << '\n';
  }
  json summary = {{"type", "summary"},
                  {"metric", log.metric},
                  {"best_step", log.best_step},
                  {"wall_clock_seconds", log.wall_clock_seconds},
                  {"checkpoint", log.checkpoint_path}};
  summary["best_score"] = log.best_score ? json(*log.best_score) : json(nullptr);
  out << summary.dump() << '\n';
}

RunLog load_runlog(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read run log '" + path + "'");
  RunLog log;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "step") {
        StepRecord s;
        s.step = j.at("step").get<int>();
        s.loss.l_slu = j.at("l_slu").get<double>();
        s.loss.l_aux = j.at("l_aux").get<double>();
        s.loss.lambda = j.at("lambda").get<double>();
        s.loss.total = j.at("total").get<double>();
        s.lr = j.at("lr").get<double>();
        s.grad_norm = j.at("grad_norm").get<double>();
        log.steps.push_back(s);
      } else if (type == "eval") {
        log.evals.push_back({j.at("step").get<int>(), report_from_json(j.at("report").dump())});
      } else if (type == "summary") {
        log.metric = j.at("metric").get<std::string>();
        log.best_step = j.at("best_step").get<int>();
        log.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
        log.checkpoint_path = j.at("checkpoint").get<std::string>();
        if (!j.at("best_score").is_null()) log.best_score = j.at("best_score").get<double>();
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("run log '" + path + "' line " + std::to_string(line_no) + ": " +
                               e.what());
    }
  }
  for (std::size_t i = 1; i < log.steps.size(); ++i) {
    if (log.steps[i].step <= log.steps[i - 1].step) {
      throw std::runtime_error("run log '" + path + "': step indices are not increasing");
    }
  }
  return log;
}

// ---- vocabularies ----------------------------------------------------------

Vocab slu_vocab_for(const Dataset& data) {
  std::vector<TargetSequence> corpora;
  corpora.reserve(data.size());
  for (const auto& ex : data) corpora.push_back(serialize_target(ex.record));
  return build_vocab(corpora);
}

Vocab aux_vocab_for(const Dataset& data, AuxTarget aux) {
  Vocab v;
  if (aux == AuxTarget::kText) {
    std::vector<TargetSequence> corpora;
    for (const auto& ex : data) corpora.push_back(ex.transcript);
    return build_vocab(corpora);
  }
  // Units keep their numeric order so unit u always maps to id u + 4.
  int max_unit = -1;
  for (const auto& ex : data) {
    for (int u : ex.units) {
      if (u < 0) throw std::invalid_argument("utterance '" + ex.id + "' has a negative unit id");
      max_unit = std::max(max_unit, u);
    }
  }
  for (int u = 0; u <= max_unit; ++u) v.add(std::to_string(u));
  return v;
}

std::vector<int> slu_ids(const Example& ex, const Vocab& vocab) {
  return vocab.encode(serialize_target(ex.record));
}

std::vector<int> aux_ids(const Example& ex, AuxTarget aux, const Vocab& vocab) {
  switch (aux) {
    case AuxTarget::kText:
      if (ex.transcript.empty()) {
        throw std::invalid_argument("utterance '" + ex.id + "' has no transcript for aux=text");
      }
      return vocab.encode(ex.transcript);
    case AuxTarget::kUnits: {
      if (ex.units.empty()) {
        throw std::invalid_argument("utterance '" + ex.id + "' has no units for aux=units");
      }
      std::vector<int> ids;
      ids.reserve(ex.units.size());
      for (int u : ex.units) ids.push_back(vocab.id(std::to_string(u)));
      return ids;
    }
    case AuxTarget::kNone:
      break;
  }
  return {};
}

// ---- training --------------------------------------------------------------

TrainResult train(const TrainConfig& config, const ModelConfig& model_config,
                  const Dataset& train_set, const Dataset& dev_set) {
  validate(config);
  const Task task = dataset_task(train_set, "training");
  if (!dev_set.empty() && dataset_task(dev_set, "dev") != task) {
    throw std::invalid_argument("dev set task differs from the training set");
  }
  const double lambda = effective_lambda(config);
  const bool with_aux = config.aux != AuxTarget::kNone;
  const auto start = std::chrono::steady_clock::now();

  TrainResult result;
  TrainedModel& model = result.model;
  model.task = task;
  model.aux = config.aux;
  model.slu_vocab = slu_vocab_for(train_set);
  model.aux_vocab = aux_vocab_for(train_set, config.aux == AuxTarget::kText ? AuxTarget::kText
                                                                           : AuxTarget::kUnits);
  if (with_aux) {
    for (const auto& ex : train_set) aux_ids(ex, config.aux, model.aux_vocab);
  }

  ModelConfig mc = model_config;
  mc.input_dim = feature_dim(train_set);
  if (!dev_set.empty() && feature_dim(dev_set) != mc.input_dim) {
    throw std::invalid_argument("dev features differ in dimension from training features");
  }
  mc.slu_vocab_size = model.slu_vocab.size();
  mc.unit_vocab_size = model.aux_vocab.size();
  mc.seed = config.seed;
  Parameters params = build_model(mc);
  OptimizerState state = OptimizerState::for_params(params);

  RunLog& log = result.log;
  log.metric = config.dev_metric.empty() ? default_dev_metric(task) : config.dev_metric;
  const bool lower_better = is_error_rate(log.metric);
  result.model.params = params;
  result.state = state;

  auto run_eval = [&](int step) {
    if (dev_set.empty()) return;
    TrainedModel current{task, config.aux, model.slu_vocab, model.aux_vocab, params};
    const std::vector<std::string> metrics = {log.metric};
    MetricReport report = evaluate(greedy_predictor(current), dev_set, task, metrics);
    log.evals.push_back({step, report});
    if (!report.has(log.metric)) return;  // undefined on this dev set
    const double score = report.at(log.metric);
    const bool improved = !log.best_score || (lower_better ? score < *log.best_score
                                                          : score > *log.best_score);
    if (improved) {
      log.best_score = score;
      log.best_step = step;
      result.model.params = params;
      result.state = state;
    }
  };

  std::vector<std::size_t> order(train_set.size());
  std::size_t cursor = order.size();
  std::uint64_t epoch = 0;
  const std::size_t batch_size = static_cast<std::size_t>(config.batch_size);
  for (int step = 1; step <= config.steps; ++step) {
    if (cursor >= order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::mt19937_64 rng(derive_seed(derive_seed(config.seed, kShuffleStream), epoch++));
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const std::size_t n = std::min(batch_size, order.size() - cursor);
    const Batch batch =
        batch_for(train_set, std::span(order).subspan(cursor, n), model, with_aux);
    cursor += n;

    ForwardOptions fo;
    fo.train = true;
    fo.dropout_seed = derive_seed(derive_seed(config.seed, kDropoutStream),
                                  static_cast<std::uint64_t>(step));
    StepResult sr;
    try {
      sr = backward_step(params, batch, lambda, state, config.lr, fo);
    } catch (const std::runtime_error& e) {
      throw DivergenceError(step, e.what());
    }
    log.steps.push_back({step, sr.loss, config.lr, sr.grad_norm});

    if (config.eval_every > 0 && step % config.eval_every == 0) run_eval(step);
  }
  if (config.eval_every == 0 || config.steps % config.eval_every != 0) run_eval(config.steps);
  if (dev_set.empty() || !log.best_score) {
    log.best_step = config.steps;
    result.model.params = params;
    result.state = state;
  }

  if (!config.checkpoint_dir.empty()) {
    save_trained(config.checkpoint_dir, result.model, result.state);
    log.checkpoint_path = (fs::path(config.checkpoint_dir) / "checkpoint.bin").string();
  }
  log.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!config.checkpoint_dir.empty()) {
    save_runlog(log, (fs::path(config.checkpoint_dir) / "runlog.jsonl").string());
  }
  return result;
}

// ---- evaluation ------------------------------------------------------------

Predictor greedy_predictor(const TrainedModel& model) {
  return [&model](const Example& ex) {
    const auto ids = greedy_decode(model.params, ex.features, DecoderHead::kSlu,
                                   model.params.config().max_decode_len);
    return model.slu_vocab.decode(ids);
  };
}

MetricReport evaluate(const Predictor& predictor, const Dataset& data, Task task,
                      std::span<const std::string> metrics, std::vector<SluRecord>* predictions) {
  std::vector<SluRecord> preds;
  std::vector<SluRecord> golds;
  preds.reserve(data.size());
  golds.reserve(data.size());
  for (const auto& ex : data) {
    if (ex.record.task != task) {
      throw std::invalid_argument("utterance '" + ex.id + "' is not a " +
                                  std::string(to_string(task)) + " example");
    }
    const TargetSequence tokens = predictor(ex);
    preds.push_back(parse_target(task, tokens).record);
    golds.push_back(ex.record);
  }
  MetricReport report = compute_report(task, preds, golds, metrics);
  if (predictions) *predictions = std::move(preds);
  return report;
}

MetricReport evaluate(const TrainedModel& model, const Dataset& data,
                      std::span<const std::string> metrics) {
  const ModelConfig& c = model.params.config();
  if (c.slu_vocab_size != model.slu_vocab.size()) {
    throw std::runtime_error("checkpoint SLU vocabulary size " + std::to_string(c.slu_vocab_size) +
                             " does not match vocabulary file (" +
                             std::to_string(model.slu_vocab.size()) + " tokens)");
  }
  if (c.unit_vocab_size != model.aux_vocab.size()) {
    throw std::runtime_error("checkpoint auxiliary vocabulary size does not match vocabulary file");
  }
  for (const auto& ex : data) {
    if (ex.features.cols() != c.input_dim) {
      throw std::runtime_error("utterance '" + ex.id + "' has feature dim " +
                               std::to_string(ex.features.cols()) + " but the model expects " +
                               std::to_string(c.input_dim));
    }
    if (ex.record.task != model.task) {
      throw std::runtime_error("utterance '" + ex.id + "' task does not match the model (" +
                               std::string(to_string(model.task)) + ")");
    }
  }
  return evaluate(greedy_predictor(model), data, model.task, metrics);
}

double teacher_forced_accuracy(const TrainedModel& model, const Dataset& data) {
  std::size_t correct = 0;
  std::size_t total = 0;
  for (const auto& ex : data) {
    const std::vector<FeatureMatrix> feats = {ex.features};
    const std::vector<std::vector<int>> slu = {slu_ids(ex, model.slu_vocab)};
    const Batch batch = make_batch(feats, slu);
    const ForwardResult fr = forward(model.params, batch, 0.0);
    const Matrix& logits = fr.slu_logits.front();
    const auto& row = batch.slu_targets.front();
    for (Eigen::Index t = 0; t < logits.rows(); ++t) {
      correct += argmax(logits.row(t)) == row[static_cast<std::size_t>(t) + 1];
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

double greedy_exact_match(const TrainedModel& model, const Dataset& data) {
  if (data.empty()) return 0.0;
  const Predictor predict = greedy_predictor(model);
  std::size_t hits = 0;
  for (const auto& ex : data) hits += predict(ex) == serialize_target(ex.record);
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

// ---- persistence -----------------------------------------------------------

void save_trained(const std::string& dir, const TrainedModel& model, const OptimizerState& state) {
  const fs::path base(dir);
  fs::create_directories(base);
  save_checkpoint((base / "checkpoint.bin").string(), model.params, state);
  model.slu_vocab.save((base / "slu_vocab.txt").string());
  model.aux_vocab.save((base / "aux_vocab.txt").string());
  std::ofstream meta(base / "meta.json");
  if (!meta) throw std::runtime_error("cannot write '" + (base / "meta.json").string() + "'");
  meta << json{{"task", std::string(to_string(model.task))},
               {"aux", std::string(to_string(model.aux))}}
              .dump(2)
       << '\n';
}

TrainedModel load_trained(const std::string& dir) {
  const fs::path base(dir);
  std::ifstream meta(base / "meta.json");
  if (!meta) throw std::runtime_error("'" + dir + "' is not a checkpoint directory (no meta.json)");
  TrainedModel m;
  try {
    const json j = json::parse(meta);
    m.task = parse_task(j.at("task").get<std::string>());
    m.aux = parse_aux_target(j.at("aux").get<std::string>());
  } catch (const std::exception& e) {
    throw std::runtime_error("'" + (base / "meta.json").string() + "': " + e.what());
  }
  m.slu_vocab = Vocab::load((base / "slu_vocab.txt").string());
  m.aux_vocab = Vocab::load((base / "aux_vocab.txt").string());
  m.params = load_checkpoint((base / "checkpoint.bin").string()).params;
  return m;
}

// ---- few-shot --------------------------------------------------------------

std::vector<std::size_t> few_shot_indices(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("few-shot fraction must lie in (0, 1]");
  }
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (k == 0) {
    throw std::invalid_argument("few-shot fraction " + std::to_string(fraction) + " of " +
                                std::to_string(n) + " items selects nothing");
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

Dataset subsample_few_shot(const Dataset& data, double fraction, std::uint64_t seed) {
  Dataset out;
  for (std::size_t i : few_shot_indices(data.size(), fraction, seed)) out.push_back(data[i]);
  return out;
}

// ---- grid search -----------------------------------------------------------

SearchGrid SearchGrid::full() { return {{2e-5, 6e-5, 2e-4, 6e-4, 2e-3}, {96, 192, 384}}; }

bool better_run(const SearchRun& a, const SearchRun& b, std::string_view metric) {
  const bool a_ok = a.log && a.log->best_score;
  const bool b_ok = b.log && b.log->best_score;
  if (a_ok != b_ok) return a_ok;
  if (a_ok) {
    const double sa = *a.log->best_score;
    const double sb = *b.log->best_score;
    if (sa != sb) return is_error_rate(metric) ? sa < sb : sa > sb;
  }
  if (a.config.lr != b.config.lr) return a.config.lr < b.config.lr;
  return a.config.batch_size < b.config.batch_size;
}

SearchResult hyper_search(const TrainConfig& base, const SearchGrid& grid,
                          const ModelConfig& model_config, const Dataset& train_set,
                          const Dataset& dev_set) {
  if (grid.lrs.empty() || grid.batch_sizes.empty()) {
    throw std::invalid_argument("hyper_search: empty grid");
  }
  SearchResult result;
  for (double lr : grid.lrs) {
    for (int bs : grid.batch_sizes) {
      SearchRun run;
      run.config = base;
      run.config.lr = lr;
      run.config.batch_size = bs;
      if (!base.checkpoint_dir.empty()) {
        run.config.checkpoint_dir =
            (fs::path(base.checkpoint_dir) / ("lr" + lr_tag(lr) + "_bs" + std::to_string(bs)))
                .string();
      }
      try {
        run.log = train(run.config, model_config, train_set, dev_set).log;
      } catch (const DivergenceError& e) {
        run.error = e.what();
      }
      result.runs.push_back(std::move(run));
    }
  }
  const SearchRun* best = nullptr;
  for (const auto& run : result.runs) {
    if (!run.log) continue;
    if (!best || better_run(run, *best, best->log->metric)) best = &run;
  }
  if (!best) throw std::runtime_error("hyper_search: every grid point diverged");
  result.best = best->config;
  result.best_log = *best->log;
  return result;
}

}  // namespace unitslu
