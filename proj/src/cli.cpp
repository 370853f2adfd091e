#include "unitslu/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "unitslu/augment.hpp"
#include "unitslu/data.hpp"
#include "unitslu/metrics.hpp"
#include "unitslu/model.hpp"
#include "unitslu/quantizer.hpp"
#include "unitslu/trainer.hpp"

namespace unitslu {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string> kTaskNames = {"SNER", "ICSF", "SSP"};
const std::vector<std::string> kAuxNames = {"units", "text", "none"};

struct SynthOptions {
  SynthConfig config;
  std::string task = "SNER";
  int train_size = 0;
  int dev_size = 0;
  int test_size = 0;
  std::string out;
};

struct QuantizeOptions {
  std::vector<std::string> manifests;
  KMeansOptions kmeans;
  std::string codebook;
  std::string out;
};

struct AugmentOptions {
  std::string manifest;
  std::vector<std::string> noise;
  bool speed_3x = false;
  std::uint64_t seed = 0;
  std::string out;
};

struct TrainOptions {
  TrainConfig train;
  ModelConfig model;
  std::string aux = "units";
  std::string train_manifest;
  std::string dev_manifest;
  double fraction = 1.0;
  std::string out;
  // search only
  std::vector<double> lrs = SearchGrid::full().lrs;
  std::vector<int> batch_sizes = {8, 16, 32};
};

struct EvaluateOptions {
  std::string checkpoint;
  std::string manifest;
  std::string stub;
  std::string task;
  std::string dataset;
  std::string out;
};

struct GradCheckCliOptions {
  ModelConfig model = tiny_config();
  std::vector<double> lambdas = {0.0, 0.5, 1.0};
  GradCheckOptions check;
  std::string corrupt;
  int batch = 2;
  std::uint64_t seed = 0;
};

void add_model_options(CLI::App* sub, ModelConfig& m) {
  sub->add_option("--enc-layers", m.enc_layers, "Encoder layers")->capture_default_str();
  sub->add_option("--slu-layers", m.slu_dec_layers, "SLU decoder layers")->capture_default_str();
  sub->add_option("--unit-layers", m.unit_dec_layers, "Auxiliary decoder layers")
      ->capture_default_str();
  sub->add_option("--d-model", m.d_model, "Model width")->capture_default_str();
  sub->add_option("--heads", m.heads, "Attention heads")->capture_default_str();
  sub->add_option("--ffn-dim", m.ffn_dim, "Feed-forward hidden size")->capture_default_str();
  sub->add_option("--dropout", m.dropout, "Dropout probability")->capture_default_str();
  sub->add_option("--max-decode-len", m.max_decode_len, "Greedy decoding cap")
      ->capture_default_str();
}

void add_train_options(CLI::App* sub, TrainOptions& o, bool search) {
  sub->add_option("--train", o.train_manifest, "Training manifest")->required();
  sub->add_option("--dev", o.dev_manifest, "Dev manifest (model selection)");
  sub->add_option("--seed", o.train.seed, "Seed for init, shuffling and dropout")
      ->capture_default_str();
  sub->add_option("--lambda", o.train.lambda, "Auxiliary loss weight")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  sub->add_option("--steps", o.train.steps, "Optimizer steps (5000 when --fraction < 1)")
      ->capture_default_str();
  if (!search) {
    sub->add_option("--lr", o.train.lr, "Learning rate")->capture_default_str();
    sub->add_option("--batch-size", o.train.batch_size, "Utterances per step")
        ->capture_default_str();
  } else {
    sub->add_option("--lrs", o.lrs, "Learning-rate grid")->capture_default_str();
    sub->add_option("--batch-sizes", o.batch_sizes, "Batch-size grid")->capture_default_str();
  }
  sub->add_option("--aux", o.aux, "Auxiliary target")
      ->check(CLI::IsMember(kAuxNames))
      ->capture_default_str();
  sub->add_option("--fraction", o.fraction, "Few-shot fraction of train and dev")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  sub->add_option("--eval-every", o.train.eval_every, "Dev evaluation period (0: end only)")
      ->capture_default_str();
  sub->add_option("--metric", o.train.dev_metric, "Dev selection metric (default per task)");
  sub->add_option("--out", o.out, "Output directory")->required();
  add_model_options(sub, o.model);
}

void print_banner(const CLI::App* sub, std::ostream& out) {
  std::istringstream lines(sub->config_to_str(true, false));
  out << "# effective config: " << sub->get_name() << '\n';
  for (std::string line; std::getline(lines, line);) {
    if (!line.empty()) out << "#   " << line << '\n';
  }
}

void write_banner_file(const CLI::App* sub, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream f(fs::path(dir) / "config.toml");
  f << "[" << sub->get_name() << "]\n" << sub->config_to_str(true, false);
}

Dataset load_split(const std::string& manifest) {
  return load_dataset(load_manifest(manifest));
}

// ---- subcommands -----------------------------------------------------------

int run_synth(SynthOptions& o, std::ostream& out) {
  o.config.task = parse_task(o.task);
  const bool split = o.train_size > 0 || o.dev_size > 0 || o.test_size > 0;
  if (split) o.config.size = o.train_size + o.dev_size + o.test_size;
  const SyntheticCorpus corpus = generate_synthetic(o.config);
  std::span<const SyntheticUtterance> all(corpus.utterances);
  if (!split) {
    write_corpus(all, o.out, "manifest");
    out << "wrote " << all.size() << " utterances to " << o.out << "/manifest.jsonl\n";
    return kExitOk;
  }
  std::size_t offset = 0;
  const std::pair<const char*, int> parts[] = {
      {"train", o.train_size}, {"dev", o.dev_size}, {"test", o.test_size}};
  for (const auto& [name, n] : parts) {
    if (n <= 0) continue;
    write_corpus(all.subspan(offset, static_cast<std::size_t>(n)), o.out, name);
    out << "wrote " << n << " utterances to " << o.out << '/' << name << ".jsonl\n";
    offset += static_cast<std::size_t>(n);
  }
  return kExitOk;
}

int run_quantize(QuantizeOptions& o, std::ostream& out) {
  fs::create_directories(o.out);
  std::vector<Manifest> manifests;
  std::vector<Dataset> datasets;
  for (const auto& path : o.manifests) {
    manifests.push_back(load_manifest(path));
    datasets.push_back(load_dataset(manifests.back()));
  }
  Codebook codebook;
  if (!o.codebook.empty()) {
    codebook = load_codebook(o.codebook);
    out << "loaded codebook " << o.codebook << " (k=" << codebook.k() << ")\n";
  } else {
    std::vector<FeatureMatrix> feats;
    for (const auto& ex : datasets.front()) feats.push_back(ex.features);
    KMeansTrace trace;
    codebook = kmeans_fit(pool_frames(feats), o.kmeans, &trace);
    const std::string path = (fs::path(o.out) / "codebook.bin").string();
    save_codebook(codebook, path);
    out << "fit codebook k=" << codebook.k() << " on " << o.manifests.front() << ": "
        << trace.iterations << " iterations, inertia " << codebook.inertia << '\n'
        << "wrote " << path << '\n';
  }
  const fs::path out_dir = fs::absolute(o.out);
  for (std::size_t m = 0; m < manifests.size(); ++m) {
    Manifest result = manifests[m];
    result.base_dir = out_dir.string();
    std::vector<UnitSequence> units;
    for (std::size_t i = 0; i < result.records.size(); ++i) {
      auto& rec = result.records[i];
      units.push_back(quantize_utterance(codebook, datasets[m][i].features));
      rec.units = units.back();
      const fs::path feat = fs::absolute(manifests[m].resolve(rec.features));
      rec.features = fs::relative(feat, out_dir).generic_string();
      if (rec.wav) {
        rec.wav = fs::relative(fs::absolute(manifests[m].resolve(*rec.wav)), out_dir)
                      .generic_string();
      }
    }
    const std::string stem = fs::path(o.manifests[m]).stem().string();
    save_manifest(result, (out_dir / (stem + ".jsonl")).string());
    write_unit_file((out_dir / (stem + "_units.txt")).string(), units);
    out << "wrote " << (out_dir / (stem + ".jsonl")).string() << " and " << stem
        << "_units.txt\n";
  }
  return kExitOk;
}

int run_augment(AugmentOptions& o, std::ostream& out) {
  const Manifest manifest = load_manifest(o.manifest);
  if (o.speed_3x) {
    o.noise.push_back("speed:0.9");
    o.noise.push_back("speed:1.1");
  }
  const fs::path out_dir = fs::absolute(o.out);
  fs::create_directories(out_dir / "wav");
  Manifest result;
  result.base_dir = out_dir.string();
  std::uint64_t stream = 0;
  for (const auto& rec : manifest.records) {
    if (!rec.wav) throw std::runtime_error("utterance '" + rec.id + "' has no waveform");
    const Waveform wave = read_wav(manifest.resolve(*rec.wav));
    if (o.speed_3x) {
      ManifestRecord orig = rec;
      orig.features = fs::absolute(manifest.resolve(rec.features)).string();
      orig.wav = fs::absolute(manifest.resolve(*rec.wav)).string();
      result.records.push_back(std::move(orig));
    }
    for (std::size_t i = 0; i < o.noise.size(); ++i) {
      const NoiseSpec spec = parse_noise_spec(o.noise[i], derive_seed(o.seed, stream++));
      const std::string id = rec.id + "_aug" + std::to_string(i);
      const fs::path wav = out_dir / "wav" / (id + ".wav");
      write_wav(apply_noise(wave, spec), wav.string());
      ManifestRecord aug = rec;
      aug.id = id;
      aug.wav = fs::relative(wav, out_dir).generic_string();
      // Features for the perturbed audio come from an external extractor.
      aug.features = "features/" + id + ".uftm";
      aug.units.reset();
      result.records.push_back(std::move(aug));
    }
  }
  const fs::path path = out_dir / "augmented.jsonl";
  save_manifest(result, path.string());
  out << "wrote " << result.size() << " perturbed waveforms and " << path.string() << '\n';
  return kExitOk;
}

void prepare_training(TrainOptions& o, const CLI::App* sub, Dataset& train_set, Dataset& dev_set) {
  o.train.aux = parse_aux_target(o.aux);
  o.train.checkpoint_dir = o.out;
  if (o.fraction < 1.0 && sub->count("--steps") == 0) o.train.steps = kFewShotSteps;
  train_set = load_split(o.train_manifest);
  if (!o.dev_manifest.empty()) dev_set = load_split(o.dev_manifest);
  if (o.fraction < 1.0) {
    train_set = subsample_few_shot(train_set, o.fraction, o.train.seed);
    if (!dev_set.empty()) dev_set = subsample_few_shot(dev_set, o.fraction, o.train.seed + 1);
  }
}

void print_run(const RunLog& log, std::ostream& out) {
  if (!log.steps.empty()) {
    const auto& last = log.steps.back();
    out << std::setprecision(6) << "step=" << last.step << " l_slu=" << last.loss.l_slu
        << " l_aux=" << last.loss.l_aux << " total=" << last.loss.total << '\n';
  }
  if (log.best_score) {
    out << "best " << log.metric << '=' << *log.best_score << " at step " << log.best_step << '\n';
  }
  if (!log.checkpoint_path.empty()) out << "checkpoint " << log.checkpoint_path << '\n';
}

int run_train(TrainOptions& o, const CLI::App* sub, std::ostream& out) {
  Dataset train_set;
  Dataset dev_set;
  prepare_training(o, sub, train_set, dev_set);
  out << "training on " << train_set.size() << " utterances, dev " << dev_set.size() << '\n';
  const TrainResult r = train(o.train, o.model, train_set, dev_set);
  print_run(r.log, out);
  return kExitOk;
}

int run_search(TrainOptions& o, const CLI::App* sub, std::ostream& out) {
  Dataset train_set;
  Dataset dev_set;
  prepare_training(o, sub, train_set, dev_set);
  const SearchResult r =
      hyper_search(o.train, SearchGrid{o.lrs, o.batch_sizes}, o.model, train_set, dev_set);
  json runs = json::array();
  for (const auto& run : r.runs) {
    json j = {{"lr", run.config.lr}, {"batch_size", run.config.batch_size}};
    out << "lr=" << run.config.lr << " batch_size=" << run.config.batch_size << ' ';
    if (!run.log) {
      j["error"] = run.error;
      out << "diverged\n";
    } else {
      j["score"] = run.log->best_score ? json(*run.log->best_score) : json(nullptr);
      out << run.log->metric << '='
          << (run.log->best_score ? std::to_string(*run.log->best_score) : "n/a") << '\n';
    }
    runs.push_back(j);
  }
  out << "best lr=" << r.best.lr << " batch_size=" << r.best.batch_size << '\n';
  print_run(r.best_log, out);
  std::ofstream f(fs::path(o.out) / "search.json");
  f << json{{"metric", r.best_log.metric},
            {"best", {{"lr", r.best.lr}, {"batch_size", r.best.batch_size}}},
            {"runs", runs}}
           .dump(2)
    << '\n';
  return kExitOk;
}

int run_evaluate(EvaluateOptions& o, std::ostream& out) {
  const Dataset data = load_split(o.manifest);
  if (data.empty()) throw std::runtime_error("manifest '" + o.manifest + "' is empty");
  std::vector<std::string> metrics;
  if (!o.dataset.empty()) metrics = metrics_for_dataset(o.dataset);
  MetricReport report;
  if (!o.stub.empty()) {
    const Task task = o.task.empty() ? data.front().record.task : parse_task(o.task);
    const bool gold = o.stub == "gold";
    const Predictor stub = [gold](const Example& ex) {
      return gold ? serialize_target(ex.record) : TargetSequence{};
    };
    report = evaluate(stub, data, task, metrics);
  } else {
    const TrainedModel model = load_trained(o.checkpoint);
    report = evaluate(model, data, metrics);
  }
  out << format_report(report);
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    std::ofstream(fs::path(o.out) / "report.txt") << format_report(report);
    std::ofstream(fs::path(o.out) / "report.json") << report_to_json(report) << '\n';
  }
  return kExitOk;
}

int run_gradcheck(GradCheckCliOptions& o, std::ostream& out) {
  validate(o.model);
  if (o.batch < 1) throw std::invalid_argument("--batch must be >= 1");
  o.model.dropout = 0.0;
  o.model.seed = o.seed;
  if (!o.corrupt.empty()) o.check.corrupt_tensor = o.corrupt;
  o.check.seed = o.seed;
  const Parameters params = build_model(o.model);

  std::mt19937_64 rng(derive_seed(o.seed, 1));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> frames(3, 6);
  std::uniform_int_distribution<int> len(1, 4);
  std::vector<FeatureMatrix> feats;
  std::vector<std::vector<int>> slu;
  std::vector<std::vector<int>> aux;
  auto ids = [&](int vocab) {
    std::uniform_int_distribution<int> tok(Vocab::kNumSpecials, vocab - 1);
    std::vector<int> v(static_cast<std::size_t>(len(rng)));
    for (int& t : v) t = tok(rng);
    return v;
  };
  for (int b = 0; b < o.batch; ++b) {
    FeatureMatrix f(frames(rng), o.model.input_dim);
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = static_cast<float>(normal(rng));
    feats.push_back(std::move(f));
    slu.push_back(ids(o.model.slu_vocab_size));
    aux.push_back(ids(o.model.unit_vocab_size));
  }
  const Batch batch = make_batch(feats, slu, aux);

  double worst = 0.0;
  for (double lambda : o.lambdas) {
    const GradCheckResult r = grad_check(params, batch, lambda, o.check);
    out << std::scientific << std::setprecision(3) << "lambda=" << std::defaultfloat << lambda
        << " coordinates=" << r.coordinates << " max_relative_error=" << std::scientific
        << r.max_relative_error << " worst_tensor=" << r.worst_tensor << std::defaultfloat
        << '\n';
    worst = std::max(worst, r.max_relative_error);
  }
  out << "max_relative_error=" << std::scientific << std::setprecision(3) << worst
      << std::defaultfloat << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Textless spoken language understanding with discrete-unit guidance", "unitslu"};
  app.set_config("--config", "", "TOML config file; explicit flags override it");
  app.require_subcommand(1);

  SynthOptions synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic corpus");
  s->add_option("--task", synth.task, "SNER, ICSF or SSP")
      ->check(CLI::IsMember(kTaskNames))
      ->capture_default_str();
  s->add_option("--words", synth.config.n_latent_words, "Latent words")->capture_default_str();
  s->add_option("--slot-types", synth.config.n_slot_types, "Slot types")->capture_default_str();
  s->add_option("--intents", synth.config.n_intents, "Intents")->capture_default_str();
  s->add_option("--dim", synth.config.feature_dim, "Feature dimension")->capture_default_str();
  s->add_option("--units", synth.config.n_units, "Phone alphabet size")->capture_default_str();
  s->add_option("--min-frames", synth.config.min_frames_per_phone, "Min frames per phone")
      ->capture_default_str();
  s->add_option("--max-frames", synth.config.max_frames_per_phone, "Max frames per phone")
      ->capture_default_str();
  s->add_option("--sigma", synth.config.sigma, "Anchor noise std")->capture_default_str();
  s->add_option("--seed", synth.config.seed, "Generator seed")->capture_default_str();
  s->add_option("--size", synth.config.size, "Utterances (single manifest)")
      ->capture_default_str();
  s->add_option("--train-size", synth.train_size, "Write train/dev/test splits instead")
      ->capture_default_str();
  s->add_option("--dev-size", synth.dev_size, "Dev split size")->capture_default_str();
  s->add_option("--test-size", synth.test_size, "Test split size")->capture_default_str();
  s->add_option("--out", synth.out, "Output directory")->required();

  QuantizeOptions quant;
  auto* q = app.add_subcommand("quantize", "Fit a k-means codebook and write unit sequences");
  q->add_option("--manifest", quant.manifests,
                "Manifests to quantize; the codebook is fit on the first")
      ->required();
  q->add_option("--k", quant.kmeans.k, "Codebook size")->capture_default_str();
  q->add_option("--max-iters", quant.kmeans.max_iters, "Lloyd iterations")->capture_default_str();
  q->add_option("--seed", quant.kmeans.seed, "k-means++ seed")->capture_default_str();
  q->add_option("--n-init", quant.kmeans.n_init, "k-means++ restarts")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  q->add_option("--codebook", quant.codebook, "Apply an existing codebook instead of fitting");
  q->add_option("--out", quant.out, "Output directory")->required();

  AugmentOptions aug;
  auto* a = app.add_subcommand("augment", "Perturb the waveforms listed in a manifest");
  a->add_option("--manifest", aug.manifest, "Manifest with wav paths")->required();
  a->add_option("--noise", aug.noise,
                "gaussian:<amp> | snr:<db>:<noisefile> | reverb:<rirfile> | speed:<factor>; "
                "repeat for several copies");
  a->add_flag("--speed-3x", aug.speed_3x,
              "Keep the originals and add speed 0.9 and 1.1 copies");
  a->add_option("--seed", aug.seed, "Noise seed")->capture_default_str();
  a->add_option("--out", aug.out, "Output directory")->required();

  TrainOptions tr;
  auto* t = app.add_subcommand("train", "Train a model");
  add_train_options(t, tr, false);

  TrainOptions se;
  auto* h = app.add_subcommand("search", "Grid search over learning rate and batch size");
  add_train_options(h, se, true);

  EvaluateOptions ev;
  auto* e = app.add_subcommand("evaluate", "Decode a manifest and print its metrics");
  auto* ck = e->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory");
  auto* stub = e->add_option("--stub", ev.stub, "Score a stub predictor instead")
                   ->check(CLI::IsMember({"gold", "empty"}));
  ck->excludes(stub);
  e->add_option("--manifest", ev.manifest, "Manifest to evaluate")->required();
  e->add_option("--task", ev.task, "Task for stub predictions (default: from manifest)")
      ->check(CLI::IsMember(kTaskNames));
  e->add_option("--dataset", ev.dataset, "Restrict to one benchmark's metric columns")
      ->check(CLI::IsMember({"ATIS", "SLUE-SNER", "SLURP", "SNIPS", "STOP"}));
  e->add_option("--out", ev.out, "Write report.txt and report.json here");

  GradCheckCliOptions gc;
  auto* g = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  g->add_option("--d-model", gc.model.d_model, "Model width")->capture_default_str();
  g->add_option("--heads", gc.model.heads, "Attention heads")->capture_default_str();
  g->add_option("--ffn-dim", gc.model.ffn_dim, "Feed-forward size")->capture_default_str();
  g->add_option("--input-dim", gc.model.input_dim, "Feature dimension")->capture_default_str();
  g->add_option("--slu-vocab", gc.model.slu_vocab_size, "SLU vocabulary")->capture_default_str();
  g->add_option("--unit-vocab", gc.model.unit_vocab_size, "Unit vocabulary")
      ->capture_default_str();
  g->add_option("--lambda", gc.lambdas, "Loss weights to check")->capture_default_str();
  g->add_option("--epsilon", gc.check.epsilon, "Central-difference step")->capture_default_str();
  g->add_option("--max-coordinates", gc.check.max_coordinates, "Coordinate budget")
      ->capture_default_str();
  g->add_option("--batch", gc.batch, "Random batch size")->capture_default_str();
  g->add_option("--seed", gc.seed, "Seed")->capture_default_str();
  g->add_option("--corrupt", gc.corrupt, "Double this tensor's analytic gradient");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::ParseError& ex) {
    if (!args.empty() && !args.front().starts_with('-') &&
        app.get_subcommand_no_throw(args.front()) == nullptr) {
      err << "unknown subcommand '" << args.front() << "'\n";
    } else {
      app.exit(ex, out, err);
    }
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    print_banner(sub, out);
    if (sub == s) return run_synth(synth, out);
    if (sub == q) return run_quantize(quant, out);
    if (sub == a) {
      if (aug.noise.empty() && !aug.speed_3x) {
        err << "augment: give --noise or --speed-3x\n" << a->help();
        return kExitUsage;
      }
      return run_augment(aug, out);
    }
    if (sub == t) {
      write_banner_file(sub, tr.out);
      return run_train(tr, sub, out);
    }
    if (sub == h) {
      write_banner_file(sub, se.out);
      return run_search(se, sub, out);
    }
    if (sub == e) {
      if (ev.checkpoint.empty() && ev.stub.empty()) {
        err << "evaluate: one of --checkpoint or --stub is required\n" << e->help();
        return kExitUsage;
      }
      return run_evaluate(ev, out);
    }
    if (sub == g) return run_gradcheck(gc, out);
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace unitslu
