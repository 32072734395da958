#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include "ecdiff/analysis.hpp"
#include "ecdiff/io.hpp"
#include "ecdiff/sampler.hpp"
#include "ecdiff/synthgen.hpp"
#include "ecdiff/trainer.hpp"

namespace ecdiff::cli {
namespace {

std::vector<Stage> parse_stage_list(const std::string& text) {
  std::vector<Stage> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(parse_stage(item));
  if (out.empty()) throw std::invalid_argument("empty stage list");
  return out;
}

const CLI::Validator kStageList(
    [](std::string& s) {
      try {
        parse_stage_list(s);
      } catch (const std::invalid_argument& e) {
        return std::string(e.what());
      }
      return std::string();
    },
    "STAGES");

const CLI::Validator kStage(
    [](std::string& s) {
      try {
        parse_stage(s);
      } catch (const std::invalid_argument& e) {
        return std::string(e.what());
      }
      return std::string();
    },
    "STAGE");

bool in_stages(Stage s, const std::optional<std::string>& filter) {
  if (!filter) return true;
  const auto list = parse_stage_list(*filter);
  return std::find(list.begin(), list.end(), s) != list.end();
}

void apply_ablation(DenoiserConfig& cfg, const std::string& ablation) {
  cfg.use_ushape = ablation != "no-ushape";
  cfg.use_transformer = ablation != "no-transformer";
}

std::string table_row(std::initializer_list<std::string> cells) {
  std::string out;
  for (const auto& c : cells) {
    if (!out.empty()) out += ',';
    out += c;
  }
  return out + '\n';
}

// Caches structural matrices shared by many subjects.
class ScCache {
 public:
  const StructuralConnectivity& get(const fs::path& path) {
    auto it = cache_.find(path.string());
    if (it == cache_.end())
      it = cache_.emplace(path.string(), std::make_unique<StructuralConnectivity>(read_matrix(path))).first;
    return *it->second;
  }

 private:
  std::map<std::string, std::unique_ptr<StructuralConnectivity>> cache_;
};

// ---- simulate --------------------------------------------------------------

struct SimulateOptions {
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> config;
  std::optional<std::size_t> rois, points, subjects, perturbed;
  std::optional<std::string> stages;
};

int run_simulate(const SimulateOptions& o, std::ostream& out) {
  RunConfig rc;
  if (o.config) rc = read_run_config(*o.config, rc);
  CohortConfig& c = rc.cohort;
  if (o.seed) c.seed = *o.seed;
  if (o.rois) c.n_rois = *o.rois;
  if (o.points) c.n_points = *o.points;
  if (o.subjects) c.subjects_per_stage = *o.subjects;
  if (o.perturbed) c.perturbed_edges = *o.perturbed;
  if (o.stages) c.stages = parse_stage_list(*o.stages);
  const Cohort cohort = build_cohort(c);
  write_cohort(cohort, o.out);
  out << "simulate: " << cohort.subjects.size() << " subjects, " << c.n_rois << " ROIs x " << c.n_points
      << " points, seed " << c.seed << " -> " << (fs::path(o.out) / "manifest.json").string() << '\n';
  return kOk;
}

// ---- train -----------------------------------------------------------------

struct TrainOptions {
  std::string manifest, out;
  std::optional<std::string> history, config, stages, precision;
  std::optional<std::uint64_t> seed;
  std::string ablation = "none";
  std::optional<int> epochs;
  std::optional<double> lr, omega;
  std::optional<std::size_t> width;
  bool quiet = false;
};

template <typename T>
int train_typed(const TrainOptions& o, const RunConfig& rc, const CohortManifest& m, std::ostream& out) {
  ScCache cache;
  std::vector<TrainingRecord<T>> data;
  for (const auto& s : m.subjects) {
    if (!in_stages(s.stage, o.stages)) continue;
    data.push_back({read_matrix(m.root / s.clean).cast<T>(), read_matrix(m.root / s.rough).cast<T>(),
                    cache.get(m.root / s.sc)});
  }
  if (data.empty()) throw std::invalid_argument("train: no subjects selected");
  const int every = std::max(1, rc.train.epochs / 10);
  auto progress = [&](const EpochStats& e) {
    if (!o.quiet && (e.epoch % every == 0 || e.epoch == 1))
      out << "epoch " << e.epoch << " loss " << format_number(e.mean.total()) << " (noise "
          << format_number(e.mean.noise) << ", reconstruction " << format_number(e.mean.reconstruction)
          << ", sparsity " << format_number(e.mean.sparsity) << ")\n";
  };
  TrainResult<T> res = train(data, rc.train, rc.model, default_schedule(), progress);

  const fs::path history = o.history ? fs::path(*o.history) : fs::path(o.out + ".history.csv");
  write_file_atomic(history, history_to_csv(res.history));
  Checkpoint<T> ckpt{rc.model, std::move(res.params), std::move(res.optimizer), history.string(), rc.train.seed};
  save_checkpoint(ckpt, o.out);
  out << "train: " << data.size() << " subjects, " << rc.train.epochs << " epochs, " << to_string(rc.train.precision)
      << ", seed " << rc.train.seed << " -> " << o.out << '\n';
  return kOk;
}

int run_train(const TrainOptions& o, std::ostream& out) {
  const CohortManifest m = read_manifest(o.manifest);
  RunConfig rc;
  if (o.config) rc = read_run_config(*o.config, rc);
  rc.model.n_rois = m.config.n_rois;
  rc.model.n_points = m.config.n_points;
  apply_ablation(rc.model, o.ablation);
  if (o.width) rc.model.width = *o.width;
  if (o.seed) rc.train.seed = *o.seed;
  if (o.epochs) rc.train.epochs = *o.epochs;
  if (o.lr) rc.train.learning_rate = *o.lr;
  if (o.omega) rc.train.omega = *o.omega;
  if (o.precision) rc.train.precision = parse_precision(*o.precision);
  rc.model.validate();
  rc.train.validate();
  return rc.train.precision == Precision::F32 ? train_typed<float>(o, rc, m, out) : train_typed<double>(o, rc, m, out);
}

// ---- sample ----------------------------------------------------------------

struct SampleOptions {
  std::string checkpoint, manifest, out;
  std::optional<std::string> stages, precision;
  std::uint64_t seed = 0;
  bool trace = false;
};

template <typename T>
int sample_typed(const SampleOptions& o, const CohortManifest& m, std::ostream& out) {
  const Checkpoint<T> ckpt = load_checkpoint<T>(o.checkpoint);
  const DiffusionSchedule sched = default_schedule();
  const fs::path dir(o.out);
  fs::create_directories(dir / "subjects");
  if (o.trace) fs::create_directories(dir / "trace");

  std::vector<std::size_t> selected;
  for (std::size_t i = 0; i < m.subjects.size(); ++i)
    if (in_stages(m.subjects[i].stage, o.stages)) selected.push_back(i);
  ScCache cache;
  for (std::size_t i : selected) cache.get(m.root / m.subjects[i].sc);

  std::vector<SampleEntry> entries(selected.size());
  std::vector<std::exception_ptr> errors(selected.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t k = 0; k < selected.size(); ++k) {
    try {
      const ManifestSubject& s = m.subjects[selected[k]];
      const std::uint64_t seed = derive_seed(o.seed, selected[k]);
      const Matrix<T> cond = read_matrix(m.root / s.rough).cast<T>();
      const SampleResult<T> r = sample(cond, cache.get(m.root / s.sc), ckpt.params, ckpt.model, sched, seed, o.trace);
      SampleEntry e{s.id, s.stage, seed, fs::path("subjects") / (s.id + "_H0p.csv"),
                    fs::path("subjects") / (s.id + "_E.csv")};
      write_matrix(r.clean.template cast<double>(), dir / e.clean);
      write_matrix(r.ec.template cast<double>(), dir / e.ec);
      for (const auto& step : r.trace) {
        const std::string stem = s.id + "_t" + std::to_string(step.t_from);
        write_matrix(step.sample.template cast<double>(), dir / "trace" / (stem + "_H.csv"));
        write_matrix(step.ec.template cast<double>(), dir / "trace" / (stem + "_E.csv"));
      }
      entries[k] = std::move(e);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  SampleManifest sm{kManifestVersion, o.seed, o.checkpoint, precision_of<T>(), std::move(entries), dir};
  write_file_atomic(dir / "samples.json", sample_manifest_to_json(sm));
  out << "sample: " << sm.subjects.size() << " subjects, seed " << o.seed << " -> "
      << (dir / "samples.json").string() << '\n';
  return kOk;
}

int run_sample(const SampleOptions& o, std::ostream& out) {
  const Precision stored = checkpoint_precision(o.checkpoint);
  if (o.precision && parse_precision(*o.precision) != stored)
    throw FormatError(std::string("sample: precision mismatch (checkpoint stores ") + to_string(stored) +
                      ", requested " + *o.precision + ")");
  const CohortManifest m = read_manifest(o.manifest);
  return stored == Precision::F32 ? sample_typed<float>(o, m, out) : sample_typed<double>(o, m, out);
}

// ---- evaluate / analyze shared -------------------------------------------

struct EcSet {
  std::vector<MatrixD> ecs;
  std::vector<Stage> stages;
  std::vector<std::string> ids;
};

EcSet load_ecs(const CohortManifest& m, const std::optional<std::string>& samples, bool truth) {
  EcSet set;
  if (truth) {
    for (const auto& s : m.subjects) {
      if (s.ec.empty()) throw FormatError("subject " + s.id + " has no ground-truth EC in the manifest");
      set.ecs.push_back(read_matrix(m.root / s.ec));
      set.stages.push_back(s.stage);
      set.ids.push_back(s.id);
    }
    return set;
  }
  if (!samples) throw std::invalid_argument("either --samples or --truth is required");
  const SampleManifest sm = read_sample_manifest(fs::path(*samples) / "samples.json");
  for (const auto& s : sm.subjects) {
    set.ecs.push_back(read_matrix(sm.root / s.ec));
    set.stages.push_back(s.stage);
    set.ids.push_back(s.id);
  }
  return set;
}

// ---- evaluate --------------------------------------------------------------

struct EvaluateOptions {
  std::string manifest, out;
  std::optional<std::string> samples;
  bool truth = false;
  std::string positive = "EMCI", negative = "NC";
  std::size_t folds = 5;
  std::uint64_t seed = 0;
};

int run_evaluate(const EvaluateOptions& o, std::ostream& out) {
  const CohortManifest m = read_manifest(o.manifest);
  const fs::path dir(o.out);
  fs::create_directories(dir);

  if (o.samples) {
    const SampleManifest sm = read_sample_manifest(fs::path(*o.samples) / "samples.json");
    std::map<std::string, const ManifestSubject*> by_id;
    for (const auto& s : m.subjects) by_id[s.id] = &s;
    std::string csv = "id,stage,mae,rmse\n";
    double mae = 0, rmse = 0;
    for (const auto& s : sm.subjects) {
      auto it = by_id.find(s.id);
      if (it == by_id.end()) throw FormatError("evaluate: sampled subject " + s.id + " not in cohort manifest");
      const auto r = reconstruction_metrics(read_matrix(sm.root / s.clean), read_matrix(m.root / it->second->clean));
      csv += table_row({s.id, to_string(s.stage), format_number(r.mae), format_number(r.rmse)});
      mae += r.mae;
      rmse += r.rmse;
    }
    if (!sm.subjects.empty()) {
      const double n = static_cast<double>(sm.subjects.size());
      csv += table_row({"mean", "", format_number(mae / n), format_number(rmse / n)});
      out << "reconstruction: mean MAE " << format_number(mae / n) << ", mean RMSE " << format_number(rmse / n)
          << '\n';
    }
    write_file_atomic(dir / "reconstruction.csv", csv);
  }

  const EcSet set = load_ecs(m, o.samples, o.truth);
  const Stage pos = parse_stage(o.positive), neg = parse_stage(o.negative);
  std::vector<MatrixD> ecs;
  std::vector<int> labels;
  for (std::size_t i = 0; i < set.ecs.size(); ++i) {
    if (set.stages[i] == pos || set.stages[i] == neg) {
      ecs.push_back(set.ecs[i]);
      labels.push_back(set.stages[i] == pos ? 1 : 0);
    }
  }
  const ClassificationReport rep = train_eval_classifier(ecs, labels, o.folds, o.seed);
  std::string csv = "fold,acc,sen,spe,auc\n";
  for (std::size_t f = 0; f < rep.per_fold.size(); ++f) {
    const auto& r = rep.per_fold[f];
    csv += table_row({std::to_string(f + 1), format_number(r.acc), format_number(r.sen), format_number(r.spe),
                      format_number(r.auc)});
  }
  csv += table_row({"mean", format_number(rep.mean.acc), format_number(rep.mean.sen), format_number(rep.mean.spe),
                    format_number(rep.mean.auc)});
  write_file_atomic(dir / "classification.csv", csv);
  out << "classification " << o.negative << " vs " << o.positive << " (" << rep.folds << "-fold, seed " << o.seed
      << "): ACC " << format_number(rep.mean.acc) << ", SEN " << format_number(rep.mean.sen) << ", SPE "
      << format_number(rep.mean.spe) << ", AUC " << format_number(rep.mean.auc) << '\n';
  return kOk;
}

// ---- analyze ---------------------------------------------------------------

struct AnalyzeOptions {
  std::string manifest, out;
  std::optional<std::string> samples, former, latter;
  bool truth = false;
  std::size_t top_k = 10, roi_top_k = 5, pair_top_k = 5;
  double display_floor = 0.1;
  std::string mode = "difference";
};

int run_analyze(const AnalyzeOptions& o, std::ostream& out) {
  const CohortManifest m = read_manifest(o.manifest);
  const EcSet set = load_ecs(m, o.samples, o.truth);
  const AlteredMode mode = parse_altered_mode(o.mode);
  const fs::path dir(o.out);
  fs::create_directories(dir);

  std::vector<Stage> present;
  for (Stage s : all_stages())
    if (std::find(set.stages.begin(), set.stages.end(), s) != set.stages.end()) present.push_back(s);
  std::map<Stage, MatrixD> means;
  for (Stage s : present) {
    means[s] = group_mean_ec(set.ecs, set.stages, s);
    write_matrix(means[s], dir / (std::string("group_mean_") + to_string(s) + ".csv"));
  }

  std::vector<std::pair<Stage, Stage>> pairs;
  if (o.former || o.latter) {
    if (!o.former || !o.latter) throw std::invalid_argument("--former and --latter must be given together");
    pairs.emplace_back(parse_stage(*o.former), parse_stage(*o.latter));
  } else {
    for (std::size_t i = 1; i < present.size(); ++i) pairs.emplace_back(present[i - 1], present[i]);
  }
  for (const auto& [a, b] : pairs) {
    if (!means.count(a) || !means.count(b))
      throw std::invalid_argument(std::string("analyze: no subjects for stage ") + (means.count(a) ? to_string(b) : to_string(a)));
    const std::string tag = std::string(to_string(a)) + "_" + to_string(b);
    const MatrixD altered = altered_ec(means[a], means[b], mode);
    write_matrix(altered, dir / ("altered_" + tag + ".csv"));

    const EdgeRanking ranking = rank_altered_edges(altered, o.top_k);
    std::string edges = "direction,rank,source,target,value\n";
    for (const auto* list : {&ranking.enhanced, &ranking.diminished}) {
      const char* dirname = list == &ranking.enhanced ? "enhanced" : "diminished";
      for (std::size_t r = 0; r < list->size(); ++r)
        edges += table_row({dirname, std::to_string(r + 1), std::to_string((*list)[r].source),
                            std::to_string((*list)[r].target), format_number((*list)[r].value)});
    }
    write_file_atomic(dir / ("edges_" + tag + ".csv"), edges);

    std::string rois = "rank,roi,strength\n";
    const auto importance = roi_importance(altered, o.roi_top_k);
    for (std::size_t r = 0; r < importance.size(); ++r)
      rois += table_row({std::to_string(r + 1), std::to_string(importance[r].roi), format_number(importance[r].strength)});
    write_file_atomic(dir / ("roi_importance_" + tag + ".csv"), rois);

    std::string bidir = "rank,roi_a,roi_b,score,forward,backward,forward_suppressed,backward_suppressed\n";
    const auto bp = bidirectional_pairs(altered, o.pair_top_k, o.display_floor);
    for (std::size_t r = 0; r < bp.size(); ++r)
      bidir += table_row({std::to_string(r + 1), std::to_string(bp[r].first), std::to_string(bp[r].second),
                          format_number(bp[r].score), format_number(bp[r].forward), format_number(bp[r].backward),
                          bp[r].forward_suppressed ? "1" : "0", bp[r].backward_suppressed ? "1" : "0"});
    write_file_atomic(dir / ("pairs_" + tag + ".csv"), bidir);
    out << "analyze " << tag << ": " << ranking.enhanced.size() << " enhanced, " << ranking.diminished.size()
        << " diminished edges; top ROI " << (importance.empty() ? std::string("-") : std::to_string(importance[0].roi))
        << '\n';
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Diffusion-based effective connectivity estimation"};
  app.require_subcommand(1);
  const std::vector<std::string> ablations{"none", "no-ushape", "no-transformer"};
  const std::vector<std::string> precisions{"f32", "f64"};

  SimulateOptions so;
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic cohort with planted causal structure");
  sim->add_option("--out", so.out, "Output directory")->required();
  sim->add_option("--seed", so.seed, "Cohort seed");
  sim->add_option("--config", so.config, "JSON run configuration")->check(CLI::ExistingFile);
  sim->add_option("--rois", so.rois, "Number of ROIs");
  sim->add_option("--points", so.points, "Time points per ROI");
  sim->add_option("--subjects", so.subjects, "Subjects per stage");
  sim->add_option("--perturbed-edges", so.perturbed, "Enhanced (and diminished) edges per transition");
  sim->add_option("--stages", so.stages, "Comma-separated stage list")->check(kStageList);

  TrainOptions to;
  auto* tr = app.add_subcommand("train", "Train the denoiser and causal head");
  tr->add_option("--manifest", to.manifest, "Cohort manifest")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", to.out, "Checkpoint path")->required();
  tr->add_option("--history", to.history, "History CSV path (default <out>.history.csv)");
  tr->add_option("--config", to.config, "JSON run configuration")->check(CLI::ExistingFile);
  tr->add_option("--seed", to.seed, "Training seed");
  tr->add_option("--precision", to.precision, "Floating-point precision")->check(CLI::IsMember(precisions));
  tr->add_option("--ablation", to.ablation, "Architecture ablation")->check(CLI::IsMember(ablations));
  tr->add_option("--epochs", to.epochs, "Training epochs")->check(CLI::PositiveNumber);
  tr->add_option("--lr", to.lr, "Adam learning rate");
  tr->add_option("--omega", to.omega, "Sparsity weight");
  tr->add_option("--width", to.width, "Internal feature width");
  tr->add_option("--stages", to.stages, "Train on these stages only")->check(kStageList);
  tr->add_flag("--quiet", to.quiet, "Suppress per-epoch progress");

  SampleOptions sa;
  auto* sm = app.add_subcommand("sample", "Sample H0' and E for every subject");
  sm->add_option("--checkpoint", sa.checkpoint, "Checkpoint path")->required()->check(CLI::ExistingFile);
  sm->add_option("--manifest", sa.manifest, "Cohort manifest")->required()->check(CLI::ExistingFile);
  sm->add_option("--out", sa.out, "Output directory")->required();
  sm->add_option("--seed", sa.seed, "Sampling seed");
  sm->add_option("--precision", sa.precision, "Expected checkpoint precision")->check(CLI::IsMember(precisions));
  sm->add_option("--stages", sa.stages, "Sample these stages only")->check(kStageList);
  sm->add_flag("--trace", sa.trace, "Dump every reverse step");

  EvaluateOptions eo;
  auto* ev = app.add_subcommand("evaluate", "Reconstruction error and EC-based classification");
  ev->add_option("--manifest", eo.manifest, "Cohort manifest")->required()->check(CLI::ExistingFile);
  ev->add_option("--out", eo.out, "Report directory")->required();
  auto* ev_samples = ev->add_option("--samples", eo.samples, "Directory written by sample");
  auto* ev_truth = ev->add_flag("--truth", eo.truth, "Classify ground-truth ECs");
  ev_samples->excludes(ev_truth);
  ev->add_option("--positive", eo.positive, "Patient stage")->check(kStage);
  ev->add_option("--negative", eo.negative, "Control stage")->check(kStage);
  ev->add_option("--folds", eo.folds, "Cross-validation folds")->check(CLI::Range(2, 1000));
  ev->add_option("--seed", eo.seed, "Fold assignment seed");

  AnalyzeOptions ao;
  auto* an = app.add_subcommand("analyze", "Group means, altered EC, rankings");
  an->add_option("--manifest", ao.manifest, "Cohort manifest")->required()->check(CLI::ExistingFile);
  an->add_option("--out", ao.out, "Report directory")->required();
  auto* an_samples = an->add_option("--samples", ao.samples, "Directory written by sample");
  auto* an_truth = an->add_flag("--truth", ao.truth, "Analyze ground-truth ECs");
  an_samples->excludes(an_truth);
  an->add_option("--former", ao.former, "Earlier stage")->check(kStage);
  an->add_option("--latter", ao.latter, "Later stage")->check(kStage);
  an->add_option("--top-k", ao.top_k, "Ranked edges per direction");
  an->add_option("--roi-top-k", ao.roi_top_k, "Ranked ROIs");
  an->add_option("--pair-top-k", ao.pair_top_k, "Ranked bidirectional pairs");
  an->add_option("--display-floor", ao.display_floor, "Per-direction strength below which a pair side is flagged");
  an->add_option("--altered-mode", ao.mode, "Stage comparison")->check(CLI::IsMember({"difference", "log-ratio"}));

  std::vector<std::string> reversed(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, e2;
    const int code = app.exit(e, o, e2);
    out << o.str();
    err << e2.str();
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*sim) return run_simulate(so, out);
    if (*tr) return run_train(to, out);
    if (*sm) return run_sample(sa, out);
    if (*ev) return run_evaluate(eo, out);
    if (*an) return run_analyze(ao, out);
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumericalError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}

}  // namespace ecdiff::cli
