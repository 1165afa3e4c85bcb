// cycledeform: train, apply and evaluate learned shape deformations.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cycledeform/cycledeform.hpp"
#include "cycledeform/gradcheck_suite.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace cycledeform;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct Globals {
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::optional<std::string> precision;
  std::string config_path;
  bool quiet = false;

  std::uint64_t seed_or(std::uint64_t fallback) const { return seed.value_or(fallback); }
};

std::string fmt9(double v) { return detail::format9(v); }

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw Error("cannot create directory '" + p.string() + "': " + ec.message());
}

void ensure_parent(const std::string& file) {
  const fs::path parent = fs::path(file).parent_path();
  if (!parent.empty()) ensure_dir(parent);
}

json config_json(const TrainConfig& cfg) {
  json j = json::object();
  std::istringstream is(cfg.to_text());
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) j[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return j;
}

void write_metadata(const fs::path& dir, json meta) {
  meta["tool"] = "cycledeform";
  std::ofstream os(dir / "metadata.json");
  if (!os) throw Error("cannot write metadata in '" + dir.string() + "'");
  os << meta.dump(2) << '\n';
}

std::vector<ManifestRecord> records_for(const DatasetManifest& m, const std::string& category, Split split) {
  auto recs = m.select(category, split);
  if (recs.empty())
    throw InsufficientShapes("no " + to_string(split) + " shapes" + (category.empty() ? "" : " of category '" + category + "'") +
                             " in manifest");
  return recs;
}

PointCloud normalized(const PointCloud& c) { return normalize_bbox(c); }

LabeledPointCloud normalized(const LabeledPointCloud& c) {
  return LabeledPointCloud(normalize_bbox(c.cloud()), c.labels(), c.part_count());
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string manifest;
  std::string category;
  std::string out = "run";
  std::string resume;
  int toy_width = 0;
  std::vector<std::pair<std::string, std::string>> overrides;
};

template <typename T>
void train_loop(Trainer<T>& trainer, const fs::path& out, bool append, const Globals& g) {
  std::ofstream csv(out / "losses.csv", append ? std::ios::app : std::ios::trunc);
  if (!csv) throw Error("cannot write losses.csv");
  if (!append) csv << "epoch,lCh,lCy2,lCy3,lSR,lTotal,lr\n";
  const int every = trainer.config().checkpoint_every;
  while (!trainer.finished()) {
    const EpochStats st = trainer.run_epoch();
    const LossReport& r = st.mean;
    csv << st.epoch << ',' << fmt9(r.l_ch) << ',' << fmt9(r.l_cy2) << ',' << fmt9(r.l_cy3) << ',' << fmt9(r.l_sr) << ','
        << fmt9(r.l_total) << ',' << fmt9(st.lr) << '\n';
    csv.flush();
    if (!g.quiet)
      std::fprintf(stderr, "epoch %d/%d  lCh %.5f  lCy %.5f  lSR %.5f  lTotal %.5f  lr %g\n", st.epoch + 1,
                   trainer.config().epochs, r.l_ch, r.l_cy(), r.l_sr, r.l_total, st.lr);
    if (every > 0 && (st.epoch + 1) % every == 0 && !trainer.finished()) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_e%04d.cydf", st.epoch + 1);
      save_checkpoint(trainer.checkpoint(), (out / name).string());
    }
  }
  save_checkpoint(trainer.checkpoint(), (out / "checkpoint.cydf").string());
}

int cmd_train(const TrainArgs& a, const Globals& g) {
  const auto manifest = load_manifest(a.manifest);
  const auto loaded = load_shapes(records_for(manifest, a.category, Split::Train));
  std::vector<PointCloud> shapes;
  for (const auto& c : loaded.clouds) shapes.push_back(normalized(c));
  std::vector<Labels> labels;

  const fs::path out(a.out);
  ensure_dir(out);
  json meta;
  meta["command"] = "train";
  meta["manifest"] = a.manifest;
  meta["category"] = a.category;
  meta["shapes"] = shapes.size();

  if (!a.resume.empty()) {
    const Checkpoint ck = load_checkpoint(a.resume);
    if (ck.config.per_part_chamfer)
      for (const auto& l : loaded.labeled) labels.push_back(l ? l->labels() : Labels{});
    meta["resumed_from"] = a.resume;
    meta["resumed_epoch"] = ck.epoch;
    meta["config"] = config_json(ck.config);
    meta["architecture"] = ck.architecture.descriptor();
    meta["threads"] = g.threads;
    write_metadata(out, meta);
    if (ck.config.precision == Precision::F32) {
      Trainer<float> t(ck, shapes, labels, g.threads);
      train_loop(t, out, true, g);
    } else {
      Trainer<double> t(ck, shapes, labels, g.threads);
      train_loop(t, out, true, g);
    }
    return 0;
  }

  TrainConfig cfg;
  if (!g.config_path.empty()) {
    std::ifstream is(g.config_path);
    if (!is) throw Error("cannot open config '" + g.config_path + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    cfg = TrainConfig::from_text(ss.str());
  }
  for (const auto& [k, v] : a.overrides) cfg.set(k, v);
  if (g.seed) cfg.seed = *g.seed;
  if (g.precision) cfg.precision = parse_precision(*g.precision);
  cfg.threads = g.threads;
  cfg.validate();
  if (cfg.per_part_chamfer) {
    for (const auto& l : loaded.labeled) {
      if (!l) throw LabelSpaceMismatch("per-part Chamfer needs labels for every training shape");
      labels.push_back(l->labels());
    }
  }
  const Architecture arch = a.toy_width > 0 ? Architecture::toy(a.toy_width) : Architecture{};
  meta["config"] = config_json(cfg);
  meta["architecture"] = arch.descriptor();
  meta["threads"] = g.threads;
  meta["seed"] = cfg.seed;
  write_metadata(out, meta);
  if (cfg.precision == Precision::F32) {
    Trainer<float> t(cfg, arch, shapes, labels);
    train_loop(t, out, false, g);
  } else {
    Trainer<double> t(cfg, arch, shapes, labels);
    train_loop(t, out, false, g);
  }
  return 0;
}

// ---------------------------------------------------------------- model dispatch

/// A checkpointed model at the requested inference precision.
struct LoadedModel {
  Checkpoint checkpoint;
  Precision precision = Precision::F32;
  Model<float> f32;
  Model<double> f64;

  static LoadedModel load(const std::string& path, const Globals& g) {
    LoadedModel m;
    m.checkpoint = load_checkpoint(path);
    m.precision = g.precision ? parse_precision(*g.precision) : m.checkpoint.config.precision;
    if (m.precision == Precision::F32)
      m.f32 = m.checkpoint.model<float>();
    else
      m.f64 = m.checkpoint.model<double>();
    return m;
  }

  template <typename F>
  decltype(auto) visit(F&& f) const {
    if (precision == Precision::F32) return f(ModelDeformer<float>(f32));
    return f(ModelDeformer<double>(f64));
  }
};

// ---------------------------------------------------------------- deform

struct DeformArgs {
  std::string checkpoint, source, target, out, parity_out;
  std::string method = "ours";
};

int cmd_deform(const DeformArgs& a, const Globals& g) {
  const PointCloud source = normalized(load_points(a.source));
  const PointCloud target = normalized(load_points(a.target));
  PointCloud deformed = source;
  json meta;
  meta["command"] = "deform";
  meta["source"] = a.source;
  meta["target"] = a.target;
  meta["method"] = a.method;
  if (a.method == "ours") {
    if (a.checkpoint.empty()) throw InvalidArgument("--checkpoint is required with --method ours");
    const auto model = LoadedModel::load(a.checkpoint, g);
    deformed = model.visit([&](const auto& d) { return d.map(source, target); });
    meta["checkpoint"] = a.checkpoint;
    meta["architecture"] = model.checkpoint.architecture.descriptor();
    meta["precision"] = to_string(model.precision);
  } else if (a.method != "identity") {
    throw InvalidArgument("deform method must be ours or identity");
  }
  ensure_parent(a.out);
  save_points(deformed, a.out);
  if (!a.parity_out.empty()) {
    ensure_parent(a.parity_out);
    Labels parity(source.size());
    for (std::size_t i = 0; i < parity.size(); ++i) parity[i] = static_cast<int>(i % 2);
    save_labels(parity, a.parity_out);
  }
  const double ch = chamfer_sym(deformed, target);
  meta["chamfer_sym"] = ch;
  const fs::path dir = fs::path(a.out).parent_path().empty() ? fs::path(".") : fs::path(a.out).parent_path();
  write_metadata(dir, meta);
  std::cout << "chamfer_sym " << fmt9(ch) << '\n';
  return 0;
}

// ---------------------------------------------------------------- transfer

struct TransferArgs {
  std::string checkpoint, manifest, category, out = "transfer";
  std::size_t shots = 10;
  std::size_t k = 1;
  std::string criterion = "nn";
  std::string method = "ours";
  int repeats = 10;
};

template <Deformer D>
json run_transfer(const D& deformer, const TransferArgs& a, const Globals& g, const std::vector<LabeledPointCloud>& pool,
                  const std::vector<std::string>& pool_ids, const std::vector<LabeledPointCloud>& targets,
                  const std::vector<std::string>& target_ids, const fs::path& out) {
  FewShotOptions opt;
  opt.shots = a.shots;
  opt.votes = a.k;
  opt.selection = Selection::parse(a.criterion);
  opt.method = parse_method(a.method);
  opt.threads = g.threads;

  const std::uint64_t base_seed = g.seed_or(0);
  std::ofstream runs(out / "runs.csv");
  runs << "run,seed,mean_miou\n";
  std::vector<double> means;
  json seeds = json::array();
  for (int r = 0; r < a.repeats; ++r) {
    const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(r);
    const FewShotRun run = few_shot_run(deformer, pool, targets, opt, seed);
    char name[32];
    std::snprintf(name, sizeof name, "run_%02d", r);
    const fs::path dir = out / name;
    ensure_dir(dir);
    std::ofstream per(dir / "miou.csv");
    per << "shape,miou\n";
    for (std::size_t t = 0; t < targets.size(); ++t) {
      save_labels(run.predictions[t], (dir / (target_ids[t] + ".seg")).string());
      per << target_ids[t] << ',' << fmt9(run.per_target_miou[t]) << '\n';
    }
    std::ofstream shots(dir / "shots.txt");
    for (auto id : run.shot_ids) shots << pool_ids[id] << '\n';
    runs << r << ',' << seed << ',' << fmt9(run.mean_miou) << '\n';
    means.push_back(run.mean_miou);
    seeds.push_back(seed);
    if (!g.quiet) std::fprintf(stderr, "run %d: mean mIoU %.4f\n", r, run.mean_miou);
  }
  const MeanStd ms = mean_std(means);
  std::ofstream summary(out / "summary.csv");
  summary << "method,criterion,shots,k,repeats,mean_miou,std_miou\n"
          << a.method << ',' << opt.selection.name() << ',' << a.shots << ',' << a.k << ',' << a.repeats << ','
          << fmt9(ms.mean) << ',' << fmt9(ms.std) << '\n';
  std::cout << a.method << ' ' << opt.selection.name() << " mIoU " << fmt9(ms.mean) << " +- " << fmt9(ms.std) << '\n';
  json j;
  j["run_seeds"] = seeds;
  j["mean_miou"] = ms.mean;
  j["std_miou"] = ms.std;
  return j;
}

int cmd_transfer(const TransferArgs& a, const Globals& g) {
  if (a.repeats < 1) throw InvalidArgument("--repeats must be >= 1");
  if (a.k < 1) throw InvalidArgument("--k must be >= 1");
  const auto manifest = load_manifest(a.manifest);
  const auto train = load_shapes(records_for(manifest, a.category, Split::Train));
  const auto test = load_shapes(records_for(manifest, a.category, Split::Test));
  const int parts = std::max(train.part_count(), test.part_count());
  auto relabel = [&](const LabeledPointCloud& l) {
    return LabeledPointCloud(normalize_bbox(l.cloud()), l.labels(), parts);
  };
  std::vector<LabeledPointCloud> pool, targets;
  std::vector<std::string> pool_ids, target_ids;
  for (std::size_t i = 0; i < train.records.size(); ++i)
    if (train.labeled[i]) {
      pool.push_back(relabel(*train.labeled[i]));
      pool_ids.push_back(train.records[i].id);
    }
  for (std::size_t i = 0; i < test.records.size(); ++i) {
    if (!test.labeled[i]) throw LabelSpaceMismatch("test shape '" + test.records[i].id + "' has no ground-truth labels");
    targets.push_back(relabel(*test.labeled[i]));
    target_ids.push_back(test.records[i].id);
  }
  if (pool.empty()) throw InsufficientShapes("no labeled training shapes to draw shots from");

  const fs::path out(a.out);
  ensure_dir(out);
  json meta;
  meta["command"] = "transfer";
  meta["manifest"] = a.manifest;
  meta["category"] = a.category;
  meta["method"] = a.method;
  meta["criterion"] = a.criterion;
  meta["shots"] = a.shots;
  meta["k"] = a.k;
  meta["repeats"] = a.repeats;
  meta["base_seed"] = g.seed_or(0);
  meta["cosine_encoder_slot"] = "source (slot 0) for both shapes";

  const bool needs_model = a.method == "ours" || (a.criterion != "nn" && a.criterion != "oracle");
  json result;
  if (needs_model) {
    if (a.checkpoint.empty()) throw InvalidArgument("this method/criterion needs --checkpoint");
    const auto model = LoadedModel::load(a.checkpoint, g);
    meta["checkpoint"] = a.checkpoint;
    meta["architecture"] = model.checkpoint.architecture.descriptor();
    meta["precision"] = to_string(model.precision);
    result = model.visit([&](const auto& d) { return run_transfer(d, a, g, pool, pool_ids, targets, target_ids, out); });
  } else {
    result = run_transfer(IdentityDeformer{}, a, g, pool, pool_ids, targets, target_ids, out);
  }
  meta["result"] = result;
  write_metadata(out, meta);
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string pred, gt, out;
  int parts = 0;
};

int cmd_eval(const EvalArgs& a, const Globals&) {
  std::vector<fs::path> gt_files;
  for (const auto& e : fs::directory_iterator(a.gt))
    if (e.is_regular_file() && e.path().extension() == ".seg") gt_files.push_back(e.path());
  std::sort(gt_files.begin(), gt_files.end());
  if (gt_files.empty()) throw InsufficientShapes("no .seg files in '" + a.gt + "'");
  std::vector<Labels> gt, pred;
  int parts = a.parts;
  for (const auto& f : gt_files) {
    gt.push_back(load_labels(f.string()));
    pred.push_back(load_labels((fs::path(a.pred) / f.filename()).string()));
    if (a.parts == 0)
      for (const auto* v : {&gt.back(), &pred.back()})
        for (int l : *v) parts = std::max(parts, l + 1);
  }
  std::ostringstream table;
  table << "shape,miou\n";
  double total = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double m = miou(pred[i], gt[i], parts);
    total += m;
    table << gt_files[i].stem().string() << ',' << fmt9(m) << '\n';
  }
  table << "mean," << fmt9(total / static_cast<double>(gt.size())) << '\n';
  if (a.out.empty()) {
    std::cout << table.str();
  } else {
    ensure_parent(a.out);
    std::ofstream os(a.out);
    if (!os) throw Error("cannot write '" + a.out + "'");
    os << table.str();
  }
  return 0;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::string family = "table";
  std::size_t count = 200;
  std::size_t points = 2048;
  std::string out = "synth";
  double train_fraction = 0.8;
  std::optional<double> three_leg_probability;
  std::vector<std::string> ranges;
  bool binary = false;
};

int cmd_synth(const SynthArgs& a, const Globals& g) {
  SynthSpec spec = SynthSpec::for_family(parse_family(a.family));
  spec.count = a.count;
  spec.points_per_shape = a.points;
  spec.seed = g.seed_or(0);
  if (a.three_leg_probability) spec.three_leg_probability = *a.three_leg_probability;
  for (const auto& r : a.ranges) {
    const auto eq = r.find('='), colon = r.find(':');
    if (eq == std::string::npos || colon == std::string::npos || colon < eq)
      throw InvalidArgument("--range expects key=lo:hi, got '" + r + "'");
    try {
      spec.ranges[r.substr(0, eq)] = Range{std::stod(r.substr(eq + 1, colon - eq - 1)), std::stod(r.substr(colon + 1))};
    } catch (const std::logic_error&) {
      throw InvalidArgument("--range expects numeric bounds, got '" + r + "'");
    }
  }
  const auto shapes = generate_synthetic(spec);

  const fs::path out(a.out);
  ensure_dir(out / "points");
  ensure_dir(out / "labels");
  DatasetManifest manifest;
  const char* ext = a.binary ? ".xyzb" : ".xyz";
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    char id[64];
    std::snprintf(id, sizeof id, "%s_%04zu", a.family.c_str(), i);
    const std::string pts = std::string("points/") + id + ext, lab = std::string("labels/") + id + ".seg";
    save_points(shapes[i].cloud(), (out / pts).string());
    save_labels(shapes[i].labels(), (out / lab).string());
    manifest.records.push_back({id, a.family, pts, lab, Split::Train});
  }
  auto [train, test] = split_dataset(manifest, a.train_fraction, spec.seed);
  for (auto& r : manifest.records) {
    const bool in_train = std::any_of(train.records.begin(), train.records.end(), [&](const auto& t) { return t.id == r.id; });
    r.split = in_train ? Split::Train : Split::Test;
  }
  save_manifest(manifest, (out / "manifest.tsv").string());

  json meta;
  meta["command"] = "synth";
  meta["family"] = a.family;
  meta["count"] = a.count;
  meta["points"] = a.points;
  meta["seed"] = spec.seed;
  meta["train_fraction"] = a.train_fraction;
  meta["parts"] = part_names(spec.family);
  json ranges = json::object();
  for (const auto& [k, r] : spec.ranges) ranges[k] = {r.lo, r.hi};
  meta["ranges"] = ranges;
  if (spec.family == Family::Table) meta["three_leg_probability"] = spec.three_leg_probability;
  write_metadata(out, meta);
  if (!g.quiet) std::fprintf(stderr, "wrote %zu shapes to %s\n", shapes.size(), out.string().c_str());
  return 0;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckArgs {
  int width = 16;
  int points = 64;
  double op_tol = 1e-6;
  double loss_tol = 1e-3;
};

int cmd_gradcheck(const GradcheckArgs& a, const Globals& g) {
  GradCheckSuiteOptions o;
  o.seed = g.seed_or(0);
  o.toy_width = a.width;
  o.triplet_points = a.points;
  o.op_tolerance = a.op_tol;
  o.loss_tolerance = a.loss_tol;
  auto cases = op_gradcheck_suite(o);
  cases.push_back(loss_gradcheck(o));
  bool ok = true;
  for (const auto& c : cases) {
    const bool pass = c.report.max_rel_error < c.tolerance && !c.report.entries.empty();
    ok = ok && pass;
    std::printf("%-4s %-18s max_rel_err %.3e  tol %.0e  checked %zu  skipped %zu\n", pass ? "PASS" : "FAIL",
                c.name.c_str(), c.report.max_rel_error, c.tolerance, c.report.entries.size(), c.report.skipped);
  }
  std::printf("%s\n", ok ? "gradcheck passed" : "gradcheck FAILED");
  return ok ? 0 : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned cycle-consistent deformations between point clouds and few-shot label transfer"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Random seed (recorded in metadata)");
  app.add_option("--threads", g.threads, "Worker threads; 1 keeps runs bit-reproducible")->check(CLI::PositiveNumber);
  app.add_option("--precision", g.precision, "Numeric precision")->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--config", g.config_path, "Training config file of `key = value` lines")->check(CLI::ExistingFile);
  app.add_flag("--quiet", g.quiet, "Suppress progress output");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a deformation model on a manifest's train split");
  train->add_option("--manifest", ta.manifest, "Dataset manifest")->required();
  train->add_option("--category", ta.category, "Only shapes of this category");
  train->add_option("--out", ta.out, "Output directory")->capture_default_str();
  train->add_option("--resume", ta.resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  train->add_option("--toy-width", ta.toy_width, "Shrink all hidden widths (0: full size)");
  for (const char* key : {"epochs", "lr", "predictor-lr-scale", "lr-drop-epoch", "lr-drop-factor", "sr-cutoff", "knn-k", "lambda-cy", "points",
                          "batch", "random-triplets", "per-part-chamfer", "checkpoint-every"}) {
    const std::string k = key;
    train->add_option_function<std::string>("--" + k, [&ta, k](const std::string& v) { ta.overrides.emplace_back(k, v); },
                                            "Override config key " + k);
  }

  DeformArgs da;
  auto* deform = app.add_subcommand("deform", "Deform a source cloud towards a target");
  deform->add_option("--checkpoint", da.checkpoint, "Trained model")->check(CLI::ExistingFile);
  deform->add_option("--source", da.source, "Source points (.xyz)")->required()->check(CLI::ExistingFile);
  deform->add_option("--target", da.target, "Target points (.xyz)")->required()->check(CLI::ExistingFile);
  deform->add_option("--out", da.out, "Deformed source, in source point order")->required();
  deform->add_option("--parity-out", da.parity_out, "Per-point tag (index parity) for checkerboard inspection");
  deform->add_option("--method", da.method, "ours or identity")->capture_default_str()->check(CLI::IsMember({"ours", "identity"}));

  TransferArgs xa;
  auto* transfer = app.add_subcommand("transfer", "Few-shot label transfer onto the test split");
  transfer->add_option("--checkpoint", xa.checkpoint, "Trained model")->check(CLI::ExistingFile);
  transfer->add_option("--manifest", xa.manifest, "Dataset manifest")->required();
  transfer->add_option("--category", xa.category, "Only shapes of this category");
  transfer->add_option("--shots", xa.shots, "Labeled training shapes per run")->capture_default_str();
  transfer->add_option("--k", xa.k, "Best sources voting per target")->capture_default_str();
  transfer->add_option("--criterion", xa.criterion, "nn, deformation, cosine, cycle or oracle")->capture_default_str()
      ->check(CLI::IsMember({"nn", "deformation", "cosine", "cycle", "oracle"}));
  transfer->add_option("--method", xa.method, "ours, identity or icp")->capture_default_str()
      ->check(CLI::IsMember({"ours", "identity", "icp"}));
  transfer->add_option("--repeats", xa.repeats, "Seeded runs to average")->capture_default_str();
  transfer->add_option("--out", xa.out, "Output directory")->capture_default_str();

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "mIoU of predicted against ground-truth .seg files");
  eval->add_option("--pred", ea.pred, "Directory of predicted .seg files")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--gt", ea.gt, "Directory of ground-truth .seg files")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--parts", ea.parts, "Label space size (0: infer)");
  eval->add_option("--out", ea.out, "CSV output (default stdout)");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a labeled synthetic dataset");
  synth->add_option("--family", sa.family, "table, chair or lamp")->capture_default_str()->check(CLI::IsMember({"table", "chair", "lamp"}));
  synth->add_option("--count", sa.count, "Number of shapes")->capture_default_str();
  synth->add_option("--points", sa.points, "Points per shape")->capture_default_str();
  synth->add_option("--out", sa.out, "Output directory")->capture_default_str();
  synth->add_option("--train-fraction", sa.train_fraction, "Share of shapes in the train split")->capture_default_str();
  synth->add_option("--three-leg-probability", sa.three_leg_probability, "Tables: chance of three legs");
  synth->add_option("--range", sa.ranges, "Parameter range override, key=lo:hi (repeatable)");
  synth->add_flag("--binary", sa.binary, "Write points as little-endian f64 (.xyzb)");

  GradcheckArgs ga;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every op and of the full loss");
  gradcheck->add_option("--width", ga.width, "Toy model width")->capture_default_str();
  gradcheck->add_option("--points", ga.points, "Points per triplet cloud")->capture_default_str();
  gradcheck->add_option("--op-tol", ga.op_tol, "Relative tolerance for single ops")->capture_default_str();
  gradcheck->add_option("--loss-tol", ga.loss_tol, "Relative tolerance for the full loss")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train) return cmd_train(ta, g);
    if (*deform) return cmd_deform(da, g);
    if (*transfer) return cmd_transfer(xa, g);
    if (*eval) return cmd_eval(ea, g);
    if (*synth) return cmd_synth(sa, g);
    if (*gradcheck) return cmd_gradcheck(ga, g);
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NonFiniteLoss& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const NonFiniteValue& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
