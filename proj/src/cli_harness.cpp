#include "tfm/cli_harness.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "tfm/paradox_demo.hpp"

namespace tfm::cli {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config

namespace {

template <class F>
void for_keys(const nlohmann::json& j, const std::string& section, F&& handle) {
  if (!j.is_object()) throw std::invalid_argument("section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!handle(key, value)) throw std::invalid_argument("unknown key '" + section + "." + key + "'");
  }
}

std::string to_string(SsimMode m) { return m == SsimMode::slice2d ? "slice2d" : "volume3d"; }

SsimMode parse_ssim_mode(const std::string& s) {
  if (s == "slice2d") return SsimMode::slice2d;
  if (s == "volume3d") return SsimMode::volume3d;
  throw std::invalid_argument("unknown ssim mode '" + s + "'");
}

std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

void ExperimentConfig::validate() const {
  dataset.validate();
  model.validate();
  train.validate();
  solver.validate();
  if (splits.train < 1 || splits.val < 1 || splits.test < 1) throw std::invalid_argument("splits must be >= 1");
  if (!(masks.rate >= 0 && masks.rate < 1)) throw std::invalid_argument("masks.rate must be in [0, 1)");
  if (max_steps < 0) throw std::invalid_argument("max_steps must be >= 0");
  for (int s : nfe_steps) {
    if (s < 1) throw std::invalid_argument("nfe_steps entries must be >= 1");
  }
  const auto& sh = dataset.shape;
  if (model.in_frames != sh.frames || model.depth != sh.depth || model.height != sh.height ||
      model.width != sh.width) {
    throw std::invalid_argument("model extents do not match the dataset shape " + shape_string(sh.stack_shape()));
  }
}

nlohmann::json ExperimentConfig::to_json() const {
  return {{"dataset", dataset.to_json()},
          {"splits", {{"train", splits.train}, {"val", splits.val}, {"test", splits.test}}},
          {"model", model.to_json()},
          {"train", train.to_json()},
          {"solver", solver.to_json()},
          {"masks", {{"rate", masks.rate}, {"val_seed", masks.val_seed}, {"test_seed", masks.test_seed}}},
          {"experiment",
           {{"max_steps", max_steps}, {"nfe_steps", nfe_steps}, {"ssim_mode", to_string(ssim_mode)}}},
          {"output_dir", output_dir}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  for_keys(j, "config", [&](const std::string& key, const nlohmann::json& v) {
    if (key == "dataset") c.dataset = DynamicsSpec::from_json(v);
    else if (key == "model") c.model = ModelConfig::from_json(v);
    else if (key == "train") c.train = TrainConfig::from_json(v);
    else if (key == "solver") c.solver = SolverConfig::from_json(v);
    else if (key == "output_dir") c.output_dir = v.get<std::string>();
    else if (key == "splits") {
      for_keys(v, "splits", [&](const std::string& k, const nlohmann::json& x) {
        if (k == "train") c.splits.train = x.get<std::size_t>();
        else if (k == "val") c.splits.val = x.get<std::size_t>();
        else if (k == "test") c.splits.test = x.get<std::size_t>();
        else return false;
        return true;
      });
    } else if (key == "masks") {
      for_keys(v, "masks", [&](const std::string& k, const nlohmann::json& x) {
        if (k == "rate") c.masks.rate = x.get<double>();
        else if (k == "val_seed") c.masks.val_seed = x.get<std::uint64_t>();
        else if (k == "test_seed") c.masks.test_seed = x.get<std::uint64_t>();
        else return false;
        return true;
      });
    } else if (key == "experiment") {
      for_keys(v, "experiment", [&](const std::string& k, const nlohmann::json& x) {
        if (k == "max_steps") c.max_steps = x.get<std::int64_t>();
        else if (k == "nfe_steps") c.nfe_steps = x.get<std::vector<int>>();
        else if (k == "ssim_mode") c.ssim_mode = parse_ssim_mode(x.get<std::string>());
        else return false;
        return true;
      });
    } else {
      return false;
    }
    return true;
  });
  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open config file " + path.string());
  try {
    return ExperimentConfig::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
}

std::string config_hash(const ExperimentConfig& cfg) {
  auto j = cfg.to_json();
  j.erase("output_dir");
  return hex16(fnv1a(j.dump()));
}

// ---------------------------------------------------------------------------
// Files

namespace {

std::ostream& log(const Context& ctx) {
  static std::ostream null(nullptr);
  return ctx.log ? *ctx.log : null;
}

void write_text(const fs::path& path, const std::string& text) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string hash_line(const Context& ctx) { return "# config_hash=" + config_hash(ctx.config) + "\n"; }

void write_svg(const Context& ctx, const fs::path& path, const std::string& svg) {
  const auto eol = svg.find('\n') + 1;
  write_text(path, svg.substr(0, eol) + "<!-- config_hash=" + config_hash(ctx.config) + " -->\n" + svg.substr(eol));
}

fs::path cohort_dir(const Context& ctx, const std::string& split) { return ctx.out / "cohort" / split; }

SyntheticCohort load_split(const Context& ctx, const std::string& split) {
  const fs::path dir = cohort_dir(ctx, split);
  if (!fs::exists(dir / "spec.json")) {
    throw std::runtime_error("no cohort at " + dir.string() + " (run 'generate' first)");
  }
  auto cohort = load_cohort(dir);
  if (cohort.spec.to_json() != ctx.config.dataset.to_json()) {
    throw std::runtime_error("cohort in " + dir.string() + " was generated from a different dataset spec");
  }
  return cohort;
}

struct Splits {
  std::size_t train_first, val_first, test_first;
};

Splits split_offsets(const ExperimentConfig& c) { return {0, c.splits.train, c.splits.train + c.splits.val}; }

MaskSet val_masks(const ExperimentConfig& c) {
  return generate_masks(c.splits.val, c.dataset.shape.frames, c.masks.rate, c.masks.val_seed);
}

MaskSet test_masks(const ExperimentConfig& c) {
  return generate_masks(c.splits.test, c.dataset.shape.frames, c.masks.rate, c.masks.test_seed);
}

void write_masks(const Context& ctx) {
  nlohmann::json j = {{"config_hash", config_hash(ctx.config)},
                      {"val", val_masks(ctx.config).to_json()},
                      {"test", test_masks(ctx.config).to_json()}};
  write_text(ctx.out / "masks.json", j.dump(2) + "\n");
}

std::vector<ImageSequence> masked(const std::vector<ImageSequence>& seqs, const MaskSet& masks) {
  std::vector<ImageSequence> out;
  for (std::size_t i = 0; i < seqs.size(); ++i) out.push_back(apply_mask(seqs[i], masks.masks.at(i)));
  return out;
}

struct LoadedModel {
  Checkpoint ckpt;
  TrainMethod method = TrainMethod::tfm;
  bool sparsity_filling = true;
  std::string id;
};

LoadedModel load_model(const Context& ctx, const fs::path& path) {
  if (!fs::exists(path)) throw std::runtime_error("checkpoint " + path.string() + " does not exist");
  LoadedModel m;
  m.ckpt = load_checkpoint(path);
  const auto expected = config_hash(ctx.config);
  const auto stored = m.ckpt.meta.value("config_hash", std::string{});
  if (stored != expected) {
    throw std::runtime_error("checkpoint " + path.string() + " was trained under config " +
                             (stored.empty() ? "<none>" : stored) + ", current config is " + expected +
                             "; refusing to evaluate against possibly different masks");
  }
  m.method = parse_train_method(m.ckpt.meta.value("method", std::string("tfm")));
  m.sparsity_filling = m.ckpt.meta.value("sparsity_filling", true);
  m.id = hex16(fnv1a(read_text(path)));
  return m;
}

SsimOptions ssim_options(const ExperimentConfig& c) {
  SsimOptions o;
  o.mode = c.ssim_mode;
  return o;
}

struct Scores {
  double mse = 0, ssim = 0;
};

Scores mean_scores(const std::vector<Array>& preds, const std::vector<ImageSequence>& seqs, const SsimOptions& o) {
  Scores s;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    s.mse += mse(preds[i], seqs[i].target);
    s.ssim += ssim(preds[i], seqs[i].target, o);
  }
  s.mse /= static_cast<double>(preds.size());
  s.ssim /= static_cast<double>(preds.size());
  return s;
}

std::vector<Array> model_predictions(const LoadedModel& m, const std::vector<ImageSequence>& seqs,
                                     const SolverConfig& solver) {
  return predict_with_method(m.method, VelocityNet<float>(m.ckpt.model), m.ckpt.params, seqs, solver,
                             m.sparsity_filling);
}

FitResult train_variant(const Context& ctx, const TrainConfig& tcfg, const ModelConfig& model,
                        const SyntheticCohort& train, const SyntheticCohort& val, const std::string& label) {
  FitOptions opts;
  opts.solver = ctx.config.solver;
  opts.max_steps = ctx.config.max_steps;
  opts.on_epoch = [&](const EpochRecord& r) {
    log(ctx) << "[" << label << "] epoch " << r.epoch << " train_loss " << num(r.train_loss) << " val_mse "
             << num(r.val_mse) << " val_ssim " << num(r.val_ssim) << " lr " << num(r.lr) << std::endl;
  };
  return fit(tcfg, model, train.sequences, val.sequences, val_masks(ctx.config), opts);
}

// Minimal CSV reader for the files this module writes.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  }
};

Table read_csv(const fs::path& path) {
  Table t;
  std::istringstream in(read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (t.header.empty()) t.header = std::move(cells);
    else t.rows.push_back(std::move(cells));
  }
  return t;
}

double to_double(const std::string& s) {
  if (s == "inf") return INFINITY;
  if (s == "nan") return NAN;
  return std::stod(s);
}

}  // namespace

// ---------------------------------------------------------------------------
// Commands

void cmd_generate(const Context& ctx) {
  const auto& c = ctx.config;
  const auto off = split_offsets(c);
  fs::create_directories(ctx.out);
  const std::pair<const char*, std::pair<std::size_t, std::size_t>> splits[] = {
      {"train", {off.train_first, c.splits.train}},
      {"val", {off.val_first, c.splits.val}},
      {"test", {off.test_first, c.splits.test}}};
  for (const auto& [name, range] : splits) {
    const auto cohort = generate_cohort(c.dataset, range.second, range.first);
    save_cohort(cohort_dir(ctx, name), cohort);
    log(ctx) << "wrote " << range.second << " " << name << " sequences to " << cohort_dir(ctx, name).string() << "\n";
  }
  write_text(ctx.out / "spec.json", c.dataset.to_json().dump(2) + "\n");
  nlohmann::json echo = c.to_json();
  echo["config_hash"] = config_hash(c);
  write_text(ctx.out / "config.json", echo.dump(2) + "\n");
  write_masks(ctx);
}

void cmd_train(const Context& ctx) {
  const auto& c = ctx.config;
  const auto train = load_split(ctx, "train");
  const auto val = load_split(ctx, "val");
  const auto result = train_variant(ctx, c.train, c.model, train, val, to_string(c.train.method));

  Checkpoint best = result.best;
  best.meta["config_hash"] = config_hash(c);
  save_checkpoint(ctx.out / "checkpoint.tfm", best);
  write_text(ctx.out / "history.csv", hash_line(ctx) + history_csv(result.history));
  write_masks(ctx);

  Series val_curve{"val_mse", {}, {}}, train_curve{"train_loss", {}, {}};
  for (const auto& r : result.history) {
    val_curve.x.push_back(r.epoch);
    val_curve.y.push_back(r.val_mse);
    train_curve.x.push_back(r.epoch);
    train_curve.y.push_back(r.train_loss);
  }
  write_svg(ctx, ctx.out / "history.svg",
             line_chart_svg({train_curve, val_curve}, {"Training history", "epoch", "loss / MSE", false}));
  log(ctx) << "best epoch " << result.best_epoch << " (val_mse "
           << num(result.history[static_cast<std::size_t>(result.best_epoch - 1)].val_mse) << "), checkpoint "
           << (ctx.out / "checkpoint.tfm").string() << "\n";
}

void cmd_eval(const Context& ctx, const fs::path& checkpoint) {
  const auto& c = ctx.config;
  const auto model = load_model(ctx, checkpoint);
  const auto test = load_split(ctx, "test");
  const auto masks = test_masks(c);
  const auto seqs = masked(test.sequences, masks);
  const auto opts = ssim_options(c);

  MetricsReport report;
  report.provenance = {{"config_hash", config_hash(c)},
                       {"seed", c.train.seed},
                       {"mask_seed", masks.seed},
                       {"mask_rate", masks.rate},
                       {"checkpoint_id", model.id},
                       {"checkpoint_epoch", model.ckpt.epoch},
                       {"solver", c.solver.to_json()},
                       {"nrmse_normalizer", "target intensity range"},
                       {"ssim_mode", to_string(c.ssim_mode)}};
  const auto preds = model_predictions(model, seqs, c.solver);
  const std::string name = to_string(model.method);
  for (std::size_t i = 0; i < seqs.size(); ++i) report.add(name, i, preds[i], seqs[i].target, opts);
  for (std::size_t i = 0; i < seqs.size(); ++i) report.add("lci", i, last_context_image(seqs[i]), seqs[i].target, opts);
  for (std::size_t i = 0; i < seqs.size(); ++i) report.add("oracle", i, test.oracles[i], seqs[i].target, opts);

  write_text(ctx.out / "metrics.csv", hash_line(ctx) + report.to_csv());
  write_text(ctx.out / "metrics.json", report.to_json().dump(2) + "\n");
  for (const auto& m : report.methods()) {
    log(ctx) << std::left << std::setw(16) << m << " mse " << num(report.aggregate(m, "mse").mean) << "  ssim "
             << num(report.aggregate(m, "ssim").mean) << "\n";
  }
}

std::vector<NfeRow> cmd_nfe_sweep(const Context& ctx, const fs::path& checkpoint, const std::vector<int>& steps) {
  for (int s : steps) {
    if (s < 1) throw UsageError("nfe-sweep: steps must be >= 1, got " + std::to_string(s));
  }
  const auto& c = ctx.config;
  const auto model = load_model(ctx, checkpoint);
  const auto seqs = masked(load_split(ctx, "test").sequences, test_masks(c));
  std::vector<NfeRow> rows;
  for (int s : steps) {
    SolverConfig solver = c.solver;
    solver.steps = s;
    const auto sc = mean_scores(model_predictions(model, seqs, solver), seqs, ssim_options(c));
    rows.push_back({s, solver.function_evaluations(), sc.mse, sc.ssim});
    log(ctx) << "steps " << s << " nfe " << rows.back().nfe << " mse " << num(sc.mse) << " ssim " << num(sc.ssim)
             << "\n";
  }
  std::string csv = hash_line(ctx) + "steps,nfe,mse,ssim\n";
  Series curve{"ssim", {}, {}};
  for (const auto& r : rows) {
    csv += std::to_string(r.steps) + "," + std::to_string(r.nfe) + "," + num(r.mse) + "," + num(r.ssim) + "\n";
    curve.x.push_back(r.nfe);
    curve.y.push_back(r.ssim);
  }
  write_text(ctx.out / "nfe_sweep.csv", csv);
  write_svg(ctx, ctx.out / "nfe_sweep.svg", line_chart_svg({curve}, {"SSIM vs function evaluations", "NFE", "SSIM", true}));
  return rows;
}

std::string to_string(MaskDirection d) { return d == MaskDirection::first_to_last ? "1toT" : "Tto1"; }

MaskDirection parse_mask_direction(const std::string& name) {
  if (name == "1toT" || name == "first_to_last") return MaskDirection::first_to_last;
  if (name == "Tto1" || name == "last_to_first") return MaskDirection::last_to_first;
  throw UsageError("invalid mask direction '" + name + "' (expected 1toT or Tto1)");
}

std::vector<bool> directional_mask(std::int64_t frames, int k, MaskDirection direction) {
  if (k < 0 || k >= frames) throw std::invalid_argument("directional_mask: k must be in [0, T)");
  std::vector<bool> keep(static_cast<std::size_t>(frames), true);
  for (int i = 0; i < k; ++i) {
    const auto slot = direction == MaskDirection::first_to_last ? i : static_cast<int>(frames) - 1 - i;
    keep[static_cast<std::size_t>(slot)] = false;
  }
  return keep;
}

std::vector<MaskSweepRow> cmd_mask_sweep(const Context& ctx, const fs::path& checkpoint,
                                         const std::vector<MaskDirection>& directions) {
  const auto& c = ctx.config;
  const auto model = load_model(ctx, checkpoint);
  const auto test = load_split(ctx, "test");
  const std::int64_t frames = c.dataset.shape.frames;
  std::vector<MaskSweepRow> rows;
  std::vector<Series> series;
  for (auto dir : directions) {
    Series s{to_string(dir), {}, {}};
    for (int k = 0; k < frames; ++k) {
      std::vector<ImageSequence> seqs;
      for (const auto& seq : test.sequences) seqs.push_back(apply_mask(seq, directional_mask(frames, k, dir)));
      const auto sc = mean_scores(model_predictions(model, seqs, c.solver), seqs, ssim_options(c));
      double lci = 0;
      for (const auto& seq : seqs) lci += mse(last_context_image(seq), seq.target);
      lci /= static_cast<double>(seqs.size());
      rows.push_back({dir, k, sc.mse, sc.ssim, lci});
      s.x.push_back(k);
      s.y.push_back(sc.mse);
      log(ctx) << to_string(dir) << " k=" << k << " mse " << num(sc.mse) << " lci_mse " << num(lci) << "\n";
    }
    series.push_back(std::move(s));
  }
  std::string csv = hash_line(ctx) + "direction,k,mse,ssim,lci_mse\n";
  for (const auto& r : rows) {
    csv += to_string(r.direction) + "," + std::to_string(r.k) + "," + num(r.mse) + "," + num(r.ssim) + "," +
           num(r.lci_mse) + "\n";
  }
  write_text(ctx.out / "mask_sweep.csv", csv);
  write_svg(ctx, ctx.out / "mask_sweep.svg",
             line_chart_svg(series, {"Zero-shot context masking", "masked frames k", "MSE", false}));
  return rows;
}

std::vector<AblationRow> cmd_ablate(const Context& ctx) {
  const auto& c = ctx.config;
  const auto train = load_split(ctx, "train");
  const auto val = load_split(ctx, "val");
  const auto test = load_split(ctx, "test");
  const auto seqs = masked(test.sequences, test_masks(c));
  const auto opts = ssim_options(c);

  struct Variant {
    std::string name;
    TrainConfig train;
    ModelConfig model;
    SolverConfig solver;
    bool reuse_default = false;
  };
  std::vector<Variant> variants;
  variants.push_back({"default", c.train, c.model, c.solver});
  {
    Variant v{"bottleneck_concat", c.train, c.model, c.solver};
    v.model.conditioning = Conditioning::bottleneck_concat;
    variants.push_back(v);
  }
  {
    Variant v{"no_sparsity_filling", c.train, c.model, c.solver};
    v.train.sparsity_filling = false;
    variants.push_back(v);
  }
  {
    // Reduction only acts at inference, so this reuses the default weights.
    Variant v{"reduction_" + std::string(c.solver.reduction == Reduction::mean ? "last" : "mean"), c.train, c.model,
              c.solver, true};
    v.solver.reduction = c.solver.reduction == Reduction::mean ? Reduction::last : Reduction::mean;
    variants.push_back(v);
  }
  {
    Variant v{"lci_fm", c.train, c.model, c.solver};
    v.train.method = TrainMethod::lci_fm;
    variants.push_back(v);
  }

  std::vector<AblationRow> rows;
  FitResult base;
  for (const auto& v : variants) {
    FitResult r = v.reuse_default ? base : train_variant(ctx, v.train, v.model, train, val, v.name);
    if (v.name == "default") base = r;
    const auto preds = predict_with_method(v.train.method, VelocityNet<float>(r.best.model), r.best.params, seqs,
                                           v.solver, v.train.sparsity_filling);
    MetricsReport rep;
    for (std::size_t i = 0; i < seqs.size(); ++i) rep.add(v.name, i, preds[i], seqs[i].target, opts);
    rows.push_back({v.name, rep.aggregate(v.name, "mse").mean, rep.aggregate(v.name, "psnr_db").mean,
                    rep.aggregate(v.name, "ssim").mean, r.best_epoch});
    log(ctx) << v.name << " mse " << num(rows.back().mse) << " ssim " << num(rows.back().ssim) << "\n";
  }
  std::string csv = hash_line(ctx) + "variant,mse,psnr_db,ssim,best_epoch\n";
  for (const auto& r : rows) {
    csv += r.variant + "," + num(r.mse) + "," + num(r.psnr_db) + "," + num(r.ssim) + "," +
           std::to_string(r.best_epoch) + "\n";
  }
  write_text(ctx.out / "ablation.csv", csv);
  return rows;
}

bool cmd_paradox(std::ostream& out) {
  using namespace paradox;
  const auto scene = build_scene();
  const auto t = paradox_mse_table(scene);
  out << "i0 (# = 1, . = 0)\n" << ascii_art(scene.i0) << "\ni1\n" << ascii_art(scene.i1) << "\n";
  out << "i1 - i0 (- = -1)\n" << ascii_art(difference(scene.i1, scene.i0)) << "\n";
  out << "coarse model on the full image  mse = " << t.full_image_mse.over(64) << "\n";
  out << "last context image              mse = " << t.lci_mse.over(64) << "\n";
  out << "coarse model on the difference  mse = " << t.difference_mse.over(64) << "\n";
  return t.difference_mse == Rational(0) && t.lci_mse == Rational(4, 64) && t.lci_mse < t.full_image_mse;
}

void cmd_report(const Context& ctx) {
  std::ostringstream md;
  md << "# Experiment report\n\nconfig hash `" << config_hash(ctx.config) << "`\n\n";
  bool any = false;
  if (fs::exists(ctx.out / "history.csv")) {
    const auto t = read_csv(ctx.out / "history.csv");
    Series val{"val_mse", {}, {}}, train{"train_loss", {}, {}};
    for (const auto& r : t.rows) {
      val.x.push_back(to_double(r[0]));
      val.y.push_back(to_double(r[static_cast<std::size_t>(t.column("val_mse"))]));
      train.x.push_back(to_double(r[0]));
      train.y.push_back(to_double(r[static_cast<std::size_t>(t.column("train_loss"))]));
    }
    write_svg(ctx, ctx.out / "history.svg", line_chart_svg({train, val}, {"Training history", "epoch", "loss / MSE", false}));
    md << "## Training\n\n" << t.rows.size() << " epochs, see `history.svg`.\n\n";
    any = true;
  }
  if (fs::exists(ctx.out / "metrics.json")) {
    const auto j = nlohmann::json::parse(read_text(ctx.out / "metrics.json"));
    md << "## Test metrics\n\n| method | MSE | PSNR (dB) | SSIM |\n|---|---|---|---|\n";
    for (const auto& [method, agg] : j.at("aggregate").items()) {
      md << "| " << method << " | " << agg["mse"]["mean"].dump() << " | " << agg["psnr_db"]["mean"].dump() << " | "
         << agg["ssim"]["mean"].dump() << " |\n";
    }
    md << "\n";
    any = true;
  }
  if (fs::exists(ctx.out / "nfe_sweep.csv")) {
    const auto t = read_csv(ctx.out / "nfe_sweep.csv");
    Series s{"ssim", {}, {}};
    md << "## Function evaluations\n\n| steps | NFE | MSE | SSIM |\n|---|---|---|---|\n";
    for (const auto& r : t.rows) {
      s.x.push_back(to_double(r[1]));
      s.y.push_back(to_double(r[3]));
      md << "| " << r[0] << " | " << r[1] << " | " << r[2] << " | " << r[3] << " |\n";
    }
    write_svg(ctx, ctx.out / "nfe_sweep.svg", line_chart_svg({s}, {"SSIM vs function evaluations", "NFE", "SSIM", true}));
    md << "\n";
    any = true;
  }
  if (fs::exists(ctx.out / "mask_sweep.csv")) {
    const auto t = read_csv(ctx.out / "mask_sweep.csv");
    std::map<std::string, Series> by_dir;
    for (const auto& r : t.rows) {
      auto& s = by_dir[r[0]];
      s.name = r[0];
      s.x.push_back(to_double(r[1]));
      s.y.push_back(to_double(r[2]));
    }
    std::vector<Series> series;
    for (auto& [name, s] : by_dir) series.push_back(s);
    write_svg(ctx, ctx.out / "mask_sweep.svg",
               line_chart_svg(series, {"Zero-shot context masking", "masked frames k", "MSE", false}));
    md << "## Context masking\n\nSee `mask_sweep.svg`.\n\n";
    any = true;
  }
  if (fs::exists(ctx.out / "ablation.csv")) {
    const auto t = read_csv(ctx.out / "ablation.csv");
    md << "## Ablation\n\n| variant | MSE | PSNR (dB) | SSIM |\n|---|---|---|---|\n";
    for (const auto& r : t.rows) md << "| " << r[0] << " | " << r[1] << " | " << r[2] << " | " << r[3] << " |\n";
    md << "\n";
    any = true;
  }
  if (!any) throw std::runtime_error("nothing to report in " + ctx.out.string());
  write_text(ctx.out / "report.md", md.str());
  log(ctx) << "wrote " << (ctx.out / "report.md").string() << "\n";
}

// ---------------------------------------------------------------------------
// SVG

std::string line_chart_svg(const std::vector<Series>& series, const ChartOptions& opts) {
  const double width = 640, height = 400, left = 70, right = 150, top = 40, bottom = 50;
  const double pw = width - left - right, ph = height - top - bottom;
  auto tx = [&](double x) { return opts.log_x ? std::log10(std::max(x, 1e-300)) : x; };

  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, tx(s.x[i]));
      x1 = std::max(x1, tx(s.x[i]));
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return left + (tx(x) - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (1 - (y - y0) / (y1 - y0)) * ph; };
  auto fmt = [](double v) {
    std::ostringstream os;
    os << std::setprecision(4) << v;
    return os.str();
  };

  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << left + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << opts.title
      << "</text>\n";
  svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = y0 + (y1 - y0) * i / 4.0;
    const double xv = x0 + (x1 - x0) * i / 4.0;
    const double xl = opts.log_x ? std::pow(10.0, xv) : xv;
    svg << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << py(yv) << "\" y2=\"" << py(yv)
        << "\" stroke=\"#ddd\"/>\n";
    svg << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << fmt(yv) << "</text>\n";
    svg << "<text x=\"" << left + pw * i / 4.0 << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
        << fmt(xl) << "</text>\n";
  }
  svg << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 10 << "\" text-anchor=\"middle\">" << opts.x_label
      << "</text>\n";
  svg << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << opts.y_label << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = palette[k % 6];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (std::isfinite(s.y[i])) svg << px(s.x[i]) << "," << py(s.y[i]) << " ";
    }
    svg << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (std::isfinite(s.y[i])) {
        svg << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\"" << color
            << "\"/>\n";
      }
    }
    const double ly = top + 16 + 18.0 * static_cast<double>(k);
    svg << "<line x1=\"" << left + pw + 12 << "\" x2=\"" << left + pw + 32 << "\" y1=\"" << ly << "\" y2=\"" << ly
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly + 4 << "\">" << s.name << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace tfm::cli
