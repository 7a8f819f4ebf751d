#include "tgd/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "tgd/denoiser.hpp"
#include "tgd/errors.hpp"
#include "tgd/evaluation.hpp"
#include "tgd/mrc_io.hpp"
#include "tgd/phantom.hpp"
#include "tgd/plot.hpp"
#include "tgd/target_bank.hpp"

namespace tgd::cli {

namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << s;
}

std::string join(const std::vector<double>& v) {
  std::ostringstream o;
  o.precision(10);
  for (std::size_t i = 0; i < v.size(); ++i) o << (i ? "," : "") << v[i];
  return o.str();
}

std::string format_run_config(const RunConfig& c) {
  const auto& s = c.schedule;
  std::ostringstream o;
  o.precision(10);
  o << "epochs = " << s.epochs << "\nbatch_size = " << s.batch_size << "\nlr = " << s.lr
    << "\nlr_decay_factor = " << s.lr_decay_factor << "\nlr_decay_steps = " << s.lr_decay_steps
    << "\nadam_beta1 = " << s.adam_beta1 << "\nadam_beta2 = " << s.adam_beta2
    << "\nsigma_a_levels = " << join(s.sigma_a_levels) << "\nwarmup_epochs = " << s.warmup_epochs
    << "\nramp_end_epochs = " << s.ramp_end_epochs << "\npatches_per_micrograph = " << s.patches_per_micrograph
    << "\npatch_size = " << s.patch_size << "\nencoder_refresh_epochs = " << s.encoder_refresh_epochs
    << "\nseed = " << s.seed << "\ndsm_only = " << s.dsm_only << "\npoisson_augment = " << s.poisson_augment
    << "\nencoder_features = " << s.encoder_features << "\nmax_steps = " << s.max_steps << '\n';
  if (s.fixed_wt) o << "fixed_wt = " << *s.fixed_wt << '\n';
  std::vector<double> mult(c.model.channel_multipliers.begin(), c.model.channel_multipliers.end());
  o << "base_width = " << c.model.base_width << "\nchannel_multipliers = " << join(mult)
    << "\nfeature_sigma = " << c.model.feature_sigma << '\n';
  return o.str();
}

/// Loads the noisy micrographs of a dataset.
std::vector<Micrograph> load_micrographs(const std::vector<DatasetItem>& items) {
  std::vector<Micrograph> out;
  for (const auto& it : items) {
    Micrograph m = read_micrograph(it.noisy);
    if (m.provenance.empty()) m.provenance = it.noisy.string();
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<fs::path> sorted_files(const fs::path& dir, const std::string& ext) {
  std::vector<fs::path> v;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext) v.push_back(e.path());
  std::sort(v.begin(), v.end());
  return v;
}

std::vector<ParticleSet> load_particle_sets(const fs::path& p) {
  std::vector<ParticleSet> out;
  if (fs::is_directory(p)) {
    const auto items = discover_dataset(p);
    bool any = false;
    for (const auto& it : items)
      if (!it.coords.empty()) {
        out.push_back(read_coordinates(it.coords));
        out.back().micrograph_id = it.id;
        any = true;
      }
    if (!any)
      for (const auto& f : sorted_files(p, ".txt")) out.push_back(read_coordinates(f));
  } else {
    out.push_back(read_coordinates(p));
  }
  return out;
}

struct DenoiseFlags {
  int iters = 5;
  double a = 0.5, b = 0.01;
  int tile = 0, overlap = -1;
  bool iteration_indexed = false;
};

DenoiseConfig to_config(const DenoiseFlags& f) {
  DenoiseConfig c;
  c.n_iterations = f.iters;
  c.noise_map = {f.a, f.b};
  c.tile_size = f.tile;
  c.overlap = f.overlap;
  c.iteration_indexed = f.iteration_indexed;
  c.validate();
  return c;
}

void add_denoise_flags(CLI::App* app, DenoiseFlags& f) {
  app->add_option("--iters", f.iters, "refinement iterations (>= 1)")->capture_default_str();
  app->add_option("--noise-a", f.a, "noise map offset a in sigma(x) = a + b x")->capture_default_str();
  app->add_option("--noise-b", f.b, "noise map slope b")->capture_default_str();
  app->add_option("--tile", f.tile, "tile size (0: model patch size)")->capture_default_str();
  app->add_option("--overlap", f.overlap, "tile overlap (-1: tile / 4)")->capture_default_str();
  app->add_flag("--iteration-indexed", f.iteration_indexed, "sigma_k = a + b k instead of a + b x");
}

struct PickFlags {
  double radius = 8.0;
  double threshold = 3.0;
  int max_picks = 0;
};

void add_pick_flags(CLI::App* app, PickFlags& f) {
  app->add_option("--radius", f.radius, "particle radius in pixels")->capture_default_str();
  app->add_option("--pick-threshold", f.threshold, "peak threshold (robust z units)")->capture_default_str();
  app->add_option("--max-picks", f.max_picks, "cap on picks per micrograph (0: none)")->capture_default_str();
}

PickerConfig to_config(const PickFlags& f) {
  PickerConfig c;
  c.particle_radius = f.radius;
  c.threshold_z = f.threshold;
  c.max_picks = f.max_picks;
  return c;
}

ScoreFn zero_score() {
  return [](const Patch& x, double) { return Patch(x.height(), x.width()); };
}

void plot_training(const fs::path& path, const std::vector<EpochMetrics>& log) {
  plot::LinePlot p;
  p.title = "training losses";
  p.xlabel = "epoch";
  p.ylabel = "loss";
  plot::Series total{"total", {}, {}}, dsm{"dsm", {}, {}}, tsm{"tsm", {}, {}};
  for (const auto& m : log) {
    for (auto* s : {&total, &dsm, &tsm}) s->x.push_back(m.epoch);
    total.y.push_back(m.loss_total);
    dsm.y.push_back(m.loss_dsm);
    tsm.y.push_back(m.loss_tsm);
  }
  p.series = {total, dsm, tsm};
  plot::write_svg(path, plot::render_svg(p));
}

struct SweepRow {
  std::string variant;
  PickingMetrics metrics;
  double psnr_mean = 0.0;
  bool has_psnr = false;
  double final_loss = 0.0;
};

}  // namespace

std::vector<DatasetItem> discover_dataset(const fs::path& path) {
  std::vector<DatasetItem> items;
  auto item_in = [](const fs::path& dir, const std::string& id) {
    DatasetItem it;
    it.id = id;
    it.noisy = dir / "noisy.mrc";
    if (fs::exists(dir / "clean.mrc")) it.clean = dir / "clean.mrc";
    if (fs::exists(dir / "coords.txt")) it.coords = dir / "coords.txt";
    return it;
  };
  if (!fs::exists(path)) throw IoError("no such file or directory: " + path.string());
  if (!fs::is_directory(path)) return {DatasetItem{path.stem().string(), path, {}, {}}};
  if (fs::exists(path / "noisy.mrc")) return {item_in(path, path.filename().string())};
  std::vector<fs::path> subdirs;
  for (const auto& e : fs::directory_iterator(path))
    if (e.is_directory() && fs::exists(e.path() / "noisy.mrc")) subdirs.push_back(e.path());
  std::sort(subdirs.begin(), subdirs.end());
  for (const auto& d : subdirs) items.push_back(item_in(d, d.filename().string()));
  if (items.empty())
    for (const auto& f : sorted_files(path, ".mrc")) items.push_back({f.stem().string(), f, {}, {}});
  if (items.empty()) throw IoError("no micrographs found under " + path.string());
  return items;
}

RunConfig desk_run_config() {
  RunConfig c;
  auto& s = c.schedule;
  s.epochs = 100;
  s.batch_size = 8;
  s.lr = 1e-3;
  s.lr_decay_steps = 4000;
  s.sigma_a_levels = {0.5};
  s.warmup_epochs = 20;
  s.ramp_end_epochs = 60;
  s.patches_per_micrograph = 8;
  s.patch_size = 32;
  s.encoder_refresh_epochs = 10;
  c.model.base_width = 16;
  c.model.channel_multipliers = {1, 2};
  c.model.patch_size = 32;
  return c;
}

RunConfig parse_run_config(const std::string& text, RunConfig base) {
  auto kv = parse_key_values(text);
  std::ostringstream rest;
  for (const auto& [k, v] : kv) {
    if (k == "base_width") {
      base.model.base_width = std::stoi(v);
    } else if (k == "channel_multipliers") {
      std::string t = v;
      std::replace(t.begin(), t.end(), ',', ' ');
      std::istringstream in(t);
      base.model.channel_multipliers.clear();
      int m = 0;
      while (in >> m) base.model.channel_multipliers.push_back(m);
    } else if (k == "feature_sigma") {
      base.model.feature_sigma = std::stod(v);
    } else {
      rest << k << " = " << v << '\n';
    }
  }
  base.schedule = parse_schedule(rest.str(), base.schedule);
  base.model.patch_size = base.schedule.patch_size;
  return base;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"tgd: target-guided score-based denoising for low-SNR micrographs"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate phantom micrographs with ground truth");
  std::string sim_spec, sim_out;
  int sim_count = 1;
  long sim_seed = -1;
  sim->add_option("--spec", sim_spec, "phantom spec file (key = value)");
  sim->add_option("--out", sim_out, "output directory")->required();
  sim->add_option("--count", sim_count, "number of micrographs")->capture_default_str();
  sim->add_option("--seed", sim_seed, "override the spec seed");

  // build-targets
  auto* bt = app.add_subcommand("build-targets", "project a reference volume into a target bank");
  std::string bt_volume, bt_out;
  BankConfig bank_cfg;
  bt->add_option("volume", bt_volume, "reference volume (MRC)")->required();
  bt->add_option("--out", bt_out, "bank archive path")->required();
  bt->add_option("--views", bank_cfg.n_views, "viewing directions")->capture_default_str();
  bt->add_option("--inplane", bank_cfg.inplane, "in-plane rotations per direction")->capture_default_str();
  bt->add_option("--cutoff", bank_cfg.cutoff, "low-pass cutoff (1/Angstrom)")->capture_default_str();
  bt->add_option("--tau", bank_cfg.temperature, "softmax temperature")->capture_default_str();
  bt->add_option("--size", bank_cfg.out_size, "projection size (0: volume size)")->capture_default_str();
  bt->add_option("--target-scale", bank_cfg.target_scale, "multiplier applied to projections")->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "train the score network");
  std::string tr_data, tr_bank, tr_config, tr_out;
  bool tr_dsm_only = false, tr_no_anneal = false;
  double tr_fixed_wt = 0.0;
  int tr_epochs = 0;
  long tr_seed = 0, tr_max_steps = 0;
  tr->add_option("--data", tr_data, "micrograph file or dataset directory")->required();
  tr->add_option("--bank", tr_bank, "target bank archive");
  tr->add_option("--config", tr_config, "training config (default: $TGD_CONFIG)");
  tr->add_option("--out", tr_out, "output directory")->required();
  tr->add_flag("--dsm-only", tr_dsm_only, "disable target guidance");
  tr->add_option("--fixed-wt", tr_fixed_wt, "replace the similarity weight by a constant");
  tr->add_flag("--no-anneal", tr_no_anneal, "lambda(t) = 1 from the first epoch");
  tr->add_option("--epochs", tr_epochs, "override epochs");
  tr->add_option("--seed", tr_seed, "override seed");
  tr->add_option("--max-steps", tr_max_steps, "stop after this many optimiser steps");

  // denoise
  auto* dn = app.add_subcommand("denoise", "denoise a micrograph with a trained checkpoint");
  std::string dn_ckpt, dn_in, dn_out;
  DenoiseFlags dn_flags;
  dn->add_option("--checkpoint", dn_ckpt, "checkpoint file")->required();
  dn->add_option("--in", dn_in, "input micrograph (MRC)")->required();
  dn->add_option("--out", dn_out, "output micrograph (MRC)")->required();
  add_denoise_flags(dn, dn_flags);

  // pick
  auto* pk = app.add_subcommand("pick", "template-correlation particle picking");
  std::string pk_in, pk_out;
  PickFlags pk_flags;
  pk->add_option("--in", pk_in, "micrograph (MRC)")->required();
  pk->add_option("--out", pk_out, "coordinate file")->required();
  add_pick_flags(pk, pk_flags);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "particle-picking precision / recall / F1");
  std::string ev_pred, ev_gt, ev_out, ev_plot, ev_method = "method";
  double ev_threshold = 32.0;
  ev->add_option("--pred", ev_pred, "predicted coordinates (file or directory)")->required();
  ev->add_option("--gt", ev_gt, "ground-truth coordinates (file or directory)")->required();
  ev->add_option("--threshold", ev_threshold, "match distance in pixels (inclusive)")->capture_default_str();
  ev->add_option("--out", ev_out, "metrics CSV");
  ev->add_option("--plot", ev_plot, "bar chart (SVG)");
  ev->add_option("--method", ev_method, "method label in the CSV")->capture_default_str();

  // fsc
  auto* fc = app.add_subcommand("fsc", "Fourier shell correlation of two volumes");
  std::string fc_v1, fc_v2, fc_out, fc_plot;
  double fc_threshold = 0.143;
  fc->add_option("v1", fc_v1, "first volume (MRC)")->required();
  fc->add_option("v2", fc_v2, "second volume (MRC)")->required();
  fc->add_option("--out", fc_out, "FSC CSV");
  fc->add_option("--plot", fc_plot, "FSC curve (SVG)");
  fc->add_option("--threshold", fc_threshold, "resolution threshold")->capture_default_str();

  // sweep
  auto* sw = app.add_subcommand("sweep", "ablation grids: guidance weight, annealing, noise scale");
  std::string sw_data, sw_bank, sw_config, sw_out, sw_grid = "all";
  double sw_threshold = 32.0;
  PickFlags sw_pick;
  DenoiseFlags sw_dn;
  sw->add_option("--data", sw_data, "dataset directory (simulate output)")->required();
  sw->add_option("--bank", sw_bank, "target bank archive")->required();
  sw->add_option("--config", sw_config, "training config (default: $TGD_CONFIG)");
  sw->add_option("--out", sw_out, "output directory")->required();
  sw->add_option("--grid", sw_grid, "all | wt | anneal | noise-a")->capture_default_str();
  sw->add_option("--threshold", sw_threshold, "match distance in pixels")->capture_default_str();
  add_pick_flags(sw, sw_pick);
  add_denoise_flags(sw, sw_dn);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  auto load_config = [&](const std::string& flag) {
    RunConfig rc = desk_run_config();
    std::string path = flag;
    if (path.empty())
      if (const char* env = std::getenv("TGD_CONFIG")) path = env;
    if (!path.empty()) rc = parse_run_config(read_text(path), rc);
    return rc;
  };

  try {
    if (*sim) {
      PhantomSpec spec = sim_spec.empty() ? PhantomSpec::two_blob() : parse_phantom_spec(read_text(sim_spec));
      if (sim_seed >= 0) spec.rotation_seed = static_cast<std::uint64_t>(sim_seed);
      if (sim_count < 1) throw ParameterError("--count must be >= 1");
      const Volume vol = make_volume(spec);
      fs::create_directories(sim_out);
      write_mrc(vol, fs::path(sim_out) / "volume.mrc", "tgd phantom volume");
      const std::uint64_t seed0 = spec.rotation_seed;
      for (int k = 0; k < sim_count; ++k) {
        spec.rotation_seed = seed0 + static_cast<std::uint64_t>(k);
        GroundTruth gt = make_micrograph(spec, vol);
        fs::path dir = sim_out;
        if (sim_count > 1) {
          std::ostringstream name;
          name << "mg_" << std::setw(3) << std::setfill('0') << k;
          dir /= name.str();
        }
        fs::create_directories(dir);
        Micrograph clean = gt.clean;
        for (auto& v : clean.data.values()) v = v * gt.intensity_scale + gt.intensity_offset;
        write_mrc(clean, dir / "clean.mrc");
        write_mrc(gt.noisy, dir / "noisy.mrc");
        write_coordinates(dir / "coords.txt", gt.coordinates);
        std::ostringstream snap;
        snap.precision(10);
        snap << format_phantom_spec(spec) << "# intensity_scale = " << gt.intensity_scale
             << "\n# suggested_target_scale = " << gt.intensity_scale / stddev(gt.noisy.data.values()) << '\n';
        write_text(dir / "spec.txt", snap.str());
      }
      out << "wrote " << sim_count << " micrograph(s) to " << sim_out << '\n';
      return kOk;
    }

    if (*bt) {
      const Volume v = read_volume(bt_volume);
      const TargetBank bank = build_bank(v, bank_cfg, block_average_feature_map(8));
      save_bank(bank, bt_out);
      out << "bank: m=" << bank.size() << " rank=" << bank.rank() << " sigma2=" << bank.sigma2_surrogate << '\n';
      return kOk;
    }

    if (*tr) {
      RunConfig rc = load_config(tr_config);
      if (tr_dsm_only) rc.schedule.dsm_only = true;
      if (tr->count("--fixed-wt")) rc.schedule.fixed_wt = tr_fixed_wt;
      if (tr->count("--epochs")) {
        rc.schedule.epochs = tr_epochs;
        rc.schedule.ramp_end_epochs = std::min(rc.schedule.ramp_end_epochs, tr_epochs);
        rc.schedule.warmup_epochs = std::min(rc.schedule.warmup_epochs, rc.schedule.ramp_end_epochs);
      }
      if (tr->count("--seed")) rc.schedule.seed = static_cast<std::uint64_t>(tr_seed);
      if (tr->count("--max-steps")) rc.schedule.max_steps = tr_max_steps;
      if (tr_no_anneal) rc.schedule.disable_annealing();
      if (tr_bank.empty() && !rc.schedule.dsm_only)
        throw ParameterError("target-guided training needs --bank (or use --dsm-only)");
      std::optional<TargetBank> bank;
      if (!tr_bank.empty()) bank = load_bank(tr_bank);
      const auto items = discover_dataset(tr_data);
      const auto data = load_micrographs(items);
      fs::create_directories(tr_out);
      write_text(fs::path(tr_out) / "config.txt", format_run_config(rc));
      TrainOptions opts;
      opts.out_dir = tr_out;
      opts.on_epoch = [&out](const EpochMetrics& m) {
        out << "epoch " << m.epoch << " loss " << m.loss_total << " dsm " << m.loss_dsm << " tsm " << m.loss_tsm
            << " lambda " << m.lambda << " sigma_a " << m.sigma_a << '\n';
      };
      const TrainResult r = train(data, bank ? &*bank : nullptr, rc.schedule, rc.model, opts);
      plot_training(fs::path(tr_out) / "training.svg", r.log);
      out << "checkpoint: " << r.last_checkpoint.string() << '\n';
      return kOk;
    }

    if (*dn) {
      const DenoiseConfig cfg = to_config(dn_flags);
      const Checkpoint ck = load_checkpoint(dn_ckpt);
      Micrograph m = read_micrograph(dn_in);
      Micrograph result;
      DenoiseConfig c = cfg;
      if (c.tile_size == 0) c.tile_size = std::min({ck.config.patch_size, m.data.height(), m.data.width()});
      if (ck.kind == "zero") {
        result = denoise_micrograph(batch_score_fn(zero_score()), m, c);
      } else {
        const ScoreModel model = model_from_checkpoint(ck);
        result = denoise_micrograph(batch_score_fn(model), m, c);
      }
      std::ostringstream label;
      label << "tgd denoise iters=" << c.n_iterations << " a=" << c.noise_map.a << " b=" << c.noise_map.b;
      result.provenance = label.str();
      write_mrc(result, dn_out);
      out << label.str() << " -> " << dn_out << '\n';
      return kOk;
    }

    if (*pk) {
      const Micrograph m = read_micrograph(pk_in);
      const ParticleSet picks = pick_particles(m.data, to_config(pk_flags));
      write_coordinates(pk_out, picks);
      out << "picked " << picks.coordinates.size() << " particles\n";
      return kOk;
    }

    if (*ev) {
      const auto pred = load_particle_sets(ev_pred), gt = load_particle_sets(ev_gt);
      if (pred.size() != gt.size())
        throw FormatError("prediction and ground-truth sets differ in count (" + std::to_string(pred.size()) +
                          " vs " + std::to_string(gt.size()) + ")");
      std::vector<MatchOutcome> outcomes;
      for (std::size_t i = 0; i < pred.size(); ++i) outcomes.push_back(match_particles(pred[i], gt[i], ev_threshold));
      const PickingMetrics m = picking_metrics(outcomes);
      out << std::setprecision(6) << "micro P=" << m.micro.precision << " R=" << m.micro.recall << " F1=" << m.micro.f1
          << " | macro F1=" << m.macro_mean.f1 << " +- " << m.macro_std.f1 << " (n=" << m.n_micrographs << ")\n";
      if (!ev_out.empty()) write_picking_csv(ev_out, {{ev_method, m}});
      if (!ev_plot.empty()) {
        plot::BarPlot bp;
        bp.title = "picking metrics (" + ev_method + ")";
        bp.ylabel = "score";
        bp.categories = {"precision", "recall", "F1"};
        bp.series_names = {"micro", "macro"};
        bp.values = {{m.micro.precision, m.micro.recall, m.micro.f1},
                     {m.macro_mean.precision, m.macro_mean.recall, m.macro_mean.f1}};
        plot::write_svg(ev_plot, plot::render_svg(bp));
      }
      return kOk;
    }

    if (*fc) {
      const Volume a = read_volume(fc_v1), b = read_volume(fc_v2);
      const FSCCurve curve = fsc(a, b);
      const Resolution res = resolution_at(curve, fc_threshold);
      out << std::setprecision(6) << "resolution " << res.angstrom << " A at FSC " << fc_threshold
          << (res.nyquist_limited ? " (Nyquist-limited: curve never crosses)" : "") << '\n';
      if (!fc_out.empty()) write_fsc_csv(fc_out, curve);
      if (!fc_plot.empty()) {
        plot::LinePlot p;
        p.title = "Fourier shell correlation";
        p.xlabel = "spatial frequency (1/A)";
        p.ylabel = "FSC";
        p.series = {{"FSC", curve.shell_centers, curve.correlations}};
        p.hline = fc_threshold;
        std::ostringstream hl;
        hl << "FSC = " << fc_threshold;
        p.hline_label = hl.str();
        p.vline = res.frequency;
        std::ostringstream vl;
        vl << std::setprecision(4) << res.angstrom << " A" << (res.nyquist_limited ? " (Nyquist)" : "");
        p.vline_label = vl.str();
        plot::write_svg(fc_plot, plot::render_svg(p));
      }
      return kOk;
    }

    if (*sw) {
      const RunConfig base = load_config(sw_config);
      const TargetBank bank = load_bank(sw_bank);
      const auto items = discover_dataset(sw_data);
      const auto data = load_micrographs(items);
      fs::create_directories(sw_out);
      const DenoiseConfig dcfg = to_config(sw_dn);
      const PickerConfig pcfg = to_config(sw_pick);

      auto evaluate_model = [&](const ScoreModel& model, const DenoiseConfig& dc, const std::string& name) {
        SweepRow row;
        row.variant = name;
        std::vector<MatchOutcome> outcomes;
        std::vector<double> psnrs;
        DenoiseConfig c = dc;
        if (c.tile_size == 0) c.tile_size = model.config().patch_size;
        for (std::size_t i = 0; i < items.size(); ++i) {
          const Micrograph d = denoise_micrograph(batch_score_fn(model), data[i], c);
          if (!items[i].clean.empty()) psnrs.push_back(psnr(d.data, read_micrograph(items[i].clean).data));
          if (!items[i].coords.empty())
            outcomes.push_back(match_particles(pick_particles(d.data, pcfg), read_coordinates(items[i].coords),
                                               sw_threshold));
        }
        if (!outcomes.empty()) row.metrics = picking_metrics(outcomes);
        if (!psnrs.empty()) {
          row.psnr_mean = mean(psnrs);
          row.has_psnr = true;
        }
        return row;
      };
      auto train_variant = [&](const std::string& name, RunConfig rc) {
        TrainOptions opts;
        opts.out_dir = fs::path(sw_out) / name;
        out << "training " << name << '\n';
        return train(data, &bank, rc.schedule, rc.model, opts);
      };

      std::vector<SweepRow> rows;
      {
        SweepRow noisy;
        noisy.variant = "noisy";
        std::vector<MatchOutcome> outcomes;
        std::vector<double> psnrs;
        for (std::size_t i = 0; i < items.size(); ++i) {
          if (!items[i].clean.empty()) psnrs.push_back(psnr(data[i].data, read_micrograph(items[i].clean).data));
          if (!items[i].coords.empty())
            outcomes.push_back(match_particles(pick_particles(data[i].data, pcfg), read_coordinates(items[i].coords),
                                               sw_threshold));
        }
        if (!outcomes.empty()) noisy.metrics = picking_metrics(outcomes);
        if (!psnrs.empty()) {
          noisy.psnr_mean = mean(psnrs);
          noisy.has_psnr = true;
        }
        rows.push_back(noisy);
      }
      const bool all = sw_grid == "all";
      if (!all && sw_grid != "wt" && sw_grid != "anneal" && sw_grid != "noise-a")
        throw ParameterError("unknown grid '" + sw_grid + "'");
      std::optional<TrainResult> adaptive;
      auto run_adaptive = [&]() -> const TrainResult& {
        if (!adaptive) adaptive = train_variant("adaptive", base);
        return *adaptive;
      };
      if (all || sw_grid == "wt") {
        RunConfig rc = base;
        rc.schedule.dsm_only = true;
        const auto r = train_variant("dsm_only", rc);
        rows.push_back(evaluate_model(r.model, dcfg, "dsm_only"));
        rows.back().final_loss = r.log.empty() ? 0.0 : r.log.back().loss_total;
        for (double wt : {0.05, 0.1, 0.15}) {
          RunConfig f = base;
          f.schedule.fixed_wt = wt;
          std::ostringstream name;
          name << "fixed_wt_" << wt;
          const auto rf = train_variant(name.str(), f);
          rows.push_back(evaluate_model(rf.model, dcfg, name.str()));
          rows.back().final_loss = rf.log.empty() ? 0.0 : rf.log.back().loss_total;
        }
        const auto& ra = run_adaptive();
        rows.push_back(evaluate_model(ra.model, dcfg, "adaptive"));
        rows.back().final_loss = ra.log.empty() ? 0.0 : ra.log.back().loss_total;
      }
      if (all || sw_grid == "anneal") {
        RunConfig rc = base;
        rc.schedule.disable_annealing();
        const auto r = train_variant("no_anneal", rc);
        rows.push_back(evaluate_model(r.model, dcfg, "no_anneal"));
        rows.back().final_loss = r.log.empty() ? 0.0 : r.log.back().loss_total;
        if (!all) {
          const auto& ra = run_adaptive();
          rows.push_back(evaluate_model(ra.model, dcfg, "adaptive"));
          rows.back().final_loss = ra.log.empty() ? 0.0 : ra.log.back().loss_total;
        }
      }
      if (all || sw_grid == "noise-a") {
        const auto& ra = run_adaptive();
        for (double a : {0.3, 0.4, 0.5, 0.6}) {
          DenoiseConfig dc = dcfg;
          dc.noise_map.a = a;
          std::ostringstream name;
          name << "adaptive_a" << a;
          rows.push_back(evaluate_model(ra.model, dc, name.str()));
        }
      }

      std::ofstream csv(fs::path(sw_out) / "sweep.csv");
      if (!csv) throw IoError("cannot write sweep.csv");
      csv << "variant,micro_P,micro_R,micro_F1,macro_F1_mean,macro_F1_std,psnr_db,final_loss\n"
          << std::setprecision(6);
      plot::BarPlot bp;
      bp.title = "ablation sweep";
      bp.ylabel = "micro F1";
      bp.series_names = {"micro F1"};
      bp.values.resize(1);
      for (const auto& r : rows) {
        csv << r.variant << ',' << r.metrics.micro.precision << ',' << r.metrics.micro.recall << ','
            << r.metrics.micro.f1 << ',' << r.metrics.macro_mean.f1 << ',' << r.metrics.macro_std.f1 << ','
            << (r.has_psnr ? std::to_string(r.psnr_mean) : std::string("")) << ',' << r.final_loss << '\n';
        bp.categories.push_back(r.variant);
        bp.values[0].push_back(r.metrics.micro.f1);
        out << r.variant << ": micro F1 " << r.metrics.micro.f1 << '\n';
      }
      plot::write_svg(fs::path(sw_out) / "sweep.svg", plot::render_svg(bp));
      return kOk;
    }
  } catch (const ParameterError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NonFiniteLossError& e) {
    err << "error: " << e.what() << "; last good checkpoint: "
        << (e.last_good_checkpoint.empty() ? std::string("(none)") : e.last_good_checkpoint) << '\n';
    return kNumerical;
  } catch (const Error& e) {
    err << "error (" << e.kind() << "): " << e.what() << '\n';
    return is_numerical(e) ? kNumerical : kData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace tgd::cli
