#include "redsdf/cli.hpp"

#include "redsdf/control.hpp"
#include "redsdf/datagen.hpp"
#include "redsdf/network.hpp"
#include "redsdf/sim.hpp"
#include "redsdf/slice.hpp"
#include "redsdf/training.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace redsdf::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

uint64_t file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

namespace {

std::string resolve_relative(const std::string& base_file, const std::string& p) {
  const fs::path fp(p);
  if (fp.is_absolute()) return fp.string();
  return (fs::path(base_file).parent_path() / fp).string();
}

void prepare_outdir(const std::string& out, bool force) {
  if (fs::exists(out)) {
    if (!force && !fs::is_empty(out)) {
      throw std::runtime_error("output directory exists and is not empty: " + out +
                               " (use --force to reuse)");
    }
  } else {
    fs::create_directories(out);
  }
}

// Written before any heavy work so interrupted runs stay attributable.
void write_manifest(const std::string& out, const std::string& subcommand,
                    const std::string& config_path, uint64_t seed) {
  json j;
  j["subcommand"] = subcommand;
  j["config"] = config_path;
  j["config_hash"] =
      config_path.empty() ? std::string("-")
                          : (std::ostringstream() << std::hex << file_hash(config_path)).str();
  j["seed"] = seed;
  j["out"] = out;
  j["version"] = kToolVersion;
  std::ofstream os(fs::path(out) / "manifest.json", std::ios::binary);
  if (!os) throw std::runtime_error("cannot write manifest in " + out);
  os << j.dump(2) << '\n';
}

ctrl::ControllerConfig load_controller_config(const std::string& path, int dof) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open controller config: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error(path + ": " + std::string(e.what()));
  }
  ctrl::ControllerConfig cfg;
  cfg.kappa = j.value("kappa", 0.15);
  cfg.v_bar = j.value("v_bar", 0.5);
  if (j.contains("pid")) {
    const auto& pj = j.at("pid");
    cfg.pid.kp = pj.value("kp", 2.0);
    cfg.pid.ki = pj.value("ki", 0.0);
    cfg.pid.kd = pj.value("kd", 0.0);
    cfg.pid.v_max = pj.value("v_max", 0.5);
    cfg.pid.i_max = pj.value("i_max", 0.5);
  }
  if (j.contains("joint_vel_limits")) {
    const auto& lj = j.at("joint_vel_limits");
    cfg.joint_vel_limits.resize(lj.size());
    for (size_t i = 0; i < lj.size(); ++i) cfg.joint_vel_limits[i] = lj.at(i);
  } else {
    cfg.joint_vel_limits = VecX::Constant(dof, 1.5);
  }
  if (static_cast<int>(cfg.joint_vel_limits.size()) != dof) {
    throw std::runtime_error(path + ": joint_vel_limits length does not match the robot");
  }
  cfg.mean_over_all = j.value("mean_over_all", true);
  return cfg;
}

sim::Avoidance parse_avoidance(const std::string& s) {
  if (s == "none") return sim::Avoidance::None;
  if (s == "spheres") return sim::Avoidance::Spheres;
  if (s == "learned") return sim::Avoidance::Learned;
  if (s == "analytic") return sim::Avoidance::Analytic;
  throw CLI::ValidationError("--avoidance must be none|spheres|learned|analytic");
}

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
  std::string model, out;
  uint64_t seed = 0;
  int configs = 1;
  int points = 1000;
  std::vector<double> levels;
  bool estimated_normals = false;
  int knn = 16;
  double consistency_deg = 30.0;
  double reject_tol = 0.0;
  size_t downsample = 0;
  bool force = false;
};

int run_gen_data(const GenDataArgs& a) {
  const auto model = geom::load_model(a.model);
  prepare_outdir(a.out, a.force);
  write_manifest(a.out, "gen-data", a.model, a.seed);

  data::GenConfig cfg;
  cfg.num_configs = a.configs;
  cfg.points_per_config = a.points;
  cfg.levels = a.levels;
  cfg.seed = a.seed;
  cfg.oracle_normals = !a.estimated_normals;
  cfg.knn = a.knn;
  cfg.consistency_deg = a.consistency_deg;
  cfg.reject_tolerance = a.reject_tol;
  cfg.downsample_to = a.downsample;

  const data::Dataset ds = data::generate_dataset(model, cfg);
  data::save_dataset(ds, (fs::path(a.out) / "dataset.jsonl").string(),
                     (fs::path(a.out) / "dataset.meta.json").string());

  std::map<double, size_t> per_level;
  for (const auto& r : ds.records) ++per_level[r.d_bar];
  std::cout << "records " << ds.records.size() << '\n';
  for (const auto& [level, count] : per_level) {
    std::cout << "level " << level << " count " << count << '\n';
  }
  const double rej = ds.meta.num_candidates > 0
                         ? static_cast<double>(ds.meta.num_rejected) / ds.meta.num_candidates
                         : 0.0;
  std::cout << "rejection_rate " << rej << '\n';
  std::cout << "flagged_points " << ds.meta.num_flagged << '\n';
  std::cout << "splits " << ds.splits.train.size() << '/' << ds.splits.val.size() << '/'
            << ds.splits.test.size() << '\n';
  return 0;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  std::string data, out;
  int epochs = 50;
  int batch = 512;
  double lr = 1e-3;
  double lr_min = 1e-5;
  double gamma = 0.02;
  double align_weight = 1.0;
  int width = 128;
  uint64_t seed = 0;
  int checkpoint_every = 0;
  std::string resume;
  bool force = false;
};

int run_train(const TrainArgs& a) {
  const auto records = (fs::path(a.data) / "dataset.jsonl").string();
  const auto metaf = (fs::path(a.data) / "dataset.meta.json").string();
  const data::Dataset ds = data::load_dataset(records, metaf);
  prepare_outdir(a.out, a.force);
  write_manifest(a.out, "train", metaf, a.seed);

  train::TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch;
  cfg.lr = a.lr;
  cfg.lr_min = a.lr_min;
  cfg.gamma = a.gamma;
  cfg.align_weight = a.align_weight;
  cfg.width = a.width;
  cfg.seed = a.seed;
  cfg.checkpoint_every = a.checkpoint_every;
  cfg.checkpoint_prefix = (fs::path(a.out) / "checkpoint").string();
  cfg.resume_from = a.resume;

  const train::TrainResult res = train::train(cfg, ds);
  net::save(res.params, (fs::path(a.out) / "model.rdsf").string());
  train::write_trace_csv(res.trace, (fs::path(a.out) / "trace.csv").string());

  std::cout << "epochs " << res.trace.size() << '\n';
  std::cout << "best_epoch " << res.best_epoch << '\n';
  std::cout << "best_val " << res.best_val << '\n';
  if (!res.trace.empty()) {
    const auto& last = res.trace.back();
    std::cout << "final mse " << last.mse << " tangency " << last.tangency << " normal_align "
              << last.normal_align << " rho_reg " << last.rho_reg << '\n';
  }
  return 0;
}

// -------------------------------------------------------------- eval-field

struct EvalArgs {
  std::string model, geometry;
  double band = 0.0;  // 0 -> 0.2 * bounding radius
  int probes = 2000;
  uint64_t seed = 0;
};

int run_eval_field(const EvalArgs& a) {
  const auto params = net::load(a.model);
  const auto model = geom::load_model(a.geometry);
  const double band = a.band > 0 ? a.band : 0.2 * model.bounding_radius;
  const auto fm = train::evaluate_field(params, model, band, a.probes, a.seed);
  std::cout << "band " << band << '\n';
  std::cout << "band_mae " << fm.band_mae << " (" << fm.band_probes << " probes)\n";
  std::cout << "surface_abs_p90 " << fm.surface_abs_p90 << " (" << fm.surface_probes
            << " probes)\n";
  std::cout << "far3_rel mean " << fm.far3_rel_mean << " max " << fm.far3_rel_max << '\n';
  std::cout << "far10_rel mean " << fm.far10_rel_mean << " max " << fm.far10_rel_max << '\n';
  std::cout << "grad_unit_frac " << fm.grad_unit_frac << '\n';
  return 0;
}

// ------------------------------------------------------------------- slice

struct SliceArgs {
  std::string model, geometry, out;
  bool oracle = false;
  std::vector<double> q;
  std::string plane = "z";
  double offset = 0.0;
  double range_min = -1.0, range_max = 1.0;
  int res = 128;
  double level = std::numeric_limits<double>::quiet_NaN();
  bool force = false;
  uint64_t seed = 0;
};

int run_slice(const SliceArgs& a) {
  prepare_outdir(a.out, a.force);
  write_manifest(a.out, "slice", a.oracle ? a.geometry : a.model, a.seed);

  slice::SliceSpec spec;
  if (a.plane.size() != 1) throw CLI::ValidationError("--plane must be x, y or z");
  spec.plane = a.plane[0];
  spec.offset = a.offset;
  spec.min_a = spec.min_b = a.range_min;
  spec.max_a = spec.max_b = a.range_max;
  spec.res_a = spec.res_b = a.res;

  std::function<double(const Vec3&)> field;
  geom::ArticulatedModel model;
  net::NetworkParams params;
  VecX q;
  if (a.oracle) {
    model = geom::load_model(a.geometry);
    q = VecX::Zero(model.dof());
    if (!a.q.empty()) {
      if (static_cast<int>(a.q.size()) != model.dof()) {
        throw std::runtime_error("--q length does not match the model");
      }
      q = Eigen::Map<const VecX>(a.q.data(), a.q.size());
    }
    auto frames = geom::forward_kinematics(model, q);
    field = [model, frames](const Vec3& x) { return geom::model_sdf(model, frames, x); };
  } else {
    params = net::load(a.model);
    q = VecX::Zero(params.meta.q_dim);
    if (!a.q.empty()) {
      if (static_cast<int>(a.q.size()) != params.meta.q_dim) {
        throw std::runtime_error("--q length does not match the model");
      }
      q = Eigen::Map<const VecX>(a.q.data(), a.q.size());
    }
    field = [&params, q](const Vec3& x) { return net::forward(params, x, q).d; };
  }

  const auto grid = slice::eval_slice(field, spec);
  slice::write_slice_csv(grid, (fs::path(a.out) / "slice.csv").string());
  slice::write_slice_pgm(grid, (fs::path(a.out) / "slice.pgm").string());
  if (std::isfinite(a.level)) {
    const auto pts = slice::contour_points(grid, a.level);
    slice::write_contour_csv(grid, pts, a.level,
                             (fs::path(a.out) / "contour.csv").string());
    std::cout << "contour_points " << pts.size() << '\n';
  }
  std::cout << "d_min " << grid.values.minCoeff() << " d_max " << grid.values.maxCoeff() << '\n';
  return 0;
}

// ---------------------------------------------------------------- simulate

struct SimArgs {
  std::string scenario, controller, out;
  std::string avoidance = "none";
  int episodes = 1;
  uint64_t seed = 0;
  bool dry_run = false;
  bool steps_csv = false;
  bool force = false;
};

void write_steps_csv(const sim::EpisodeRecord& rec, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.precision(9);
  os << "t";
  for (Eigen::Index j = 0; j < rec.steps.front().q.size(); ++j) os << ",q" << j;
  for (Eigen::Index j = 0; j < rec.steps.front().qdot_cmd.size(); ++j) os << ",qd" << j;
  os << ",min_dist,targets\n";
  for (const auto& st : rec.steps) {
    os << st.t;
    for (Eigen::Index j = 0; j < st.q.size(); ++j) os << ',' << st.q[j];
    for (Eigen::Index j = 0; j < st.qdot_cmd.size(); ++j) os << ',' << st.qdot_cmd[j];
    os << ',' << st.min_dist << ',' << st.targets_reached << '\n';
  }
}

int run_simulate(const SimArgs& a) {
  sim::Scenario scenario = sim::load_scenario(a.scenario);
  const sim::Avoidance avoid = parse_avoidance(a.avoidance);
  ctrl::ControllerConfig cfg =
      a.controller.empty()
          ? ctrl::ControllerConfig{.joint_vel_limits = VecX::Constant(scenario.robot.dof(), 1.5)}
          : load_controller_config(a.controller, scenario.robot.dof());
  if (a.dry_run) {
    std::cout << "configs ok: robot dof " << scenario.robot.dof() << ", obstacles "
              << scenario.obstacles.size() << ", episodes " << a.episodes << '\n';
    return 0;
  }
  if (avoid == sim::Avoidance::Learned) sim::ensure_fields_loaded(scenario);

  prepare_outdir(a.out, a.force);
  write_manifest(a.out, "simulate", a.scenario, a.seed);

  std::vector<sim::EpisodeRecord> recs;
  for (int e = 0; e < a.episodes; ++e) {
    recs.push_back(sim::run_episode(scenario, cfg, avoid, a.seed + e));
  }
  sim::write_episode_jsonl(recs, (fs::path(a.out) / "episodes.jsonl").string());
  if (a.steps_csv && !recs.empty() && !recs.front().steps.empty()) {
    write_steps_csv(recs.front(), (fs::path(a.out) / "steps.csv").string());
  }
  for (const auto& r : recs) std::cout << sim::episode_summary_json(r) << '\n';
  return 0;
}

// ------------------------------------------------------------------- bench

struct BenchArgs {
  std::string suite, out;
  int threads = 0;
  bool dry_run = false;
  bool force = false;
  int64_t seed_override = -1;
};

int run_bench(const BenchArgs& a) {
  std::ifstream in(a.suite);
  if (!in) throw std::runtime_error("cannot open suite config: " + a.suite);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error(a.suite + ": " + std::string(e.what()));
  }
  sim::Scenario scenario =
      sim::load_scenario(resolve_relative(a.suite, j.at("scenario")));
  const int episodes = j.value("episodes", 50);
  const uint64_t base_seed =
      a.seed_override >= 0 ? static_cast<uint64_t>(a.seed_override) : j.value("base_seed", 1000ULL);

  std::vector<sim::BenchVariant> variants;
  bool needs_fields = false;
  for (const auto& vj : j.at("variants")) {
    sim::BenchVariant v;
    v.name = vj.at("name");
    v.avoidance = parse_avoidance(vj.value("avoidance", "none"));
    if (v.avoidance == sim::Avoidance::Learned) needs_fields = true;
    if (vj.contains("controller")) {
      v.controller = load_controller_config(resolve_relative(a.suite, vj.at("controller")),
                                            scenario.robot.dof());
    } else {
      v.controller.joint_vel_limits = VecX::Constant(scenario.robot.dof(), 1.5);
    }
    variants.push_back(std::move(v));
  }
  if (a.dry_run) {
    std::cout << "configs ok: " << variants.size() << " variants, " << episodes
              << " episodes each\n";
    return 0;
  }
  if (needs_fields) sim::ensure_fields_loaded(scenario);

  prepare_outdir(a.out, a.force);
  write_manifest(a.out, "bench", a.suite, base_seed);

  const auto rows = sim::run_benchmark(scenario, variants, episodes, base_seed, a.threads);
  sim::write_bench_csv(rows, (fs::path(a.out) / "results.csv").string());
  std::cout << sim::format_bench_table(rows);
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Learned any-scale distance fields for articulated bodies, with a reactive "
               "avoidance controller and a kinematic benchmark harness"};
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* c_gd = app.add_subcommand("gen-data", "Generate an augmented training dataset");
  c_gd->add_option("--model", gd.model, "model config (json)")->required();
  c_gd->add_option("--out", gd.out, "output directory")->required();
  c_gd->add_option("--seed", gd.seed, "rng seed");
  c_gd->add_option("--configs", gd.configs, "number of sampled configurations");
  c_gd->add_option("--points", gd.points, "surface points per configuration");
  c_gd->add_option("--levels", gd.levels, "offset levels in meters")->delimiter(',');
  c_gd->add_flag("--estimated-normals", gd.estimated_normals,
                 "estimate normals from the cloud instead of the analytic oracle");
  c_gd->add_option("--knn", gd.knn, "neighbors for normal estimation");
  c_gd->add_option("--consistency-deg", gd.consistency_deg, "normal consistency threshold");
  c_gd->add_option("--reject-tol", gd.reject_tol,
                   "rejection accepts nearest points within this distance of the source "
                   "(0 = exact match)");
  c_gd->add_option("--downsample", gd.downsample, "uniformly downsample to this record count");
  c_gd->add_flag("--force", gd.force, "reuse a non-empty output directory");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train a field on a generated dataset");
  c_tr->add_option("--data", tr.data, "dataset directory (from gen-data)")->required();
  c_tr->add_option("--out", tr.out, "output directory")->required();
  c_tr->add_option("--epochs", tr.epochs);
  c_tr->add_option("--batch", tr.batch);
  c_tr->add_option("--lr", tr.lr);
  c_tr->add_option("--lr-min", tr.lr_min);
  c_tr->add_option("--gamma", tr.gamma, "threshold regularization coefficient");
  c_tr->add_option("--align-weight", tr.align_weight, "coefficient on the alignment terms");
  c_tr->add_option("--width", tr.width, "hidden width");
  c_tr->add_option("--seed", tr.seed);
  c_tr->add_option("--checkpoint-every", tr.checkpoint_every, "epochs between snapshots");
  c_tr->add_option("--resume", tr.resume, "checkpoint prefix to continue from");
  c_tr->add_flag("--force", tr.force);

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval-field", "Compare a trained field with the oracle");
  c_ev->add_option("--model", ev.model, "trained model file")->required();
  c_ev->add_option("--geometry", ev.geometry, "model config (json)")->required();
  c_ev->add_option("--band", ev.band, "near-surface band in meters (0 = 0.2 r)");
  c_ev->add_option("--probes", ev.probes);
  c_ev->add_option("--seed", ev.seed);

  SliceArgs sl;
  auto* c_sl = app.add_subcommand("slice", "Export a planar slice of a field");
  c_sl->add_option("--model", sl.model, "trained model file");
  c_sl->add_option("--geometry", sl.geometry, "model config, required with --oracle");
  c_sl->add_flag("--oracle", sl.oracle, "slice the analytic field instead of a trained one");
  c_sl->add_option("--q", sl.q, "configuration")->delimiter(',');
  c_sl->add_option("--plane", sl.plane, "x, y or z");
  c_sl->add_option("--offset", sl.offset, "plane offset in meters");
  c_sl->add_option("--range-min", sl.range_min);
  c_sl->add_option("--range-max", sl.range_max);
  c_sl->add_option("--res", sl.res, "grid resolution per axis");
  c_sl->add_option("--level", sl.level, "also extract this level contour");
  c_sl->add_option("--out", sl.out, "output directory")->required();
  c_sl->add_flag("--force", sl.force);

  SimArgs si;
  auto* c_si = app.add_subcommand("simulate", "Run reactive-control episodes");
  c_si->add_option("--scenario", si.scenario, "scenario config (json)")->required();
  c_si->add_option("--controller", si.controller, "controller config (json)");
  c_si->add_option("--avoidance", si.avoidance, "none|spheres|learned|analytic");
  c_si->add_option("--episodes", si.episodes);
  c_si->add_option("--seed", si.seed);
  c_si->add_option("--out", si.out, "output directory");
  c_si->add_flag("--dry-run", si.dry_run, "validate configs without executing");
  c_si->add_flag("--steps-csv", si.steps_csv, "dump per-step diagnostics for the first episode");
  c_si->add_flag("--force", si.force);

  BenchArgs be;
  auto* c_be = app.add_subcommand("bench", "Run the controller benchmark suite");
  c_be->add_option("--suite", be.suite, "suite config (json)")->required();
  c_be->add_option("--out", be.out, "output directory");
  c_be->add_option("--threads", be.threads, "worker threads (0 = hardware)");
  c_be->add_option("--seed", be.seed_override, "override the suite base seed");
  c_be->add_flag("--dry-run", be.dry_run);
  c_be->add_flag("--force", be.force);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exit 0
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  }

  try {
    if (c_gd->parsed()) return run_gen_data(gd);
    if (c_tr->parsed()) return run_train(tr);
    if (c_ev->parsed()) return run_eval_field(ev);
    if (c_sl->parsed()) {
      if (sl.oracle && sl.geometry.empty()) {
        std::cerr << "--oracle requires --geometry\n";
        return 2;
      }
      if (!sl.oracle && sl.model.empty()) {
        std::cerr << "slice requires --model or --oracle with --geometry\n";
        return 2;
      }
      return run_slice(sl);
    }
    if (c_si->parsed()) {
      if (!si.dry_run && si.out.empty()) {
        std::cerr << "simulate requires --out (or --dry-run)\n";
        return 2;
      }
      return run_simulate(si);
    }
    if (c_be->parsed()) {
      if (!be.dry_run && be.out.empty()) {
        std::cerr << "bench requires --out (or --dry-run)\n";
        return 2;
      }
      return run_bench(be);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

int cli_main(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("redsdf");
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

}  // namespace redsdf::cli
