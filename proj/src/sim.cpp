#include "redsdf/sim.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace redsdf::sim {

using json = nlohmann::json;

namespace {

uint64_t mix(uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

VecX ObstacleScript::q_at(const geom::ArticulatedModel& m, double t, uint64_t episode_seed) const {
  VecX base = q0.size() == m.dof() ? q0 : VecX::Zero(m.dof());
  if (type == Type::Static || m.dof() == 0) return base;

  VecX q = base;
  for (const auto& l : m.links) {
    if (!l.revolute) continue;
    const int j = l.q_index;
    const double room = std::min(base[j] - l.limit_lo, l.limit_hi - base[j]);
    const double total_amp = amplitude * room;
    std::mt19937_64 rng(mix(episode_seed ^ (0xB33Full + 1315423911ULL * (j + 1))));
    std::uniform_real_distribution<double> uphase(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> uamp(0.2, 1.0);
    double v = 0;
    double norm = 0;
    double amps[16], phases[16], freqs[16];
    const int H = std::min(harmonics, 16);
    for (int h = 0; h < H; ++h) {
      amps[h] = uamp(rng);
      phases[h] = uphase(rng);
      freqs[h] = max_hz * (h + 1) / H;
      norm += amps[h];
    }
    for (int h = 0; h < H; ++h) {
      v += (amps[h] / norm) * total_amp *
           std::sin(2.0 * std::numbers::pi * freqs[h] * t + phases[h]);
    }
    q[j] = std::clamp(base[j] + v, l.limit_lo, l.limit_hi);
  }
  return q;
}

namespace {

Transform parse_pose_json(const json& j) {
  Transform t = Transform::Identity();
  if (j.contains("xyz")) {
    const auto& v = j.at("xyz");
    t.translation() = Vec3(v.at(0), v.at(1), v.at(2));
  }
  if (j.contains("rpy")) {
    const auto& v = j.at("rpy");
    t.linear() = (Eigen::AngleAxisd(v.at(2).get<double>(), Vec3::UnitZ()) *
                  Eigen::AngleAxisd(v.at(1).get<double>(), Vec3::UnitY()) *
                  Eigen::AngleAxisd(v.at(0).get<double>(), Vec3::UnitX()))
                     .toRotationMatrix();
  }
  return t;
}

VecX parse_vecx(const json& j) {
  VecX v(j.size());
  for (size_t i = 0; i < j.size(); ++i) v[i] = j.at(i);
  return v;
}

}  // namespace

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error(path + ": " + std::string(e.what()));
  }
  const auto dir = std::filesystem::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return fp.is_absolute() ? fp.string() : (dir / fp).string();
  };

  Scenario s;
  const auto& rj = j.at("robot");
  s.robot = geom::load_model(resolve(rj.at("model")));
  s.q0 = rj.contains("q0") ? parse_vecx(rj.at("q0")) : VecX::Zero(s.robot.dof());
  s.ee_link = rj.value("ee_link", static_cast<int>(s.robot.links.size()) - 1);
  if (rj.contains("ee_local")) {
    const auto& e = rj.at("ee_local");
    s.ee_local = Vec3(e.at(0), e.at(1), e.at(2));
  }

  for (const auto& oj : j.value("obstacles", json::array())) {
    SceneObstacle o;
    o.name = oj.value("name", "obstacle");
    o.model = geom::load_model(resolve(oj.at("model")));
    if (oj.contains("pose")) o.pose = parse_pose_json(oj.at("pose"));
    if (oj.contains("field")) o.field_path = resolve(oj.at("field"));
    o.spheres_per_link = oj.value("spheres_per_link", 2);
    if (oj.contains("script")) {
      const auto& sj = oj.at("script");
      const std::string type = sj.value("type", "static");
      if (type == "static") {
        o.script.type = ObstacleScript::Type::Static;
      } else if (type == "bandlimited") {
        o.script.type = ObstacleScript::Type::BandLimited;
        o.script.amplitude = sj.value("amplitude", 0.6);
        o.script.harmonics = sj.value("harmonics", 3);
        o.script.max_hz = sj.value("max_hz", 0.4);
      } else {
        throw std::runtime_error("unknown obstacle script type: " + type);
      }
      if (sj.contains("q0")) o.script.q0 = parse_vecx(sj.at("q0"));
    }
    if (o.script.q0.size() != o.model.dof()) o.script.q0 = VecX::Zero(o.model.dof());
    s.obstacles.push_back(std::move(o));
  }

  const auto& tj = j.at("targets");
  const std::string mode = tj.value("mode", "sample");
  if (mode == "fixed") {
    s.targets.mode = TargetSpec::Mode::Fixed;
    for (const auto& pj : tj.at("points")) {
      s.targets.points.emplace_back(pj.at(0), pj.at(1), pj.at(2));
    }
    s.targets.count = static_cast<int>(s.targets.points.size());
  } else if (mode == "sample") {
    s.targets.mode = TargetSpec::Mode::Sampled;
    const auto& bj = tj.at("box");
    s.targets.box_min = Vec3(bj.at("min").at(0), bj.at("min").at(1), bj.at("min").at(2));
    s.targets.box_max = Vec3(bj.at("max").at(0), bj.at("max").at(1), bj.at("max").at(2));
    s.targets.clearance = tj.value("clearance", 0.1);
    s.targets.count = tj.value("count", 1);
  } else {
    throw std::runtime_error("unknown target mode: " + mode);
  }

  s.duration = j.value("duration", 30.0);
  s.dt = j.value("dt", 1.0 / 60.0);
  if (!(s.dt > 0) || s.duration < s.dt) throw std::runtime_error("bad duration/dt");
  s.success_threshold = j.value("success_threshold", 0.03);
  s.referee_points_robot = j.value("referee_points_robot", 600);
  s.referee_points_obstacle = j.value("referee_points_obstacle", 300);
  s.sequential = j.value("sequential", false);
  s.poi_per_link = j.value("poi_per_link", 22);
  return s;
}

void ensure_fields_loaded(Scenario& s) {
  for (auto& o : s.obstacles) {
    if (!o.net && !o.field_path.empty()) {
      o.net = std::make_shared<net::NetworkParams>(net::load(o.field_path, o.model.dof()));
    }
  }
}

std::vector<Vec3> generate_reach_targets(const geom::ArticulatedModel& robot,
                                         const TargetSpec& spec, int count, uint64_t seed) {
  if (count < 1) throw std::invalid_argument("generate_reach_targets: count >= 1");
  if (spec.mode == TargetSpec::Mode::Fixed) {
    std::vector<Vec3> pts = spec.points;
    if (static_cast<int>(pts.size()) < count) {
      throw std::invalid_argument("generate_reach_targets: not enough fixed targets");
    }
    pts.resize(count);
    return pts;
  }
  const auto frames = geom::forward_kinematics(robot, VecX::Zero(robot.dof()));
  std::mt19937_64 rng(mix(seed ^ 0x7A26E7ULL));
  std::uniform_real_distribution<double> ux(spec.box_min.x(), spec.box_max.x());
  std::uniform_real_distribution<double> uy(spec.box_min.y(), spec.box_max.y());
  std::uniform_real_distribution<double> uz(spec.box_min.z(), spec.box_max.z());

  std::vector<Vec3> out;
  long tried = 0;
  while (static_cast<int>(out.size()) < count) {
    ++tried;
    if (tried > 200 && static_cast<double>(out.size()) / tried < 0.01) {
      throw std::runtime_error(
          "generate_reach_targets: rejection rate above 99%; workspace misconfigured");
    }
    const Vec3 cand(ux(rng), uy(rng), uz(rng));
    if (geom::model_sdf(robot, frames, cand) < spec.clearance) continue;
    out.push_back(cand);
  }
  return out;
}

double smoothness(const std::vector<StepLog>& steps, double dt) {
  if (steps.size() < 3) throw std::invalid_argument("smoothness: need at least 3 steps");
  double sum = 0;
  for (size_t i = 1; i + 1 < steps.size(); ++i) {
    const VecX qdd = (steps[i + 1].qdot_cmd - steps[i - 1].qdot_cmd) / (2.0 * dt);
    sum += qdd.squaredNorm();
  }
  return sum;
}

namespace {

struct RefereeShell {
  std::vector<std::pair<int, Vec3>> robot_pts;
  std::vector<std::vector<std::pair<int, Vec3>>> obstacle_pts;
};

RefereeShell build_referee(const Scenario& s) {
  RefereeShell shell;
  const int per_link_r =
      std::max(1, s.referee_points_robot / std::max(1, static_cast<int>(s.robot.links.size())));
  shell.robot_pts = geom::sample_link_shell(s.robot, per_link_r, 0xC0117D0ULL);
  for (const auto& o : s.obstacles) {
    const int per_link_o = std::max(
        1, s.referee_points_obstacle / std::max(1, static_cast<int>(o.model.links.size())));
    shell.obstacle_pts.push_back(geom::sample_link_shell(o.model, per_link_o, 0xC0117D1ULL));
  }
  return shell;
}

bool referee_collision(const Scenario& s, const RefereeShell& shell,
                       const std::vector<Transform>& robot_frames,
                       const std::vector<std::vector<Transform>>& obstacle_frames) {
  // robot shell against every obstacle
  for (size_t o = 0; o < s.obstacles.size(); ++o) {
    for (const auto& [link, local] : shell.robot_pts) {
      const Vec3 p = robot_frames[link] * local;
      if (geom::model_sdf(s.obstacles[o].model, obstacle_frames[o], p) < 0) return true;
    }
  }
  // symmetric check: obstacle shells against the robot
  for (size_t o = 0; o < s.obstacles.size(); ++o) {
    for (const auto& [link, local] : shell.obstacle_pts[o]) {
      const Vec3 p = obstacle_frames[o][link] * local;
      if (geom::model_sdf(s.robot, robot_frames, p) < 0) return true;
    }
  }
  return false;
}

}  // namespace

EpisodeRecord run_episode(const Scenario& s, const ctrl::ControllerConfig& cfg,
                          Avoidance avoidance, uint64_t seed) {
  EpisodeRecord rec;
  rec.seed = seed;

  const int n_targets = s.sequential ? s.targets.count : 1;
  const auto targets = generate_reach_targets(s.robot, s.targets, n_targets, seed);

  std::vector<ctrl::ObstacleField> fields;
  if (avoidance != Avoidance::None) {
    for (const auto& o : s.obstacles) {
      ctrl::ObstacleField f;
      f.name = o.name;
      f.model = &o.model;
      f.pose = o.pose;
      f.spheres_per_link = o.spheres_per_link;
      switch (avoidance) {
        case Avoidance::Spheres:
          f.kind = ctrl::FieldKind::Spheres;
          break;
        case Avoidance::Analytic:
          f.kind = ctrl::FieldKind::Analytic;
          break;
        case Avoidance::Learned:
          f.kind = ctrl::FieldKind::Learned;
          if (!o.net) {
            throw std::runtime_error("run_episode: learned field for '" + o.name +
                                     "' is not loaded");
          }
          f.net = o.net.get();
          break;
        default:
          break;
      }
      fields.push_back(f);
    }
  }

  const RefereeShell shell = build_referee(s);
  const ctrl::PoISet pois = ctrl::ring_poi(s.robot, s.poi_per_link);
  ctrl::PidState pid;

  VecX q = s.q0;
  const long n_steps = std::lround(s.duration / s.dt);
  rec.steps.reserve(n_steps);
  int target_idx = 0;
  double query_sum = 0;

  for (long i = 0; i < n_steps; ++i) {
    const double t = static_cast<double>(i) * s.dt;
    const auto robot_frames = geom::forward_kinematics(s.robot, q);

    std::vector<VecX> obs_q;
    std::vector<std::vector<Transform>> obs_frames;
    for (const auto& o : s.obstacles) {
      obs_q.push_back(o.script.q_at(o.model, t, seed));
      auto f = geom::forward_kinematics(o.model, obs_q.back());
      for (auto& fr : f) fr = o.pose * fr;
      obs_frames.push_back(std::move(f));
    }

    StepLog log;
    log.t = t;
    log.q = q;
    log.targets_reached = rec.targets_reached;

    if (referee_collision(s, shell, robot_frames, obs_frames)) {
      rec.collision = true;
      log.collision = true;
      log.qdot_cmd = VecX::Zero(s.robot.dof());
      rec.steps.push_back(std::move(log));
      break;
    }

    const Vec3 goal = targets[std::min<int>(target_idx, targets.size() - 1)];
    ctrl::StepDiagnostics diag;
    VecX qdot;
    if (fields.empty()) {
      // task-only control
      const Vec3 ee = robot_frames[s.ee_link] * s.ee_local;
      const Vec3 xdot_t = ctrl::task_velocity_pid(ee, goal, cfg.pid, pid, s.dt);
      const MatX jac_t = geom::point_jacobian(s.robot, robot_frames, s.ee_link, s.ee_local);
      qdot = ctrl::joint_command(jac_t, xdot_t, {}, {}, cfg.joint_vel_limits);
    } else {
      qdot = ctrl::controller_step(cfg, s.robot, q, pois, s.ee_link, s.ee_local, goal, fields,
                                   obs_q, s.dt, pid, diag);
      query_sum += diag.query_seconds;
    }
    log.min_dist = diag.min_dist.empty()
                       ? std::numeric_limits<double>::infinity()
                       : *std::min_element(diag.min_dist.begin(), diag.min_dist.end());
    log.qdot_cmd = qdot;

    if (diag.collision_signal) {
      rec.controller_stop = true;  // the field claims contact; freeze and stop
      rec.steps.push_back(std::move(log));
      break;
    }

    q += qdot * s.dt;
    for (const auto& l : s.robot.links) {
      if (l.revolute) q[l.q_index] = std::clamp(q[l.q_index], l.limit_lo, l.limit_hi);
    }

    const Vec3 ee_after = (geom::forward_kinematics(s.robot, q)[s.ee_link]) * s.ee_local;
    const double err = (ee_after - goal).norm();
    if (err < s.success_threshold) {
      if (s.sequential) {
        if (target_idx < static_cast<int>(targets.size())) {
          ++target_idx;  // activate the next target; stop counting after the last
          ++rec.targets_reached;
        }
      } else {
        if (rec.reach_time < 0) rec.reach_time = t + s.dt;
        rec.targets_reached = 1;
      }
    }

    rec.steps.push_back(std::move(log));
  }

  const auto final_frames = geom::forward_kinematics(s.robot, q);
  const Vec3 final_goal = targets[std::min<int>(target_idx, targets.size() - 1)];
  rec.final_error = (final_frames[s.ee_link] * s.ee_local - final_goal).norm();
  rec.success = !rec.collision && rec.final_error < s.success_threshold;
  rec.smoothness = rec.steps.size() >= 3 ? smoothness(rec.steps, s.dt) : 0.0;
  rec.mean_query_seconds = rec.steps.empty() ? 0.0 : query_sum / rec.steps.size();
  return rec;
}

namespace {

Stat make_stat(const std::vector<double>& xs) {
  Stat st;
  st.n = static_cast<int>(xs.size());
  if (xs.empty()) return st;
  double sum = 0;
  for (double x : xs) sum += x;
  st.mean = sum / xs.size();
  if (xs.size() > 1) {
    double var = 0;
    for (double x : xs) var += (x - st.mean) * (x - st.mean);
    var /= (xs.size() - 1);
    st.ci95 = 1.96 * std::sqrt(var / xs.size());
  }
  return st;
}

}  // namespace

int resolve_thread_count(int requested) {
  int n = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  if (const char* env = std::getenv("REDSDF_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = std::min(n, cap);
  }
  return n;
}

std::vector<BenchRow> run_benchmark(const Scenario& s, const std::vector<BenchVariant>& variants,
                                    int episodes, uint64_t base_seed, int threads) {
  if (episodes < 1) throw std::invalid_argument("run_benchmark: episodes >= 1");
  const int n_threads = resolve_thread_count(threads);

  std::vector<BenchRow> rows;
  for (const auto& variant : variants) {
    std::vector<EpisodeRecord> recs(episodes);
    std::atomic<int> next{0};
    auto worker = [&]() {
      for (;;) {
        const int e = next.fetch_add(1);
        if (e >= episodes) return;
        recs[e] = run_episode(s, variant.controller, variant.avoidance,
                              base_seed + static_cast<uint64_t>(e));
      }
    };
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();

    BenchRow row;
    row.variant = variant.name;
    row.episodes = episodes;
    std::vector<double> final_err, reach, smooth, ctime, targets;
    int n_success = 0, n_coll = 0;
    for (const auto& r : recs) {
      if (r.success) ++n_success;
      if (r.collision) ++n_coll;
      final_err.push_back(r.final_error);
      if (r.success && r.reach_time >= 0) reach.push_back(r.reach_time);
      if (!r.collision && r.steps.size() >= 3) smooth.push_back(r.smoothness);
      ctime.push_back(r.mean_query_seconds * 1e3);
      targets.push_back(static_cast<double>(r.targets_reached));
    }
    row.success_rate = static_cast<double>(n_success) / episodes;
    row.collisions = n_coll;
    row.final_err = make_stat(final_err);
    row.reach_time = make_stat(reach);
    row.smooth = make_stat(smooth);
    row.ctime_ms = make_stat(ctime);
    row.targets = make_stat(targets);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_bench_csv(const std::vector<BenchRow>& rows, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "variant,episodes,success_rate,collisions,final_err_mean,final_err_ci,"
        "reach_time_mean,reach_time_ci,smoothness_mean,smoothness_ci,"
        "ctime_ms_mean,ctime_ms_ci,targets_mean,targets_ci\n";
  os.precision(9);
  for (const auto& r : rows) {
    os << r.variant << ',' << r.episodes << ',' << r.success_rate << ',' << r.collisions << ','
       << r.final_err.mean << ',' << r.final_err.ci95 << ',' << r.reach_time.mean << ','
       << r.reach_time.ci95 << ',' << r.smooth.mean << ',' << r.smooth.ci95 << ','
       << r.ctime_ms.mean << ',' << r.ctime_ms.ci95 << ',' << r.targets.mean << ','
       << r.targets.ci95 << '\n';
  }
}

std::string format_bench_table(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os.precision(4);
  os << "variant              succ%   coll  final_err(m)     reach(s)        smoothness       "
        "c.time(ms)   targets\n";
  for (const auto& r : rows) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "%-20s %5.1f %6d  %7.4f±%-7.4f %7.2f±%-6.2f %10.2f±%-9.2f %6.3f±%-6.3f "
                  "%4.2f±%-4.2f\n",
                  r.variant.c_str(), 100.0 * r.success_rate, r.collisions, r.final_err.mean,
                  r.final_err.ci95, r.reach_time.mean, r.reach_time.ci95, r.smooth.mean,
                  r.smooth.ci95, r.ctime_ms.mean, r.ctime_ms.ci95, r.targets.mean,
                  r.targets.ci95);
    os << buf;
  }
  return os.str();
}

std::string episode_summary_json(const EpisodeRecord& rec) {
  json j;
  j["seed"] = rec.seed;
  j["steps"] = rec.steps.size();
  j["collision"] = rec.collision;
  j["controller_stop"] = rec.controller_stop;
  j["success"] = rec.success;
  j["final_error"] = rec.final_error;
  j["reach_time"] = rec.reach_time;
  j["targets_reached"] = rec.targets_reached;
  j["smoothness"] = rec.smoothness;
  j["reach_time_convention"] = "successful_episodes_only";
  return j.dump();
}

void write_episode_jsonl(const std::vector<EpisodeRecord>& recs, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  for (const auto& r : recs) os << episode_summary_json(r) << '\n';
}

}  // namespace redsdf::sim
