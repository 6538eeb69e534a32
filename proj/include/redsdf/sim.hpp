#pragma once

#include "redsdf/control.hpp"
#include "redsdf/geometry.hpp"
#include "redsdf/network.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace redsdf::sim {

/// Scripted obstacle motion. Static holds q0; BandLimited superimposes a few
/// seeded low-frequency sinusoids inside the joint limits.
struct ObstacleScript {
  enum class Type { Static, BandLimited };
  Type type = Type::Static;
  VecX q0;
  double amplitude = 0.6;  // fraction of the available limit range
  int harmonics = 3;
  double max_hz = 0.4;

  VecX q_at(const geom::ArticulatedModel& m, double t, uint64_t episode_seed) const;
};

struct SceneObstacle {
  std::string name;
  geom::ArticulatedModel model;
  Transform pose = Transform::Identity();
  ObstacleScript script;
  std::string field_path;  // learned-field file for the Learned avoidance mode
  int spheres_per_link = 2;
  std::shared_ptr<net::NetworkParams> net;  // loaded via ensure_fields_loaded
};

struct TargetSpec {
  enum class Mode { Fixed, Sampled };
  Mode mode = Mode::Sampled;
  std::vector<Vec3> points;  // Fixed
  Vec3 box_min = Vec3(-0.5, -0.5, -0.5);
  Vec3 box_max = Vec3(0.5, 0.5, 0.5);
  double clearance = 0.1;
  int count = 1;
};

struct Scenario {
  geom::ArticulatedModel robot;
  VecX q0;
  int ee_link = 0;
  Vec3 ee_local = Vec3::Zero();
  std::vector<SceneObstacle> obstacles;
  TargetSpec targets;
  double duration = 30.0;
  double dt = 1.0 / 60.0;
  double success_threshold = 0.03;
  int referee_points_robot = 600;     // dense shell, stricter than the PoI set
  int referee_points_obstacle = 300;
  bool sequential = false;  // advance to the next target once one is reached
  int poi_per_link = 22;
};

Scenario load_scenario(const std::string& path);
void ensure_fields_loaded(Scenario& s);  // loads learned fields once

// Uniform samples in the workspace box, rejecting targets closer than
// `clearance` to the robot's zero-pose shell (analytic distance). Errors out
// if more than 99% of draws get rejected.
std::vector<Vec3> generate_reach_targets(const geom::ArticulatedModel& robot,
                                         const TargetSpec& spec, int count, uint64_t seed);

struct StepLog {
  double t = 0;
  VecX q;
  VecX qdot_cmd;
  double min_dist = 0;  // over all obstacles, from controller diagnostics
  bool collision = false;
  int targets_reached = 0;
};

struct EpisodeRecord {
  std::vector<StepLog> steps;
  bool collision = false;        // analytic referee verdict
  bool controller_stop = false;  // the controller's own field signalled d < 0
  bool success = false;
  double final_error = 0;
  double reach_time = -1;  // first time the active target was within threshold
  int targets_reached = 0;
  double smoothness = 0;
  double mean_query_seconds = 0;
  uint64_t seed = 0;
};

enum class Avoidance { None, Spheres, Learned, Analytic };

EpisodeRecord run_episode(const Scenario& s, const ctrl::ControllerConfig& cfg,
                          Avoidance avoidance, uint64_t seed);

// Sum of squared joint accelerations, central differences of the commanded
// velocities. Needs at least 3 steps.
double smoothness(const std::vector<StepLog>& steps, double dt);

struct BenchVariant {
  std::string name;
  Avoidance avoidance = Avoidance::None;
  ctrl::ControllerConfig controller;
};

struct Stat {
  double mean = 0, ci95 = 0;
  int n = 0;
};

struct BenchRow {
  std::string variant;
  int episodes = 0;
  double success_rate = 0;  // fraction
  int collisions = 0;
  Stat final_err, reach_time, smooth, ctime_ms, targets;
};

// Runs episodes for every variant with seeds base_seed..base_seed+episodes-1
// (shared across variants). Thread count 0 picks the hardware default,
// capped by REDSDF_THREADS; aggregation is keyed by episode index, so
// results do not depend on scheduling.
std::vector<BenchRow> run_benchmark(const Scenario& s, const std::vector<BenchVariant>& variants,
                                    int episodes, uint64_t base_seed, int threads = 0);

void write_bench_csv(const std::vector<BenchRow>& rows, const std::string& path);
std::string format_bench_table(const std::vector<BenchRow>& rows);

// Deterministic one-line JSON summary (no wall-clock timings).
std::string episode_summary_json(const EpisodeRecord& rec);
void write_episode_jsonl(const std::vector<EpisodeRecord>& recs, const std::string& path);

int resolve_thread_count(int requested);  // applies REDSDF_THREADS

}  // namespace redsdf::sim
