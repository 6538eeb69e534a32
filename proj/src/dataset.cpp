#include "redsdf/dataset.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <stdexcept>

namespace redsdf::data {

using json = nlohmann::json;

void save_dataset(const Dataset& ds, const std::string& records_path,
                  const std::string& meta_path) {
  std::ofstream rec(records_path, std::ios::binary);
  if (!rec) throw std::runtime_error("cannot write " + records_path);
  for (const auto& r : ds.records) {
    json j;
    j["x"] = {r.x.x(), r.x.y(), r.x.z()};
    j["q"] = std::vector<double>(r.q.data(), r.q.data() + r.q.size());
    j["d"] = r.d_bar;
    j["n"] = {r.n_bar.x(), r.n_bar.y(), r.n_bar.z()};
    j["w"] = r.omega;
    j["cfg"] = r.config_id;
    rec << j.dump() << '\n';
  }

  json meta;
  meta["q_dim"] = ds.meta.q_dim;
  meta["bounding_radius"] = ds.meta.bounding_radius;
  meta["levels"] = ds.meta.levels;
  meta["seed"] = ds.meta.seed;
  meta["num_configs"] = ds.meta.num_configs;
  meta["points_per_config"] = ds.meta.points_per_config;
  meta["num_candidates"] = ds.meta.num_candidates;
  meta["num_rejected"] = ds.meta.num_rejected;
  meta["num_flagged"] = ds.meta.num_flagged;
  meta["oracle_normals"] = ds.meta.oracle_normals;
  meta["model_name"] = ds.meta.model_name;
  meta["num_records"] = ds.records.size();
  meta["splits"] = {{"train", ds.splits.train}, {"val", ds.splits.val}, {"test", ds.splits.test}};
  std::ofstream mf(meta_path, std::ios::binary);
  if (!mf) throw std::runtime_error("cannot write " + meta_path);
  mf << meta.dump(2) << '\n';
}

Dataset load_dataset(const std::string& records_path, const std::string& meta_path) {
  Dataset ds;

  std::ifstream mf(meta_path);
  if (!mf) throw std::runtime_error("cannot open " + meta_path);
  json meta;
  try {
    mf >> meta;
  } catch (const json::exception& e) {
    throw std::runtime_error(meta_path + ": " + e.what());
  }
  ds.meta.q_dim = meta.at("q_dim");
  ds.meta.bounding_radius = meta.at("bounding_radius");
  ds.meta.levels = meta.at("levels").get<std::vector<double>>();
  ds.meta.seed = meta.at("seed");
  ds.meta.num_configs = meta.at("num_configs");
  ds.meta.points_per_config = meta.at("points_per_config");
  ds.meta.num_candidates = meta.at("num_candidates");
  ds.meta.num_rejected = meta.at("num_rejected");
  ds.meta.num_flagged = meta.at("num_flagged");
  ds.meta.oracle_normals = meta.at("oracle_normals");
  ds.meta.model_name = meta.at("model_name");
  ds.splits.train = meta.at("splits").at("train").get<std::vector<int>>();
  ds.splits.val = meta.at("splits").at("val").get<std::vector<int>>();
  ds.splits.test = meta.at("splits").at("test").get<std::vector<int>>();

  std::ifstream rec(records_path);
  if (!rec) throw std::runtime_error("cannot open " + records_path);
  std::string line;
  size_t line_no = 0;
  while (std::getline(rec, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error(records_path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    AugmentedSample s;
    const auto& x = j.at("x");
    s.x = Vec3(x.at(0), x.at(1), x.at(2));
    const auto qv = j.at("q").get<std::vector<double>>();
    if (static_cast<int>(qv.size()) != ds.meta.q_dim) {
      throw std::runtime_error(records_path + ":" + std::to_string(line_no) +
                               ": configuration dimension does not match metadata");
    }
    s.q = Eigen::Map<const VecX>(qv.data(), qv.size());
    s.d_bar = j.at("d");
    const auto& n = j.at("n");
    s.n_bar = Vec3(n.at(0), n.at(1), n.at(2));
    s.omega = j.at("w");
    s.config_id = j.at("cfg");
    ds.records.push_back(std::move(s));
  }
  const size_t expected = meta.at("num_records");
  if (ds.records.size() != expected) {
    throw std::runtime_error(records_path + ": record count does not match metadata");
  }
  return ds;
}

}  // namespace redsdf::data
