#include "dvrsfbf/io.hpp"

#include "dvrsfbf/errors.hpp"

#include <cstring>
#include <fstream>

namespace dvrsfbf {

using nlohmann::json;

namespace {

json to_array(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd from_array(const json& j, const char* what) {
  if (!j.is_array()) throw ConfigError(std::string("instance: '") + what + "' must be an array");
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

void apply_overrides(GameInstance& g, const json& o) {
  if (o.contains("capacity")) g.capacity = from_array(o["capacity"], "capacity");
  if (o.contains("demand_intercept")) g.demand_intercept = from_array(o["demand_intercept"], "demand_intercept");
  if (o.contains("demand_slope_mean")) g.demand_slope_mean = from_array(o["demand_slope_mean"], "demand_slope_mean");
  if (o.contains("slope_variance")) g.slope_variance = o["slope_variance"].get<double>();
  if (o.contains("monotone_shift")) g.monotone_shift = o["monotone_shift"].get<double>();
  if (o.contains("cost_quad")) {
    const json& a = o["cost_quad"];
    if (a.is_number()) {
      for (auto& pl : g.players) pl.cost_quad = a.get<double>();
    } else {
      const auto vals = a.get<std::vector<double>>();
      if (vals.size() != g.players.size()) throw ConfigError("overrides.cost_quad: one value per player");
      for (std::size_t i = 0; i < vals.size(); ++i) g.players[i].cost_quad = vals[i];
    }
  }
}

}  // namespace

json instance_to_json(const GameInstance& game) {
  json j;
  j["format"] = "dvrsfbf-instance";
  j["version"] = 1;
  j["generator"] = {{"players", game.num_players()},
                    {"markets", game.num_markets()},
                    {"seed", game.seed},
                    {"policy", game.policy}};
  j["slope_variance"] = game.slope_variance;
  j["monotone_shift"] = game.monotone_shift;
  j["capacity"] = to_array(game.capacity);
  j["demand_intercept"] = to_array(game.demand_intercept);
  j["demand_slope_mean"] = to_array(game.demand_slope_mean);
  json players = json::array();
  for (const auto& pl : game.players)
    players.push_back({{"markets", pl.markets},
                       {"cost_quad", pl.cost_quad},
                       {"cost_lin", to_array(pl.cost_lin)},
                       {"box_upper", to_array(pl.box_upper)}});
  j["players"] = std::move(players);
  return j;
}

GameInstance instance_from_json(const json& j) {
  try {
    if (j.contains("format") && j["format"] != "dvrsfbf-instance") throw ConfigError("not a dvrsfbf instance file");
    if (j.value("version", 1) != 1) throw ConfigError("unsupported instance version");
    GameInstance g;
    if (!j.contains("players")) {
      const json& gen = j.at("generator");
      g = generate_cournot(gen.at("players").get<int>(), gen.at("markets").get<int>(),
                           gen.value("seed", std::uint64_t{0}),
                           parse_market_policy(gen.value("policy", std::string("random"))));
      if (gen.value("monotone_variant", false)) g = make_monotone_variant(std::move(g));
      if (j.contains("overrides")) apply_overrides(g, j["overrides"]);
      g.finalize();
      return g;
    }
    if (j.contains("generator")) {
      g.seed = j["generator"].value("seed", std::uint64_t{0});
      g.policy = j["generator"].value("policy", std::string());
    }
    g.slope_variance = j.value("slope_variance", 0.1);
    g.monotone_shift = j.value("monotone_shift", 0.0);
    g.capacity = from_array(j.at("capacity"), "capacity");
    g.demand_intercept = from_array(j.at("demand_intercept"), "demand_intercept");
    g.demand_slope_mean = from_array(j.at("demand_slope_mean"), "demand_slope_mean");
    for (const json& p : j.at("players")) {
      Player pl;
      pl.markets = p.at("markets").get<std::vector<int>>();
      pl.cost_quad = p.at("cost_quad").get<double>();
      pl.cost_lin = from_array(p.at("cost_lin"), "cost_lin");
      pl.box_upper = from_array(p.at("box_upper"), "box_upper");
      g.players.push_back(std::move(pl));
    }
    if (j.contains("overrides")) apply_overrides(g, j["overrides"]);
    g.finalize();
    return g;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("instance: ") + e.what());
  }
}

GameInstance load_instance(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open instance file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("instance file " + path.string() + ": " + e.what());
  }
  return instance_from_json(j);
}

void save_instance(const std::filesystem::path& path, const GameInstance& game) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write instance file " + path.string());
  out << instance_to_json(game).dump(2) << "\n";
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool identical(const GameInstance& a, const GameInstance& b) {
  auto same = [](const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    return x.size() == y.size() && (x.size() == 0 || std::memcmp(x.data(), y.data(), sizeof(double) * x.size()) == 0);
  };
  if (a.players.size() != b.players.size()) return false;
  if (!same(a.capacity, b.capacity) || !same(a.demand_intercept, b.demand_intercept) ||
      !same(a.demand_slope_mean, b.demand_slope_mean))
    return false;
  if (std::memcmp(&a.slope_variance, &b.slope_variance, sizeof(double)) != 0 ||
      std::memcmp(&a.monotone_shift, &b.monotone_shift, sizeof(double)) != 0 || a.seed != b.seed ||
      a.policy != b.policy)
    return false;
  for (std::size_t i = 0; i < a.players.size(); ++i) {
    const Player& p = a.players[i];
    const Player& q = b.players[i];
    if (p.markets != q.markets || std::memcmp(&p.cost_quad, &q.cost_quad, sizeof(double)) != 0 ||
        !same(p.cost_lin, q.cost_lin) || !same(p.box_upper, q.box_upper))
      return false;
  }
  return true;
}

}  // namespace dvrsfbf
