#pragma once

#include "dvrsfbf/game.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <string_view>

namespace dvrsfbf {

/// Instance file, format "dvrsfbf-instance" version 1:
///
///   {
///     "format": "dvrsfbf-instance", "version": 1,
///     "generator": {"players": 20, "markets": 7, "seed": 0, "policy": "shipped"},
///     "slope_variance": 0.1, "monotone_shift": 0.0,
///     "capacity": [...], "demand_intercept": [...], "demand_slope_mean": [...],
///     "players": [{"markets": [0, 1], "cost_quad": 2.5,
///                  "cost_lin": [...], "box_upper": [...]}, ...]
///   }
///
/// When "players" is absent the instance is regenerated from "generator"
/// and then patched by the optional "overrides" object, whose keys are
/// any of the top-level parameter arrays/scalars above plus per-player
/// "cost_quad" (scalar for all players or one value each).
nlohmann::json instance_to_json(const GameInstance& game);
GameInstance instance_from_json(const nlohmann::json& j);

GameInstance load_instance(const std::filesystem::path& path);
void save_instance(const std::filesystem::path& path, const GameInstance& game);

std::uint64_t fnv1a64(std::string_view bytes);

/// True when every field (including provenance) is bit-identical.
bool identical(const GameInstance& a, const GameInstance& b);

}  // namespace dvrsfbf
