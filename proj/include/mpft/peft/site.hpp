#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <string>
#include <string_view>

namespace mpft {

/// Intra-block insertion position. Declaration order is the canonical
/// ordering used for sorting, tie-breaking and reports.
enum class Position { Q, K, V, Out, MLP1, MLP2 };

inline constexpr std::array<Position, 6> kAllPositions = {
    Position::Q, Position::K, Position::V, Position::Out, Position::MLP1, Position::MLP2};

std::string_view position_name(Position p);
/// Accepts the names produced by position_name ("Q", "K", "V", "Out",
/// "MLP1", "MLP2"). Throws ConfigError otherwise.
Position parse_position(std::string_view name);

/// A (block depth, intra-block position) pair. Depth is 1-based.
struct InsertionSite {
  std::size_t depth = 1;
  Position position = Position::Q;

  auto operator<=>(const InsertionSite&) const = default;
};

std::string site_name(const InsertionSite& site);

}  // namespace mpft
