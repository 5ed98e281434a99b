#include "mpft/peft/site.hpp"

#include "mpft/errors.hpp"

namespace mpft {

std::string_view position_name(Position p) {
  switch (p) {
    case Position::Q: return "Q";
    case Position::K: return "K";
    case Position::V: return "V";
    case Position::Out: return "Out";
    case Position::MLP1: return "MLP1";
    case Position::MLP2: return "MLP2";
  }
  return "?";
}

Position parse_position(std::string_view name) {
  for (Position p : kAllPositions) {
    if (position_name(p) == name) return p;
  }
  throw ConfigError("unknown insertion position '" + std::string(name) + "'");
}

std::string site_name(const InsertionSite& site) {
  return std::to_string(site.depth) + ":" + std::string(position_name(site.position));
}

}  // namespace mpft
