#pragma once

#include <string>

#include "nfs/error.hpp"

namespace nfs {

enum class Modality { kRgb, kIr };

inline const char* modality_name(Modality m) {
  return m == Modality::kRgb ? "rgb" : "ir";
}

inline Modality modality_from_string(const std::string& s) {
  if (s == "rgb") return Modality::kRgb;
  if (s == "ir") return Modality::kIr;
  throw ConfigError("unknown modality tag '" + s + "', expected rgb or ir");
}

}  // namespace nfs
