#pragma once

#include <string>

#include "tdcoord/types.hpp"

namespace tdcoord {

/// Parse, validate, and normalize a case file (see docs/case-format.md).
/// Angles are degrees in files and radians in memory; DSO-side per-unit data
/// is rebased onto the master MVA base here.
ItdCase load_case(const std::string& path);

/// Same, from an in-memory document. Used by tests.
ItdCase parse_case(const std::string& json_text, const std::string& name = "");

/// Canonical serialization of the in-memory case (master base, radians).
/// Deterministic; feeds the session fingerprint of the distributed runtime.
std::string serialize_case(const ItdCase& c);

/// FNV-1a 64 over the canonical serialization.
std::uint64_t case_fingerprint(const ItdCase& c);

}  // namespace tdcoord
