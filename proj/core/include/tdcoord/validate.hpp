#pragma once

#include <string>
#include <vector>

#include "tdcoord/types.hpp"

namespace tdcoord {

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
  std::string joined() const;
};

/// Report-only partition check: every master-slave branch (the cut property
/// requires all power paths to pass through the boundary) and every slave
/// component with zero or multiple DSO attachments is listed.
ValidationReport validate_partition(const ItdCase& c);

/// Full structural validation; throws ValidationError naming the first
/// violated invariant. load_case calls this.
void validate_case(const ItdCase& c);

}  // namespace tdcoord
