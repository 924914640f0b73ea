#pragma once

#include "tdcoord/types.hpp"

namespace tdcoord {

/// Copy of the case with one branch taken out of service. Revalidates the
/// partition; an outage that islands part of the system throws
/// IslandingError.
ItdCase apply_contingency(const ItdCase& c, int branch_id);

/// Rescale every per-unit quantity onto a new MVA base. Round trips are the
/// identity to 1e-12.
ItdCase rebase(const ItdCase& c, double target_base_mva);

/// Bring DSO-side sections (slave buses/branches/generators and DSO-owned
/// boundary attachments) from their own base onto the master base, in place.
/// Called once at load time.
void rebase_slave_sections(ItdCase& c);

}  // namespace tdcoord
