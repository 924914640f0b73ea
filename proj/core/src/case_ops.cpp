#include "tdcoord/case_ops.hpp"

#include <algorithm>

#include "tdcoord/validate.hpp"

namespace tdcoord {

namespace {

// power_ratio = old_base / new_base: per-unit powers and admittances scale by
// it, impedances by its inverse, linear costs by its inverse, quadratic costs
// by its inverse squared.
void scale_bus(Bus& b, double power_ratio) {
  b.p_load *= power_ratio;
  b.q_load *= power_ratio;
  b.shunt_g *= power_ratio;
  b.shunt_b *= power_ratio;
}

void scale_branch(Branch& br, double power_ratio) {
  br.r /= power_ratio;
  br.x /= power_ratio;
  br.b_charging *= power_ratio;
  if (br.flow_limit) br.flow_limit = *br.flow_limit * power_ratio;
}

void scale_generator(Generator& g, double power_ratio) {
  g.p *= power_ratio;
  g.q *= power_ratio;
  g.p_min *= power_ratio;
  g.p_max *= power_ratio;
  g.q_min *= power_ratio;
  g.q_max *= power_ratio;
  g.cost_c1 /= power_ratio;
  g.cost_c2 /= power_ratio * power_ratio;
}

}  // namespace

ItdCase apply_contingency(const ItdCase& c, int branch_id) {
  const Branch& target = c.branch(branch_id);
  if (!target.in_service)
    throw ValidationError("branch " + std::to_string(branch_id) +
                          " is already out of service");
  ItdCase out = c;
  for (auto& br : out.branches)
    if (br.id == branch_id) br.in_service = false;

  // An outage must not strand a master bus away from its slack nor a slave
  // component away from its boundary bus.
  try {
    validate_case(out);
  } catch (const ValidationError& e) {
    throw IslandingError("contingency on branch " + std::to_string(branch_id) +
                         " islands the system: " + e.what());
  }
  return out;
}

ItdCase rebase(const ItdCase& c, double target_base_mva) {
  if (target_base_mva <= 0.0)
    throw ValidationError("rebase target must be positive");
  ItdCase out = c;
  double ratio = c.base_mva_master / target_base_mva;
  out.base_mva_master = target_base_mva;
  for (auto& b : out.buses) scale_bus(b, ratio);
  for (auto& br : out.branches) scale_branch(br, ratio);
  for (auto& g : out.generators) scale_generator(g, ratio);
  for (auto& m : out.measurements)
    if (m.kind != MeasurementKind::Angle) {
      m.value *= ratio;
      m.sigma *= ratio;
    }
  return out;
}

void rebase_slave_sections(ItdCase& c) {
  auto dso_base = [&](int dso) {
    if (dso < 0 || dso >= static_cast<int>(c.base_mva_slave.size()))
      return c.base_mva_master;
    return c.base_mva_slave[dso];
  };
  auto dso_of_slave_bus = [&](int id) -> int {
    for (int d = 0; d < c.num_dsos(); ++d) {
      auto ids = c.slave_ids_of_dso(d);
      if (std::binary_search(ids.begin(), ids.end(), id)) return d;
    }
    return 0;
  };

  for (auto& b : c.buses) {
    if (b.subsystem == Subsystem::Slave) {
      scale_bus(b, dso_base(dso_of_slave_bus(b.id)) / c.base_mva_master);
    } else if (b.subsystem == Subsystem::Boundary &&
               (b.load_owner == Owner::Dso || b.shunt_owner == Owner::Dso)) {
      double ratio = dso_base(c.dso_of_boundary(b.id)) / c.base_mva_master;
      if (b.load_owner == Owner::Dso) {
        b.p_load *= ratio;
        b.q_load *= ratio;
      }
      if (b.shunt_owner == Owner::Dso) {
        b.shunt_g *= ratio;
        b.shunt_b *= ratio;
      }
    }
  }
  for (auto& br : c.branches) {
    const Bus& f = c.bus(br.from);
    const Bus& t = c.bus(br.to);
    // Fact 2: a branch with a slave endpoint is DSO equipment; the other end
    // is boundary or slave.
    if (f.subsystem == Subsystem::Slave || t.subsystem == Subsystem::Slave) {
      int sid = f.subsystem == Subsystem::Slave ? f.id : t.id;
      scale_branch(br, dso_base(dso_of_slave_bus(sid)) / c.base_mva_master);
    }
  }
  for (auto& g : c.generators) {
    const Bus& b = c.bus(g.bus);
    bool dso_gen = b.subsystem == Subsystem::Slave ||
                   (b.subsystem == Subsystem::Boundary && g.owner == Owner::Dso);
    if (dso_gen) {
      int d = b.subsystem == Subsystem::Slave ? dso_of_slave_bus(g.bus)
                                              : c.dso_of_boundary(g.bus);
      scale_generator(g, dso_base(d) / c.base_mva_master);
    }
  }
}

}  // namespace tdcoord
