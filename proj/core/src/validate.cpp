#include "tdcoord/validate.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

namespace tdcoord {

std::string ValidationReport::joined() const {
  std::ostringstream os;
  for (size_t i = 0; i < violations.size(); ++i) {
    if (i) os << "; ";
    os << violations[i];
  }
  return os.str();
}

namespace {

bool is_master_side(const ItdCase& c, int id) {
  return c.bus(id).subsystem == Subsystem::Master;
}
bool is_slave_side(const ItdCase& c, int id) {
  return c.bus(id).subsystem == Subsystem::Slave;
}

// Connected components of the master+boundary graph, used for the
// one-slack-per-island invariant.
std::vector<std::set<int>> master_islands(const ItdCase& c) {
  std::map<int, int> parent;
  for (const auto& b : c.buses)
    if (b.subsystem != Subsystem::Slave) parent[b.id] = b.id;
  auto find = [&](int v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  for (const auto& br : c.branches) {
    if (!br.in_service) continue;
    if (parent.count(br.from) && parent.count(br.to))
      parent[find(br.from)] = find(br.to);
  }
  std::map<int, std::set<int>> comps;
  for (const auto& [id, _] : parent) comps[find(id)].insert(id);
  std::vector<std::set<int>> out;
  for (auto& [root, s] : comps) out.push_back(std::move(s));
  return out;
}

}  // namespace

ValidationReport validate_partition(const ItdCase& c) {
  ValidationReport rep;
  for (const auto& br : c.branches) {
    if (!br.in_service) continue;
    bool ms = (is_master_side(c, br.from) && is_slave_side(c, br.to)) ||
              (is_slave_side(c, br.from) && is_master_side(c, br.to));
    if (ms) {
      std::ostringstream os;
      os << "branch " << br.id << " (" << br.from << "-" << br.to
         << ") connects master and slave directly; every master-slave path "
            "must pass through the boundary subsystem";
      rep.violations.push_back(os.str());
    }
  }
  for (const auto& comp : c.slave_components()) {
    std::set<int> dsos;
    for (int b : comp.attached_boundary_ids) dsos.insert(c.dso_of_boundary(b));
    if (comp.attached_boundary_ids.empty()) {
      std::ostringstream os;
      os << "slave component containing bus " << comp.slave_ids.front()
         << " is not attached to any boundary bus";
      rep.violations.push_back(os.str());
    } else if (dsos.size() > 1) {
      std::ostringstream os;
      os << "slave component containing bus " << comp.slave_ids.front()
         << " attaches to " << dsos.size() << " different DSOs";
      rep.violations.push_back(os.str());
    }
  }
  return rep;
}

void validate_case(const ItdCase& c) {
  if (c.buses.empty()) throw ValidationError("no slack bus: empty bus list");
  std::set<int> seen;
  for (const auto& b : c.buses) {
    if (!seen.insert(b.id).second)
      throw ValidationError("duplicate bus id " + std::to_string(b.id));
    if ((b.kind == BusKind::Slack || b.kind == BusKind::PV) && b.v_mag <= 0.0)
      throw ValidationError("bus " + std::to_string(b.id) +
                            ": v_mag must be positive on slack/PV buses");
    if (b.subsystem == Subsystem::Boundary && b.kind != BusKind::PQ)
      throw ValidationError("boundary bus " + std::to_string(b.id) +
                            " must be PQ; its voltage is coordinated, not "
                            "locally controlled");
  }

  for (const auto& br : c.branches) {
    if (br.x == 0.0 && br.r == 0.0)
      throw ValidationError("branch " + std::to_string(br.id) +
                            ": zero impedance");
    if (br.x == 0.0)
      throw ValidationError("branch " + std::to_string(br.id) +
                            ": zero reactance");
    if (br.from == br.to)
      throw ValidationError("branch " + std::to_string(br.id) +
                            ": from == to");
    if (!c.has_bus(br.from) || !c.has_bus(br.to))
      throw ValidationError("branch " + std::to_string(br.id) +
                            ": endpoint bus not found");
  }
  std::set<int> br_ids;
  for (const auto& br : c.branches)
    if (!br_ids.insert(br.id).second)
      throw ValidationError("duplicate branch id " + std::to_string(br.id));

  for (const auto& g : c.generators) {
    if (!c.has_bus(g.bus))
      throw ValidationError("generator at unknown bus " +
                            std::to_string(g.bus));
    if (g.p_min > g.p_max || g.q_min > g.q_max)
      throw ValidationError("generator at bus " + std::to_string(g.bus) +
                            ": inverted limits");
    if (g.cost_c2 < 0.0)
      throw ValidationError("generator at bus " + std::to_string(g.bus) +
                            ": negative quadratic cost breaks convexity");
  }

  // Boundary bus list must match the tagged buses exactly.
  auto tagged = c.ids_of(Subsystem::Boundary);
  if (tagged != c.boundary_ids)
    throw ValidationError(
        "boundary list does not match buses tagged as boundary");

  for (const auto& [bus_id, dso] : c.dso_assignment) {
    if (std::find(c.boundary_ids.begin(), c.boundary_ids.end(), bus_id) ==
        c.boundary_ids.end())
      throw ValidationError("dso_assignment references non-boundary bus " +
                            std::to_string(bus_id));
    if (dso < 0) throw ValidationError("negative DSO index");
  }

  for (int cid : c.contingencies) c.branch(cid);

  // Exactly one slack per master island.
  for (const auto& island : master_islands(c)) {
    int slacks = 0;
    bool has_master = false;
    for (int id : island) {
      if (c.bus(id).kind == BusKind::Slack) ++slacks;
      if (c.bus(id).subsystem == Subsystem::Master) has_master = true;
    }
    if (!has_master) continue;
    if (slacks == 0)
      throw ValidationError("no slack bus in master island containing bus " +
                            std::to_string(*island.begin()));
    if (slacks > 1)
      throw ValidationError(
          "multiple slack buses in master island containing bus " +
          std::to_string(*island.begin()));
  }
  if (std::none_of(c.buses.begin(), c.buses.end(), [](const Bus& b) {
        return b.kind == BusKind::Slack;
      }))
    throw ValidationError("no slack bus");

  auto rep = validate_partition(c);
  if (!rep.ok()) throw ValidationError(rep.joined());
}

}  // namespace tdcoord
