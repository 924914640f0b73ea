#include "tdcoord/types.hpp"

#include <algorithm>
#include <functional>
#include <set>

namespace tdcoord {

std::string to_string(Subsystem s) {
  switch (s) {
    case Subsystem::Master: return "master";
    case Subsystem::Boundary: return "boundary";
    case Subsystem::Slave: return "slave";
  }
  return "?";
}

std::string to_string(BusKind k) {
  switch (k) {
    case BusKind::Slack: return "slack";
    case BusKind::PV: return "pv";
    case BusKind::PQ: return "pq";
  }
  return "?";
}

int ItdCase::num_dsos() const {
  int n = 0;
  for (const auto& [bus, dso] : dso_assignment) n = std::max(n, dso + 1);
  return std::max(n, boundary_ids.empty() ? 0 : 1);
}

const Bus& ItdCase::bus(int id) const {
  for (const auto& b : buses)
    if (b.id == id) return b;
  throw ValidationError("unknown bus id " + std::to_string(id));
}

Bus& ItdCase::bus(int id) {
  for (auto& b : buses)
    if (b.id == id) return b;
  throw ValidationError("unknown bus id " + std::to_string(id));
}

const Branch& ItdCase::branch(int id) const {
  for (const auto& br : branches)
    if (br.id == id) return br;
  throw ValidationError("unknown branch id " + std::to_string(id));
}

bool ItdCase::has_bus(int id) const {
  return std::any_of(buses.begin(), buses.end(),
                     [id](const Bus& b) { return b.id == id; });
}

std::vector<int> ItdCase::ids_of(Subsystem s) const {
  std::vector<int> out;
  for (const auto& b : buses)
    if (b.subsystem == s) out.push_back(b.id);
  std::sort(out.begin(), out.end());
  return out;
}

int ItdCase::dso_of_boundary(int bus_id) const {
  auto it = dso_assignment.find(bus_id);
  return it == dso_assignment.end() ? 0 : it->second;
}

std::vector<int> ItdCase::boundary_ids_of_dso(int dso) const {
  std::vector<int> out;
  for (int id : boundary_ids)
    if (dso_of_boundary(id) == dso) out.push_back(id);
  return out;
}

std::vector<ItdCase::SlaveComponent> ItdCase::slave_components() const {
  // Union-find over slave buses through in-service slave-slave branches.
  std::map<int, int> parent;
  for (const auto& b : buses)
    if (b.subsystem == Subsystem::Slave) parent[b.id] = b.id;
  std::function<int(int)> find = [&](int v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  for (const auto& br : branches) {
    if (!br.in_service) continue;
    if (parent.count(br.from) && parent.count(br.to))
      parent[find(br.from)] = find(br.to);
  }
  std::map<int, SlaveComponent> comps;
  for (const auto& [id, _] : parent) comps[find(id)].slave_ids.push_back(id);
  std::set<int> boundary_set(boundary_ids.begin(), boundary_ids.end());
  for (const auto& br : branches) {
    if (!br.in_service) continue;
    int slave_end = -1, other = -1;
    if (parent.count(br.from)) slave_end = br.from, other = br.to;
    else if (parent.count(br.to)) slave_end = br.to, other = br.from;
    if (slave_end >= 0 && boundary_set.count(other)) {
      auto& c = comps[find(slave_end)];
      if (std::find(c.attached_boundary_ids.begin(),
                    c.attached_boundary_ids.end(),
                    other) == c.attached_boundary_ids.end())
        c.attached_boundary_ids.push_back(other);
    }
  }
  std::vector<SlaveComponent> out;
  for (auto& [root, c] : comps) {
    std::sort(c.slave_ids.begin(), c.slave_ids.end());
    std::sort(c.attached_boundary_ids.begin(), c.attached_boundary_ids.end());
    out.push_back(std::move(c));
  }
  std::sort(out.begin(), out.end(),
            [](const SlaveComponent& a, const SlaveComponent& b) {
              return a.slave_ids.front() < b.slave_ids.front();
            });
  return out;
}

std::vector<int> ItdCase::slave_ids_of_dso(int dso) const {
  std::set<int> mine(boundary_ids_of_dso(dso).begin(),
                     boundary_ids_of_dso(dso).end());
  std::vector<int> out;
  for (const auto& comp : slave_components()) {
    bool attached = std::any_of(
        comp.attached_boundary_ids.begin(), comp.attached_boundary_ids.end(),
        [&](int b) { return mine.count(b) > 0; });
    if (attached)
      out.insert(out.end(), comp.slave_ids.begin(), comp.slave_ids.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

double ItdCase::load_direction_of(int bus_id) const {
  auto it = load_direction.find(bus_id);
  return it == load_direction.end() ? 1.0 : it->second;
}

BusOrder::BusOrder(const ItdCase& c)
    : master_(c.ids_of(Subsystem::Master)),
      boundary_(c.ids_of(Subsystem::Boundary)),
      slave_(c.ids_of(Subsystem::Slave)) {
  int g = 0;
  auto add = [&](const std::vector<int>& ids, Subsystem s) {
    for (size_t i = 0; i < ids.size(); ++i) {
      local_[ids[i]] = {s, static_cast<int>(i)};
      global_[ids[i]] = g++;
    }
  };
  add(master_, Subsystem::Master);
  add(boundary_, Subsystem::Boundary);
  add(slave_, Subsystem::Slave);
}

int BusOrder::index(int bus_id) const {
  auto it = global_.find(bus_id);
  if (it == global_.end())
    throw ValidationError("bus id " + std::to_string(bus_id) + " not in case");
  return it->second;
}

int BusOrder::local_index(int bus_id) const {
  return local_.at(bus_id).second;
}

Subsystem BusOrder::subsystem(int bus_id) const {
  return local_.at(bus_id).first;
}

}  // namespace tdcoord
