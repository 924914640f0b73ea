#include "tdcoord/case_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tdcoord/case_ops.hpp"
#include "tdcoord/validate.hpp"

namespace tdcoord {

using nlohmann::json;

namespace {

constexpr double kDegToRad = M_PI / 180.0;

Subsystem parse_subsystem(const std::string& s) {
  if (s == "master") return Subsystem::Master;
  if (s == "boundary") return Subsystem::Boundary;
  if (s == "slave") return Subsystem::Slave;
  throw ParseError("unknown subsystem tag '" + s + "'");
}

BusKind parse_kind(const std::string& s) {
  if (s == "slack") return BusKind::Slack;
  if (s == "pv") return BusKind::PV;
  if (s == "pq") return BusKind::PQ;
  throw ParseError("unknown bus kind '" + s + "'");
}

Owner parse_owner(const std::string& s) {
  if (s == "tso") return Owner::Tso;
  if (s == "dso") return Owner::Dso;
  throw ParseError("unknown owner tag '" + s + "'");
}

MeasurementKind parse_mkind(const std::string& s) {
  if (s == "angle") return MeasurementKind::Angle;
  if (s == "flow") return MeasurementKind::Flow;
  if (s == "injection") return MeasurementKind::Injection;
  throw ParseError("unknown measurement kind '" + s + "'");
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  auto it = j.find(key);
  return it == j.end() ? fallback : it->get<T>();
}

}  // namespace

ItdCase parse_case(const std::string& text, const std::string& name) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed case file: ") + e.what());
  }

  ItdCase c;
  c.name = name;
  try {
    if (j.contains("name")) c.name = j["name"].get<std::string>();

    if (j.contains("base_mva")) {
      const auto& b = j["base_mva"];
      if (b.is_number()) {
        c.base_mva_master = b.get<double>();
      } else {
        c.base_mva_master = b.at("master").get<double>();
        if (b.contains("slaves"))
          c.base_mva_slave = b["slaves"].get<std::vector<double>>();
      }
    }
    if (c.base_mva_master <= 0.0) throw ParseError("base_mva must be > 0");

    for (const auto& jb : j.value("buses", json::array())) {
      Bus b;
      b.id = jb.at("id").get<int>();
      b.subsystem = parse_subsystem(get_or<std::string>(jb, "subsystem", "master"));
      b.kind = parse_kind(get_or<std::string>(jb, "kind", "pq"));
      b.v_mag = get_or(jb, "v_mag", 1.0);
      b.v_ang = get_or(jb, "v_ang_deg", 0.0) * kDegToRad;
      b.p_load = get_or(jb, "p_load", 0.0);
      b.q_load = get_or(jb, "q_load", 0.0);
      b.shunt_g = get_or(jb, "shunt_g", 0.0);
      b.shunt_b = get_or(jb, "shunt_b", 0.0);
      b.load_owner = parse_owner(get_or<std::string>(jb, "load_owner", "tso"));
      b.shunt_owner = parse_owner(get_or<std::string>(jb, "shunt_owner", "tso"));
      c.buses.push_back(b);
    }

    int next_branch_id = 0;
    for (const auto& jb : j.value("branches", json::array())) {
      Branch br;
      br.id = get_or(jb, "id", next_branch_id);
      next_branch_id = br.id + 1;
      br.from = jb.at("from").get<int>();
      br.to = jb.at("to").get<int>();
      br.r = get_or(jb, "r", 0.0);
      br.x = jb.at("x").get<double>();
      br.b_charging = get_or(jb, "b", 0.0);
      br.tap = get_or(jb, "tap", 1.0);
      br.in_service = get_or(jb, "in_service", true);
      if (jb.contains("flow_limit"))
        br.flow_limit = jb["flow_limit"].get<double>();
      c.branches.push_back(br);
    }

    for (const auto& jg : j.value("generators", json::array())) {
      Generator g;
      g.bus = jg.at("bus").get<int>();
      g.p = get_or(jg, "p", 0.0);
      g.q = get_or(jg, "q", 0.0);
      g.p_min = get_or(jg, "p_min", 0.0);
      g.p_max = get_or(jg, "p_max", g.p);
      g.q_min = get_or(jg, "q_min", -9999.0);
      g.q_max = get_or(jg, "q_max", 9999.0);
      g.cost_c2 = get_or(jg, "cost_c2", 0.0);
      g.cost_c1 = get_or(jg, "cost_c1", 0.0);
      g.cost_c0 = get_or(jg, "cost_c0", 0.0);
      g.owner = parse_owner(get_or<std::string>(jg, "owner", "tso"));
      c.generators.push_back(g);
    }

    c.boundary_ids = j.value("boundary", std::vector<int>{});
    std::sort(c.boundary_ids.begin(), c.boundary_ids.end());

    if (j.contains("dso_assignment"))
      for (auto it = j["dso_assignment"].begin();
           it != j["dso_assignment"].end(); ++it)
        c.dso_assignment[std::stoi(it.key())] = it.value().get<int>();

    c.contingencies = j.value("contingencies", std::vector<int>{});

    for (const auto& jm : j.value("measurements", json::array())) {
      Measurement m;
      m.kind = parse_mkind(jm.at("kind").get<std::string>());
      m.target = jm.at("target").get<int>();
      m.value = jm.at("value").get<double>();
      m.sigma = get_or(jm, "sigma", 1.0);
      if (m.sigma <= 0.0) throw ParseError("measurement sigma must be > 0");
      c.measurements.push_back(m);
    }

    if (j.contains("load_direction"))
      for (auto it = j["load_direction"].begin();
           it != j["load_direction"].end(); ++it)
        c.load_direction[std::stoi(it.key())] = it.value().get<double>();

    c.v_min = get_or(j, "v_min", 0.95);
    c.v_max = get_or(j, "v_max", 1.05);
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed case file: ") + e.what());
  }

  // Sanity of boundary tags before any graph work.
  for (int id : c.boundary_ids) {
    if (!c.has_bus(id))
      throw ParseError("boundary list references unknown bus " +
                       std::to_string(id));
    if (c.bus(id).subsystem != Subsystem::Boundary)
      throw ParseError("bus " + std::to_string(id) +
                       " is in the boundary list but not tagged boundary");
  }

  // DSO data arrives on its own MVA base; bring everything onto the master
  // base so every exchanged quantity lives in one unit system.
  if (!c.base_mva_slave.empty()) rebase_slave_sections(c);

  validate_case(c);
  return c;
}

ItdCase load_case(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open case file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  std::string name = path;
  auto slash = name.find_last_of('/');
  if (slash != std::string::npos) name = name.substr(slash + 1);
  auto dot = name.find_last_of('.');
  if (dot != std::string::npos) name = name.substr(0, dot);
  return parse_case(ss.str(), name);
}

std::string serialize_case(const ItdCase& c) {
  json j;
  char buf[32];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  j["name"] = c.name;
  j["base_mva"] = num(c.base_mva_master);
  json buses = json::array();
  for (const auto& b : c.buses) {
    buses.push_back({{"id", b.id},
                     {"subsystem", to_string(b.subsystem)},
                     {"kind", to_string(b.kind)},
                     {"v_mag", num(b.v_mag)},
                     {"v_ang", num(b.v_ang)},
                     {"p_load", num(b.p_load)},
                     {"q_load", num(b.q_load)},
                     {"shunt_g", num(b.shunt_g)},
                     {"shunt_b", num(b.shunt_b)},
                     {"load_owner", b.load_owner == Owner::Dso ? "dso" : "tso"},
                     {"shunt_owner", b.shunt_owner == Owner::Dso ? "dso" : "tso"}});
  }
  j["buses"] = buses;
  json branches = json::array();
  for (const auto& br : c.branches) {
    branches.push_back({{"id", br.id},
                        {"from", br.from},
                        {"to", br.to},
                        {"r", num(br.r)},
                        {"x", num(br.x)},
                        {"b", num(br.b_charging)},
                        {"tap", num(br.tap)},
                        {"in_service", br.in_service},
                        {"flow_limit", br.flow_limit ? num(*br.flow_limit) : "none"}});
  }
  j["branches"] = branches;
  json gens = json::array();
  for (const auto& g : c.generators) {
    gens.push_back({{"bus", g.bus},
                    {"p", num(g.p)},
                    {"q", num(g.q)},
                    {"p_min", num(g.p_min)},
                    {"p_max", num(g.p_max)},
                    {"q_min", num(g.q_min)},
                    {"q_max", num(g.q_max)},
                    {"cost_c2", num(g.cost_c2)},
                    {"cost_c1", num(g.cost_c1)},
                    {"cost_c0", num(g.cost_c0)},
                    {"owner", g.owner == Owner::Dso ? "dso" : "tso"}});
  }
  j["generators"] = gens;
  j["boundary"] = c.boundary_ids;
  json dso = json::object();
  for (const auto& [bus, d] : c.dso_assignment) dso[std::to_string(bus)] = d;
  j["dso_assignment"] = dso;
  j["contingencies"] = c.contingencies;
  return j.dump();
}

std::uint64_t case_fingerprint(const ItdCase& c) {
  std::string s = serialize_case(c);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace tdcoord
