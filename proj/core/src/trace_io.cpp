#include "tdcoord/trace_io.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>

namespace tdcoord {

namespace {
std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

void write_trace_csv(const HgdTrace& trace, std::ostream& os) {
  os << "k,residual,status,ms\n";
  for (const auto& it : trace.iterations) {
    std::string status =
        it.dsp_status == "ok" && it.tsp_status == "ok"
            ? (it.max_slack > 0 ? "ok(slack=" + num(it.max_slack) + ")" : "ok")
            : it.dsp_status + "/" + it.tsp_status;
    os << it.k << "," << num(it.residual) << "," << status << ","
       << num(it.ms) << "\n";
  }
}

void write_trace_text(const HgdTrace& trace, std::ostream& os) {
  os << "iterations: " << trace.count() << "\n";
  os << "converged: " << (trace.converged ? "yes" : "no") << "\n";
  if (trace.converged)
    os << "global_kkt_residual: " << num(trace.global_kkt_residual) << "\n";
  for (const auto& it : trace.iterations) {
    os << "k=" << it.k << " residual=" << num(it.residual) << "\n";
    os << "  xi:";
    for (Eigen::Index i = 0; i < it.xi.size(); ++i) os << " " << num(it.xi(i));
    os << "\n  y:";
    for (Eigen::Index i = 0; i < it.y.size(); ++i) os << " " << num(it.y(i));
    os << "\n";
    if (it.max_slack > 0) os << "  slack: " << num(it.max_slack) << "\n";
  }
}

void write_trace_csv_file(const HgdTrace& trace, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path);
  write_trace_csv(trace, f);
}

void write_trace_text_file(const HgdTrace& trace, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path);
  write_trace_text(trace, f);
}

}  // namespace tdcoord
