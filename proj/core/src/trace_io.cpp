#include <fstream>
#include <locale>
#include <sstream>

#include "resmpc/sim.hpp"

namespace resmpc {

std::string trace_header() {
  return "t,x1,x2,x3,y1,y2,y3,u_cmd,u_applied,attack,detected,omega_hat,q,N_t,stage_cost,cum_cost,solve_ms";
}

void write_trace_csv(const SimTrace& trace, std::ostream& out) {
  out.imbue(std::locale::classic());
  out.precision(17);
  out << trace_header() << '\n';
  for (const TraceRow& r : trace.rows) {
    out << r.t << ',' << r.x(0) << ',' << r.x(1) << ',' << r.x(2) << ',' << r.y(0) << ',' << r.y(1) << ',' << r.y(2)
        << ',' << r.u_cmd << ',' << r.u_applied << ',' << (r.attack ? 1 : 0) << ',' << (r.detected ? 1 : 0) << ','
        << r.omega_hat << ',' << r.q << ',' << r.N_t << ',' << r.stage_cost << ',' << r.cum_cost << ',' << r.solve_ms
        << '\n';
  }
}

void write_trace_csv(const SimTrace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_trace_csv(trace, out);
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<TraceRow> read_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  std::getline(in, line);
  if (line != trace_header()) throw std::runtime_error("unexpected trace header in " + path);
  std::vector<TraceRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    ss.imbue(std::locale::classic());
    std::vector<double> v;
    std::string cell;
    while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    if (v.size() != 17) throw std::runtime_error("malformed trace row in " + path);
    TraceRow r;
    r.t = v[0];
    r.x = Vec{{v[1], v[2], v[3]}};
    r.y = Vec{{v[4], v[5], v[6]}};
    r.u_cmd = v[7];
    r.u_applied = v[8];
    r.attack = v[9] != 0.0;
    r.detected = v[10] != 0.0;
    r.omega_hat = v[11];
    r.q = static_cast<std::size_t>(v[12]);
    r.N_t = static_cast<int>(v[13]);
    r.stage_cost = v[14];
    r.cum_cost = v[15];
    r.solve_ms = v[16];
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_detect_csv(const std::vector<DetectDemoRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.imbue(std::locale::classic());
  out.precision(17);
  out << "t,attack,omega_true,stat,flag,omega_hat,r1,r2,r3\n";
  for (const DetectDemoRow& r : rows) {
    out << r.t << ',' << (r.attack ? 1 : 0) << ',' << r.omega_true << ',' << r.stat << ',' << (r.flag ? 1 : 0) << ','
        << r.omega_hat << ',' << r.residual(0) << ',' << r.residual(1) << ',' << r.residual(2) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace resmpc
