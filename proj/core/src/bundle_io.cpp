#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "resmpc/rmpc.hpp"

namespace resmpc {
namespace {

using json = nlohmann::ordered_json;

json to_json(const Vec& v) {
  json out = json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

json to_json(const Mat& M) {
  json out = json::array();
  for (Index i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    out.push_back(std::move(row));
  }
  return out;
}

json to_json(const Box& b) { return json{{"lower", to_json(b.lower())}, {"upper", to_json(b.upper())}}; }

json to_json(const HPolytope& p) {
  return json{{"dim", p.dim()}, {"empty", p.is_empty()}, {"H", to_json(p.H())}, {"g", to_json(p.g())}};
}

json to_json(const std::vector<Mat>& mats) {
  json out = json::array();
  for (const Mat& M : mats) out.push_back(to_json(M));
  return out;
}

Vec vec_from(const json& j) {
  if (!j.is_array()) throw BundleError("bundle: expected a vector");
  Vec v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Index>(i)) = j[i].get<double>();
  return v;
}

Mat mat_from(const json& j, Index cols_if_empty = 0) {
  if (!j.is_array()) throw BundleError("bundle: expected a matrix");
  const Index rows = static_cast<Index>(j.size());
  const Index cols = rows == 0 ? cols_if_empty : static_cast<Index>(j[0].size());
  Mat M(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const json& row = j[static_cast<std::size_t>(i)];
    if (static_cast<Index>(row.size()) != cols) throw BundleError("bundle: ragged matrix");
    for (Index c = 0; c < cols; ++c) M(i, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return M;
}

Box box_from(const json& j) { return Box(vec_from(j.at("lower")), vec_from(j.at("upper"))); }

HPolytope poly_from(const json& j) {
  const Index dim = j.at("dim").get<Index>();
  if (j.at("empty").get<bool>()) return HPolytope::empty_set(dim);
  return HPolytope(mat_from(j.at("H"), dim), vec_from(j.at("g")));
}

std::vector<Mat> mats_from(const json& j) {
  std::vector<Mat> out;
  for (const auto& m : j) out.push_back(mat_from(m));
  return out;
}

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::string bundle_to_json(const ConstraintBundle& b) {
  json root;
  root["version"] = b.version;
  root["fingerprint"] = hex64(b.fingerprint);
  root["model"] = json{{"A_tau", to_json(b.model.A_tau)},     {"B_tau", to_json(b.model.B_tau)},
                       {"tau", b.model.tau},                  {"chi_bar", to_json(b.model.chi_bar)},
                       {"eps_bar", to_json(b.model.eps_bar)}, {"eta", to_json(b.model.eta)},
                       {"d_bar", to_json(b.model.d_bar)},     {"domain", to_json(b.model.domain)},
                       {"input_set", to_json(b.model.input_set)}};
  root["grid"] = json{{"omega_levels", b.grid.omega_levels}, {"ynorm_levels", b.grid.ynorm_levels}};
  root["cost"] = json{{"Q", to_json(b.cost.Q)}, {"R", to_json(b.cost.R)}, {"Q_N", to_json(b.cost.Q_N)}, {"N", b.cost.N}};
  root["K_nom"] = to_json(b.K_nom);
  root["pi_a"] = to_json(b.pi_a);
  json entries = json::array();
  for (const auto& e : b.entries) {
    json je;
    je["q"] = e.q;
    je["omega_level"] = e.omega_level;
    je["ynorm_level"] = e.ynorm_level;
    je["feasible"] = e.feasible;
    je["reason"] = e.reason;
    je["delta"] = to_json(e.delta);
    je["pi_b"] = to_json(e.pi_b);
    if (e.feasible) {
      je["K"] = to_json(e.K);
      je["lyapunov_P"] = to_json(e.lyapunov_P);
      je["terminal_set"] = to_json(e.terminal_set);
      json boxes = json::array();
      for (const auto& box : e.tube.boxes) boxes.push_back(to_json(box));
      je["tube"] = json{{"w", to_json(e.tube.w)}, {"usable_horizon", e.tube.usable_horizon}, {"boxes", boxes}};
    }
    entries.push_back(std::move(je));
  }
  root["entries"] = std::move(entries);
  return root.dump(1);
}

ConstraintBundle bundle_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw BundleError(std::string("bundle: parse error: ") + e.what());
  }
  ConstraintBundle b;
  try {
    b.version = root.at("version").get<std::string>();
    if (b.version != kBundleVersion) throw BundleError("bundle: unsupported version " + b.version);
    const std::string fp = root.at("fingerprint").get<std::string>();
    b.fingerprint = std::stoull(fp, nullptr, 16);
    const json& m = root.at("model");
    b.model.A_tau = mat_from(m.at("A_tau"));
    b.model.B_tau = mat_from(m.at("B_tau"));
    b.model.tau = m.at("tau").get<double>();
    b.model.chi_bar = mat_from(m.at("chi_bar"));
    b.model.eps_bar = vec_from(m.at("eps_bar"));
    b.model.eta = vec_from(m.at("eta"));
    b.model.d_bar = vec_from(m.at("d_bar"));
    b.model.domain = poly_from(m.at("domain"));
    b.model.input_set = poly_from(m.at("input_set"));
    b.grid.omega_levels = root.at("grid").at("omega_levels").get<std::vector<double>>();
    b.grid.ynorm_levels = root.at("grid").at("ynorm_levels").get<std::vector<double>>();
    const json& c = root.at("cost");
    b.cost.Q = mat_from(c.at("Q"));
    b.cost.R = mat_from(c.at("R"));
    b.cost.Q_N = mat_from(c.at("Q_N"));
    b.cost.N = c.at("N").get<int>();
    b.K_nom = mat_from(root.at("K_nom"));
    b.pi_a = mats_from(root.at("pi_a"));
    for (const auto& je : root.at("entries")) {
      GridControllerData e;
      e.q = je.at("q").get<std::size_t>();
      e.omega_level = je.at("omega_level").get<double>();
      e.ynorm_level = je.at("ynorm_level").get<double>();
      e.feasible = je.at("feasible").get<bool>();
      e.reason = je.at("reason").get<std::string>();
      e.delta = vec_from(je.at("delta"));
      e.pi_b = mats_from(je.at("pi_b"));
      if (e.feasible) {
        e.K = mat_from(je.at("K"));
        e.lyapunov_P = mat_from(je.at("lyapunov_P"));
        e.terminal_set = poly_from(je.at("terminal_set"));
        const json& t = je.at("tube");
        e.tube.w = box_from(t.at("w"));
        e.tube.usable_horizon = t.at("usable_horizon").get<int>();
        for (const auto& box : t.at("boxes")) e.tube.boxes.push_back(box_from(box));
      } else {
        e.terminal_set = HPolytope::empty_set(b.model.A_tau.rows());
      }
      b.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw BundleError(std::string("bundle: malformed field: ") + e.what());
  }
  if (b.entries.size() != b.grid.size()) throw BundleError("bundle: entry count does not match grid");
  for (std::size_t i = 0; i < b.entries.size(); ++i) {
    if (b.entries[i].q != i + 1) throw BundleError("bundle: entries out of order");
  }
  if (model_fingerprint(b.model) != b.fingerprint) {
    throw BundleError("bundle: fingerprint mismatch (model block does not match stored hash)");
  }
  return b;
}

void save_bundle(const ConstraintBundle& bundle, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw BundleError("cannot open " + path + " for writing");
  out << bundle_to_json(bundle) << '\n';
  if (!out) throw BundleError("write failed: " + path);
}

ConstraintBundle load_bundle(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BundleError("cannot open bundle " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return bundle_from_json(ss.str());
}

}  // namespace resmpc
