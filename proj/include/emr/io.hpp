// Serialization layer: JSON specs for maps and potentials, deterministic CSV
// emission, JSON summaries, and the append-only evaluation cache.
#pragma once

#include <cstdio>
#include <fstream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "emr/errors.hpp"
#include "emr/interval_maps.hpp"
#include "emr/potentials.hpp"
#include "emr/pressure.hpp"

namespace emr {
namespace io {

inline constexpr const char* kToolName = "emrspec";
inline constexpr const char* kToolVersion = "0.1.0";

inline std::string version_line() {
  return std::string(kToolName) + " " + kToolVersion;
}

using nlohmann::json;

// ---- strict JSON helpers -------------------------------------------------------

inline void reject_unknown_keys(const json& obj, const char* where,
                                std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok)
      throw UsageError(std::string("unknown field \"") + it.key() + "\" in " +
                       where);
  }
}

inline double require_number(const json& obj, const char* key,
                             const char* where) {
  if (!obj.contains(key))
    throw UsageError(std::string("missing field \"") + key + "\" in " + where);
  const json& v = obj.at(key);
  if (!v.is_number())
    throw UsageError(std::string("field \"") + key + "\" in " + where +
                     " must be a number");
  return v.get<double>();
}

inline std::string require_string(const json& obj, const char* key,
                                  const char* where) {
  if (!obj.contains(key))
    throw UsageError(std::string("missing field \"") + key + "\" in " + where);
  const json& v = obj.at(key);
  if (!v.is_string())
    throw UsageError(std::string("field \"") + key + "\" in " + where +
                     " must be a string");
  return v.get<std::string>();
}

// ---- map / potential specs -----------------------------------------------------

// {"kind":"gauss"} | {"kind":"linear","lengths":{"formula":"...","cutoff":N}}
//                  | {"kind":"linear","lengths":{"values":[...]}}
inline BranchMap map_from_json(const json& spec) {
  if (!spec.is_object()) throw UsageError("map spec must be a JSON object");
  std::string kind = require_string(spec, "kind", "map spec");
  if (kind == "gauss") {
    reject_unknown_keys(spec, "map spec", {"kind"});
    return BranchMap::gauss();
  }
  if (kind == "linear") {
    reject_unknown_keys(spec, "map spec", {"kind", "lengths"});
    if (!spec.contains("lengths") || !spec.at("lengths").is_object())
      throw UsageError("linear map spec needs a \"lengths\" object");
    const json& len = spec.at("lengths");
    reject_unknown_keys(len, "map lengths", {"formula", "cutoff", "values"});
    if (len.contains("values")) {
      if (len.contains("formula") || len.contains("cutoff"))
        throw UsageError(
            "map lengths take either \"values\" or \"formula\", not both");
      if (!len.at("values").is_array())
        throw UsageError("field \"values\" in map lengths must be an array");
      std::vector<double> vals;
      for (const json& v : len.at("values")) {
        if (!v.is_number())
          throw UsageError("branch lengths must be numbers");
        vals.push_back(v.get<double>());
      }
      return BranchMap::linear_lengths(vals);
    }
    std::string formula = require_string(len, "formula", "map lengths");
    std::uint64_t cutoff = 4096;
    if (len.contains("cutoff")) {
      double c = require_number(len, "cutoff", "map lengths");
      if (!(c >= 1) || c != std::floor(c))
        throw UsageError("field \"cutoff\" in map lengths must be a positive "
                         "integer");
      cutoff = std::uint64_t(c);
    }
    return BranchMap::linear_formula(formula, cutoff);
  }
  throw UsageError("unknown map kind: " + kind);
}

// {"kind":"geometry"} | {"kind":"digit","formula":"..."}
//                     | {"kind":"digit_power","gamma":g}
inline Potential potential_from_json(const json& spec) {
  if (!spec.is_object())
    throw UsageError("potential spec must be a JSON object");
  std::string kind = require_string(spec, "kind", "potential spec");
  if (kind == "geometry") {
    reject_unknown_keys(spec, "potential spec", {"kind"});
    return Potential::geometry();
  }
  if (kind == "digit") {
    reject_unknown_keys(spec, "potential spec", {"kind", "formula"});
    return Potential::digit(require_string(spec, "formula", "potential spec"));
  }
  if (kind == "digit_power") {
    reject_unknown_keys(spec, "potential spec", {"kind", "gamma"});
    return Potential::digit_power(
        require_number(spec, "gamma", "potential spec"));
  }
  throw UsageError("unknown potential kind: " + kind);
}

// Command-line shorthand: "gauss", "linear:<formula>", "linear-values:a,b,..",
// or inline JSON starting with '{'.
inline json map_spec_from_flag(const std::string& s) {
  if (!s.empty() && s.front() == '{') return json::parse(s);
  if (s == "gauss") return json{{"kind", "gauss"}};
  if (s.rfind("linear-values:", 0) == 0) {
    json vals = json::array();
    std::stringstream ss(s.substr(14));
    std::string tok;
    while (std::getline(ss, tok, ','))
      vals.push_back(std::stod(tok));
    return json{{"kind", "linear"}, {"lengths", {{"values", vals}}}};
  }
  if (s.rfind("linear:", 0) == 0)
    return json{{"kind", "linear"},
                {"lengths", {{"formula", s.substr(7)}}}};
  throw UsageError("unrecognized map shorthand: " + s +
                   " (expected gauss, linear:<formula>, linear-values:..., or "
                   "inline JSON)");
}

// "geometry", "digit:<formula>", "digit_power:<gamma>", or inline JSON.
inline json potential_spec_from_flag(const std::string& s) {
  if (!s.empty() && s.front() == '{') return json::parse(s);
  if (s == "geometry") return json{{"kind", "geometry"}};
  if (s.rfind("digit:", 0) == 0)
    return json{{"kind", "digit"}, {"formula", s.substr(6)}};
  if (s.rfind("digit_power:", 0) == 0)
    return json{{"kind", "digit_power"}, {"gamma", std::stod(s.substr(12))}};
  throw UsageError("unrecognized potential shorthand: " + s +
                   " (expected geometry, digit:<formula>, "
                   "digit_power:<gamma>, or inline JSON)");
}

// ---- deterministic CSV ---------------------------------------------------------

// 17 significant digits: doubles round-trip exactly; non-finite values are
// refused (status columns carry that information instead).
inline std::string csv_num(double v) {
  if (!std::isfinite(v))
    throw NumericError("refusing to format a non-finite value for CSV");
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& os) : os_(os) {
    os_ << "# " << version_line() << "\n";
  }

  void header(const std::vector<std::string>& cols) { line(cols); }

  void line(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) os_ << ',';
      os_ << cells[i];
    }
    os_ << '\n';
  }

 private:
  std::ostream& os_;
};

inline void write_json_summary(std::ostream& os, json j) {
  j["version"] = version_line();
  os << j.dump(2) << "\n";
}

// ---- append-only evaluation cache ----------------------------------------------

// One JSON object per line: the key tuple (scope, q, delta, N) and the full
// evaluation record.  The scope string pins map, potential, and collocation
// degree so preloading never mixes incompatible runs.  Entries are appended
// only for fresh evaluations, so warm reruns leave the file unchanged.
class PressureCache {
 public:
  PressureCache(std::string path, const PressureEngine& eng)
      : path_(std::move(path)),
        scope_(eng.map().id() + "|" + eng.potential().id() + "|deg=" +
               std::to_string(eng.options().degree)) {}

  // Seeds the engine with every matching record; returns how many loaded.
  std::size_t preload(PressureEngine& eng) const {
    std::ifstream in(path_);
    if (!in.is_open()) return 0;
    std::size_t n = 0;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json rec = json::parse(line, nullptr, false);
      if (rec.is_discarded() || !rec.is_object()) continue;
      if (!rec.contains("scope") || rec["scope"] != scope_) continue;
      PressurePoint p;
      p.value = rec.at("value").get<double>();
      p.dq = rec.at("dq").get<double>();
      p.ddelta = rec.at("ddelta").get<double>();
      p.lambda = rec.at("lambda").get<double>();
      p.log_scale = rec.at("log_scale").get<double>();
      p.err_est = rec.at("err_est").get<double>();
      p.eig_iterations = rec.at("eig_iterations").get<int>();
      p.dense_fallback = rec.at("dense_fallback").get<bool>();
      p.matrix_route = rec.at("matrix_route").get<bool>();
      double N = rec.at("N").get<double>();
      if (N < 0) N = kInf;
      p.N = N;
      auto vec = [&](const char* key) {
        std::vector<double> v = rec.at(key).get<std::vector<double>>();
        Eigen::VectorXd out(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i];
        return out;
      };
      p.right = vec("right");
      p.left = vec("left");
      eng.seed_cache(rec.at("q").get<double>(),
                     rec.at("delta").get<double>(), N, p);
      ++n;
    }
    return n;
  }

  // Registers the append hook; the cache object must outlive the engine's
  // last evaluation.
  void attach(PressureEngine& eng) {
    eng.set_cache_observer([this](double q, double delta, double N,
                                  const PressurePoint& p) {
      this->append(q, delta, N, p);
    });
  }

  void append(double q, double delta, double N, const PressurePoint& p) {
    if (!std::isfinite(p.value) || !std::isfinite(p.dq) ||
        !std::isfinite(p.ddelta))
      return;  // only completed evaluations are worth persisting
    json rec;
    rec["scope"] = scope_;
    rec["q"] = q;
    rec["delta"] = delta;
    rec["N"] = std::isfinite(N) ? N : -1.0;
    rec["value"] = p.value;
    rec["dq"] = p.dq;
    rec["ddelta"] = p.ddelta;
    rec["lambda"] = p.lambda;
    rec["log_scale"] = p.log_scale;
    rec["err_est"] = p.err_est;
    rec["eig_iterations"] = p.eig_iterations;
    rec["dense_fallback"] = p.dense_fallback;
    rec["matrix_route"] = p.matrix_route;
    auto put = [&](const char* key, const Eigen::VectorXd& v) {
      std::vector<double> out(v.data(), v.data() + v.size());
      rec[key] = out;
    };
    put("right", p.right);
    put("left", p.left);
    std::lock_guard<std::mutex> lk(mu_);
    std::ofstream out(path_, std::ios::app);
    out << rec.dump() << "\n";
  }

  const std::string& scope() const { return scope_; }

 private:
  std::string path_;
  std::string scope_;
  std::mutex mu_;
};

}  // namespace io
}  // namespace emr
