#include "cdyn/core/serialize.hpp"

#include <algorithm>
#include <cstring>
#include <iomanip>
#include <ostream>

#include "cdyn/errors.hpp"

namespace cdyn {

void require_known_keys(const Json& j, std::initializer_list<const char*> allowed,
                        const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& item : j.items()) {
    const bool ok = std::any_of(allowed.begin(), allowed.end(),
                                [&](const char* k) { return item.key() == k; });
    if (!ok) throw ConfigError(where + ": unknown key '" + item.key() + "'");
  }
}

namespace {

template <class T>
T get_or(const Json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

std::string str_or(const Json& j, const char* key, std::string_view fallback,
                   const std::string& where) {
  return get_or<std::string>(j, key, std::string(fallback), where);
}

Json to_json(const DecayRule& d) {
  Json j{{"source", to_string(d.source)},
         {"value", d.value},
         {"parameterization", to_string(d.parameterization)},
         {"tau", d.tau},
         {"clamp", d.clamp}};
  if (!d.gate.empty()) j["gate"] = to_json(d.gate);
  if (!d.rate.empty()) j["rate"] = d.rate;
  return j;
}

DecayRule decay_from_json(const Json& j, const std::string& w) {
  require_known_keys(j, {"source", "value", "parameterization", "gate", "rate", "tau", "clamp"}, w);
  DecayRule d;
  d.source = parse_parameter_source(str_or(j, "source", to_string(d.source), w));
  d.value = get_or<Vector>(j, "value", d.value, w);
  d.parameterization =
      parse_decay_parameterization(str_or(j, "parameterization", to_string(d.parameterization), w));
  if (j.contains("gate")) d.gate = gate_from_json(j["gate"], w + ".gate");
  d.rate = get_or<Vector>(j, "rate", d.rate, w);
  d.tau = get_or<double>(j, "tau", d.tau, w);
  d.clamp = get_or<double>(j, "clamp", d.clamp, w);
  return d;
}

Json to_json(const HouseholderRule& h) {
  Json j{{"direction", to_string(h.direction)},
         {"normalize_direction", h.normalize_direction},
         {"strength_source", to_string(h.strength_source)},
         {"strength", h.strength},
         {"negative_eigenvalues", h.negative_eigenvalues}};
  if (!h.direction_gate.empty()) j["direction_gate"] = to_json(h.direction_gate);
  if (!h.direction_value.empty()) j["direction_value"] = h.direction_value;
  if (!h.strength_gate.empty()) j["strength_gate"] = to_json(h.strength_gate);
  return j;
}

HouseholderRule householder_from_json(const Json& j, const std::string& w) {
  require_known_keys(j,
                     {"direction", "direction_gate", "direction_value", "normalize_direction",
                      "strength_source", "strength", "strength_gate", "negative_eigenvalues"},
                     w);
  HouseholderRule h;
  h.direction = parse_direction_source(str_or(j, "direction", to_string(h.direction), w));
  if (j.contains("direction_gate"))
    h.direction_gate = gate_from_json(j["direction_gate"], w + ".direction_gate");
  h.direction_value = get_or<Vector>(j, "direction_value", h.direction_value, w);
  h.normalize_direction = get_or<bool>(j, "normalize_direction", h.normalize_direction, w);
  h.strength_source =
      parse_parameter_source(str_or(j, "strength_source", to_string(h.strength_source), w));
  h.strength = get_or<double>(j, "strength", h.strength, w);
  if (j.contains("strength_gate"))
    h.strength_gate = gate_from_json(j["strength_gate"], w + ".strength_gate");
  h.negative_eigenvalues = get_or<bool>(j, "negative_eigenvalues", h.negative_eigenvalues, w);
  return h;
}

}  // namespace

Json to_json(const Matrix& m) {
  Json rows = Json::array();
  for (std::size_t r = 0; r < m.rows(); ++r)
    rows.push_back(Vector(m.row(r).begin(), m.row(r).end()));
  return rows;
}

Matrix matrix_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError(what + ": expected an array of rows");
  std::vector<Vector> rows;
  try {
    for (const auto& r : j) rows.push_back(r.get<Vector>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(what + ": " + e.what());
  }
  for (const auto& r : rows)
    if (r.size() != rows.front().size()) throw ConfigError(what + ": ragged rows");
  return Matrix::from_rows(rows);
}

Json to_json(const AffineGate& g) { return {{"weight", to_json(g.weight)}, {"bias", g.bias}}; }

AffineGate gate_from_json(const Json& j, const std::string& what) {
  require_known_keys(j, {"weight", "bias"}, what);
  AffineGate g;
  if (j.contains("weight")) g.weight = matrix_from_json(j["weight"], what + ".weight");
  g.bias = get_or<Vector>(j, "bias", Vector(g.weight.rows(), 0.0), what);
  return g;
}

Json to_json(const DynamicsSpec& s) {
  Json scaling{{"kind", to_string(s.scaling.kind)},
               {"value", s.scaling.value},
               {"parameterization", to_string(s.scaling.parameterization)},
               {"clamp", s.scaling.clamp}};
  if (!s.scaling.gate.empty()) scaling["gate"] = to_json(s.scaling.gate);
  Json norm{{"kind", to_string(s.normalization.kind)}, {"rho", s.normalization.rho}};
  if (!s.normalization.gate.empty()) norm["gate"] = to_json(s.normalization.gate);
  return {
      {"dims", {{"d", s.dims.d}, {"n", s.dims.n}, {"d_v", s.dims.d_v}, {"heads", s.dims.heads}}},
      {"readout",
       {{"kind", to_string(s.readout.kind)}, {"feature_map", to_string(s.readout.feature_map)}}},
      {"evolution",
       {{"kind", to_string(s.evolution.kind)},
        {"decay", to_json(s.evolution.decay)},
        {"householder", to_json(s.evolution.householder)},
        {"normalize_keys", s.evolution.normalize_keys},
        {"allow_unstable", s.evolution.allow_unstable}}},
      {"scaling", scaling},
      {"normalization", norm},
      {"eta_floor", s.eta_floor},
  };
}

DynamicsSpec spec_from_json(const Json& j, bool validate) {
  require_known_keys(j, {"dims", "readout", "evolution", "scaling", "normalization", "eta_floor"},
                     "spec");
  DynamicsSpec s;
  if (!j.contains("dims")) throw ConfigError("spec: missing 'dims'");
  const Json& dj = j["dims"];
  require_known_keys(dj, {"d", "n", "d_v", "heads"}, "spec.dims");
  s.dims.d = get_or<std::size_t>(dj, "d", 0, "spec.dims");
  s.dims.n = get_or<std::size_t>(dj, "n", 0, "spec.dims");
  s.dims.d_v = get_or<std::size_t>(dj, "d_v", 0, "spec.dims");
  s.dims.heads = get_or<std::size_t>(dj, "heads", 1, "spec.dims");

  if (j.contains("readout")) {
    const Json& r = j["readout"];
    require_known_keys(r, {"kind", "feature_map"}, "spec.readout");
    s.readout.kind = parse_readout_kind(str_or(r, "kind", "identity", "spec.readout"));
    s.readout.feature_map =
        parse_feature_map(str_or(r, "feature_map", "elu-plus-one", "spec.readout"));
  }
  if (j.contains("evolution")) {
    const Json& e = j["evolution"];
    const std::string w = "spec.evolution";
    require_known_keys(e, {"kind", "decay", "householder", "normalize_keys", "allow_unstable"}, w);
    s.evolution.kind = parse_evolution_kind(str_or(e, "kind", "identity", w));
    if (e.contains("decay")) s.evolution.decay = decay_from_json(e["decay"], w + ".decay");
    if (e.contains("householder"))
      s.evolution.householder = householder_from_json(e["householder"], w + ".householder");
    s.evolution.normalize_keys = get_or<bool>(e, "normalize_keys", false, w);
    s.evolution.allow_unstable = get_or<bool>(e, "allow_unstable", false, w);
  }
  if (j.contains("scaling")) {
    const Json& c = j["scaling"];
    const std::string w = "spec.scaling";
    require_known_keys(c, {"kind", "value", "parameterization", "gate", "clamp"}, w);
    s.scaling.kind = parse_scaling_kind(str_or(c, "kind", to_string(s.scaling.kind), w));
    s.scaling.value = get_or<double>(c, "value", s.scaling.value, w);
    s.scaling.parameterization = parse_scaling_parameterization(
        str_or(c, "parameterization", to_string(s.scaling.parameterization), w));
    if (c.contains("gate")) s.scaling.gate = gate_from_json(c["gate"], w + ".gate");
    s.scaling.clamp = get_or<double>(c, "clamp", s.scaling.clamp, w);
  }
  if (j.contains("normalization")) {
    const Json& nj = j["normalization"];
    const std::string w = "spec.normalization";
    require_known_keys(nj, {"kind", "rho", "gate"}, w);
    s.normalization.kind = parse_normalization_kind(str_or(nj, "kind", "one", w));
    s.normalization.rho = get_or<double>(nj, "rho", 1.0, w);
    if (nj.contains("gate")) s.normalization.gate = gate_from_json(nj["gate"], w + ".gate");
  }
  s.eta_floor = get_or<double>(j, "eta_floor", s.eta_floor, "spec");
  if (validate) s.validate();
  return s;
}

Json to_json(const ProjectionSet& p) {
  return {{"w_q", to_json(p.w_q)}, {"w_k", to_json(p.w_k)}, {"w_v", to_json(p.w_v)}};
}

ProjectionSet projection_from_json(const Json& j) {
  require_known_keys(j, {"w_q", "w_k", "w_v"}, "projection");
  ProjectionSet p{matrix_from_json(j.at("w_q"), "w_q"), matrix_from_json(j.at("w_k"), "w_k"),
                  matrix_from_json(j.at("w_v"), "w_v")};
  p.validate();
  return p;
}

void write_coefficients_csv(std::ostream& os, const CoefficientMatrix& cm) {
  os << "i,j,raw,normalized,row_shift\n" << std::setprecision(17);
  for (std::size_t i = 0; i < cm.size(); ++i)
    for (std::size_t j = 0; j <= i; ++j)
      os << i << ',' << j << ',' << cm.raw(i, j) << ',' << cm.normalized(i, j) << ','
         << cm.row_shift[i] << '\n';
}

void apply_override(Json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  Json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key segment");
    if (!node->is_object()) {
      if (!node->is_null()) throw ConfigError("override '" + path + "' descends into a non-object");
      *node = Json::object();
    }
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

}  // namespace cdyn
