#pragma once

#include <iosfwd>
#include <string>

#include <json.hpp>

#include "cdyn/core/dynamics_spec.hpp"
#include "cdyn/core/engine.hpp"

// JSON round-trip for specs and weights. Field names are listed in
// schema/dynamics_spec.schema.json; unknown keys raise ConfigError.

namespace cdyn {

using Json = nlohmann::json;

Json to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j, const std::string& what);

Json to_json(const AffineGate& g);
AffineGate gate_from_json(const Json& j, const std::string& what);

Json to_json(const DynamicsSpec& spec);
/// Validates unless `validate` is false (model configs validate after drawing
/// the gates the file leaves out).
DynamicsSpec spec_from_json(const Json& j, bool validate = true);

Json to_json(const ProjectionSet& p);
ProjectionSet projection_from_json(const Json& j);

/// Columns: i, j, raw, normalized, row_shift (0 unless the softmax row was shifted).
void write_coefficients_csv(std::ostream& os, const CoefficientMatrix& cm);

/// Throws ConfigError if `j` holds a key outside `allowed`.
void require_known_keys(const Json& j, std::initializer_list<const char*> allowed,
                        const std::string& where);

/// Applies "a.b.c=value" to `j`, creating objects along the path. The value is
/// parsed as JSON when possible and taken as a string otherwise.
void apply_override(Json& j, const std::string& assignment);

}  // namespace cdyn
