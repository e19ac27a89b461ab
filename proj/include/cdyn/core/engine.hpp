#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "cdyn/core/dynamics_spec.hpp"
#include "cdyn/linalg.hpp"

namespace cdyn {

struct Projected {
  Matrix queries;  // L x n
  Matrix keys;     // L x n
  Matrix values;   // L x d_v
};

/// q_i = W_Q x_i, k_i = W_K x_i, v_i = W_V x_i for every row of `inputs`.
Projected project(const ProjectionSet& proj, const Matrix& inputs);

/// One head of a spec with every input-derived quantity evaluated on a concrete
/// sequence. All engine routines below operate on this form.
struct HeadDynamics {
  ReadoutMap readout;
  EvolutionKind kind = EvolutionKind::identity;
  NormalizationKind normalization = NormalizationKind::one;
  double rho = 1.0;
  double eta_floor = 1e-30;

  Matrix queries;    // L x n~
  Matrix keys;       // L x n~ (already normalized when the rule asks for it)
  Matrix values;     // L x d_v~
  Vector lambda;     // scalar: lambda_t; gated_householder: gate alpha_t
  Matrix diag;       // diagonal: L x n~
  Matrix direction;  // householder: L x n~, final (normalized if requested)
  Vector beta;       // householder strength
  Vector scale;      // b_j
  Vector out_gate;   // external_state o_i
  Vector log_eta;    // input_derived log eta_i

  std::size_t length() const { return queries.rows(); }
  std::size_t state_dim() const { return queries.cols(); }
  std::size_t value_dim() const { return values.cols(); }
};

/// Builds one HeadDynamics per head. Throws StabilityError when an
/// input-derived rule leaves its stability region without allow_unstable.
std::vector<HeadDynamics> materialize(const DynamicsSpec& spec, const ProjectionSet& proj,
                                      const Matrix& inputs);
/// Same, with queries/keys/values supplied by the caller (e.g. after feature
/// preprocessing); `inputs` still feeds the input-derived gates.
std::vector<HeadDynamics> materialize_projected(const DynamicsSpec& spec, const Matrix& inputs,
                                                const Projected& qkv);

/// A_t for one head at one step.
struct EvolutionStep {
  EvolutionKind kind = EvolutionKind::identity;
  double lambda = 1.0;                    // scalar value, or gate for gated_householder
  std::span<const double> diag;           // diagonal
  std::span<const double> direction;      // householder z_t
  double beta = 0.0;                      // householder strength
  bool normalize_direction = false;       // unit-normalize z_t before applying

  static EvolutionStep scalar(double lambda);
  static EvolutionStep diagonal(std::span<const double> lambda);
  static EvolutionStep householder(std::span<const double> z, double beta, bool normalize = true);
  static EvolutionStep gated_householder(std::span<const double> z, double beta, double gate,
                                         bool normalize = true);
};

EvolutionStep step_at(const HeadDynamics& head, std::size_t t);

/// Applies A_t to `vec` in place.
void evolution_apply_inplace(const EvolutionStep& step, std::span<double> vec);
Vector evolution_apply(const EvolutionStep& step, std::span<const double> vec);
/// A_t as an explicit n x n matrix.
Matrix evolution_matrix(const EvolutionStep& step, std::size_t n);

struct ImpulseState {
  Vector state;
  std::size_t source = 0;  // j
  std::size_t read = 0;    // i
};

/// h_{i,j} = A_i ... A_{j+1} b_j k_j (0-based indices, A_i applied last).
ImpulseState impulse_state(const HeadDynamics& head, std::size_t j, std::size_t i);
/// Concatenation of the per-head impulse states.
ImpulseState impulse_state(const DynamicsSpec& spec, const ProjectionSet& proj,
                           const Matrix& inputs, std::size_t j, std::size_t i);

/// Packed lower-triangular L x L storage; entries above the diagonal do not exist.
class LowerTriangular {
 public:
  LowerTriangular() = default;
  explicit LowerTriangular(std::size_t size);

  std::size_t size() const noexcept { return size_; }
  std::span<double> row(std::size_t i) { return {data_.data() + offset(i), i + 1}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + offset(i), i + 1}; }
  double operator()(std::size_t i, std::size_t j) const { return data_[offset(i) + j]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[offset(i) + j]; }
  std::span<const double> packed() const { return data_; }
  /// Full L x L export with zeros above the diagonal.
  Matrix full() const;

 private:
  static std::size_t offset(std::size_t i) { return i * (i + 1) / 2; }
  std::size_t size_ = 0;
  std::vector<double> data_;
};

struct CoefficientMatrix {
  LowerTriangular raw;         // alpha_{i,j}
  LowerTriangular normalized;  // alpha_{i,j} / eta_i
  Vector eta;
  // Nonzero for rows of a shift-stabilized softmax whose unshifted values
  // overflow: raw then holds exp(s - row_shift) and eta is scaled the same way.
  Vector row_shift;

  std::size_t size() const { return raw.size(); }
  bool shifted() const;
};

CoefficientMatrix coefficient_matrix(const HeadDynamics& head);
std::vector<CoefficientMatrix> coefficient_matrix(const DynamicsSpec& spec, const Matrix& inputs,
                                                  const ProjectionSet& proj);

/// One coefficient row as produced by the row-streaming sweep.
struct CoefficientRow {
  std::size_t i = 0;
  std::span<const double> raw;
  std::span<const double> normalized;
  double eta = 1.0;
  double shift = 0.0;
};

/// Calls `fn` for rows 0..L-1 in order without storing the triangle. Rows
/// already delivered stay valid if a later row throws OverflowError.
void stream_rows(const HeadDynamics& head, const std::function<void(const CoefficientRow&)>& fn);

/// y_i = sum_{j<=i} normalized[i][j] v_j
Matrix mix_values(const CoefficientMatrix& coeffs, const Matrix& values);

/// Row-streaming evaluation of the closed form: O(L^2 n) time, O(L n) memory.
Matrix forward_dense(const HeadDynamics& head);
/// S_i = A_i S_{i-1} + b_i k_i v_i^T, y_i = S_i^T q_i / eta_i. Throws
/// UnsupportedError for readouts without a finite-state recurrence.
Matrix forward_recurrent(const HeadDynamics& head);

/// Whole-spec forward: heads evaluated independently, outputs concatenated.
Matrix forward_dense(const DynamicsSpec& spec, const ProjectionSet& proj, const Matrix& inputs);
Matrix forward_recurrent(const DynamicsSpec& spec, const ProjectionSet& proj,
                         const Matrix& inputs);
Matrix concat_heads(const std::vector<Matrix>& per_head);

/// True when forward_recurrent accepts this head configuration.
bool supports_recurrent(const ReadoutMap& readout, EvolutionKind kind);

/// Applies the eta floor: |eta| is raised to `floor`, keeping the sign.
double floor_eta(double eta, double floor);

}  // namespace cdyn
