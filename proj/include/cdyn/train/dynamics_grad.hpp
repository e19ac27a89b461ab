#pragma once

#include "cdyn/core/engine.hpp"

// Reverse-mode derivatives of the coefficient dynamics. The head-level pass
// works on materialized quantities; dynamics_backward chains them through
// key normalization and the input-derived gates back to qkv and the inputs.

namespace cdyn {

struct HeadGradients {
  Matrix dq, dk, dv;  // w.r.t. head.queries / head.keys (as materialized) / head.values
  Vector dlambda;     // scalar lambda, or the gate of gated_householder
  Matrix ddiag;
  Matrix ddirection;  // w.r.t. head.direction rows (as materialized)
  Vector dbeta;
  Vector dscale;
  Vector dout_gate;
  Vector dlog_eta;
};

/// Gradients of sum(d_out .* forward_dense(head)).
HeadGradients head_backward(const HeadDynamics& head, const Matrix& d_out);

struct DynamicsGradients {
  Matrix d_inputs;  // through the gates only
  Projected d_qkv;  // w.r.t. the raw projections passed to materialize_projected
  AffineGate decay, strength, direction, scaling, normalization;  // empty when the gate is unused
};

/// Forward used by the trainer: dense for every readout, or recurrent on request
/// when the readout allows it.
Matrix dynamics_forward(const DynamicsSpec& spec, const Matrix& inputs, const Projected& qkv,
                        bool recurrent = false);

DynamicsGradients dynamics_backward(const DynamicsSpec& spec, const Matrix& inputs,
                                    const Projected& qkv, const Matrix& d_out);

}  // namespace cdyn
