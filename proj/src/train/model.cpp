#include "cdyn/train/model.hpp"

#include <cmath>
#include <random>
#include <string>

#include "cdyn/errors.hpp"
#include "cdyn/kernels.hpp"
#include "cdyn/train/dynamics_grad.hpp"

namespace cdyn {

namespace {

std::string lname(std::size_t l, const char* what) { return "l" + std::to_string(l) + "." + what; }

Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, stddev);
  Matrix m(rows, cols);
  for (double& v : m.flat()) v = g(rng);
  return m;
}

Matrix ones_row(std::size_t k) { return Matrix(1, k, 1.0); }

AffineGate& slot(DynamicsSpec& s, int k) {
  switch (k) {
    case 0: return s.evolution.decay.gate;
    case 1: return s.evolution.householder.strength_gate;
    case 2: return s.evolution.householder.direction_gate;
    case 3: return s.scaling.gate;
    default: return s.normalization.gate;
  }
}
constexpr const char* kSlotNames[5] = {"decay", "strength", "direction", "scaling", "eta"};

// Rows of gate k when the layer reads it, 0 when unused. The external-state
// output gate is optional and only counts when present.
std::size_t gate_rows(const DynamicsSpec& s, int k) {
  const auto& ev = s.evolution;
  const bool hh = ev.kind == EvolutionKind::householder || ev.kind == EvolutionKind::gated_householder;
  switch (k) {
    case 0:
      if (ev.decay.source != ParameterSource::input_derived) return 0;
      if (ev.kind == EvolutionKind::diagonal) return s.dims.n;
      return ev.kind == EvolutionKind::scalar || ev.kind == EvolutionKind::gated_householder
                 ? s.dims.heads
                 : 0;
    case 1:
      return hh && ev.householder.strength_source == ParameterSource::input_derived ? s.dims.heads : 0;
    case 2:
      return hh && ev.householder.direction == DirectionSource::learned ? s.dims.n : 0;
    case 3: {
      const auto p = s.scaling.parameterization;
      const bool gated = p == ScalingParameterization::exp_gate_over_sqrt_n ||
                         p == ScalingParameterization::sigmoid ||
                         p == ScalingParameterization::sigmoid_over_sqrt_n;
      return s.scaling.kind == ScalingKind::input_derived && gated ? s.dims.heads : 0;
    }
    default:
      if (s.normalization.kind == NormalizationKind::input_derived) return s.dims.heads;
      if (s.normalization.kind == NormalizationKind::external_state && !s.normalization.gate.empty())
        return s.dims.heads;
      return 0;
  }
}

// Gates a hand-written spec leaves out are drawn here, the same way for
// validation and for init. A missing mamba2 gate gets step sizes log-spaced in
// [1e-3, 1e-1] through its bias and rates spread over [1, 16].
void fill_missing_gates(DynamicsSpec& s, std::uint64_t seed) {
  for (int k = 0; k < 5; ++k) {
    const std::size_t rows = gate_rows(s, k);
    AffineGate& g = slot(s, k);
    if (rows == 0 || !g.empty()) continue;
    g = AffineGate::random(rows, s.dims.d, sub_seed(seed, 10 + k), 1.0, 0.0);
    if (k == 0 && s.evolution.decay.parameterization == DecayParameterization::mamba2)
      for (std::size_t r = 0; r < rows; ++r) {
        const double t = rows > 1 ? double(r) / double(rows - 1) : 0.5;
        g.bias[r] = std::log(std::expm1(std::exp(std::log(1e-3) * (1 - t) + std::log(1e-1) * t)));
      }
  }
  auto& decay = s.evolution.decay;
  const std::size_t rows = gate_rows(s, 0);
  if (rows && decay.parameterization == DecayParameterization::mamba2 && decay.rate.empty())
    for (std::size_t r = 0; r < rows; ++r) decay.rate.push_back(1.0 + 15.0 * (double(r) + 0.5) / double(rows));
}

std::string_view to_string(BlockStyle b) { return b == BlockStyle::type1 ? "type1" : "type2"; }
BlockStyle parse_block(const std::string& s) {
  if (s == "type1") return BlockStyle::type1;
  if (s == "type2") return BlockStyle::type2;
  throw ConfigError("model.block: expected type1 or type2, got '" + s + "'");
}

Matrix row_matrix(const Vector& v) {
  Matrix m(1, v.size());
  std::copy(v.begin(), v.end(), m.flat().begin());
  return m;
}

Matrix silu_of(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.flat().size(); ++i) y.flat()[i] = silu(x.flat()[i]);
  return y;
}

}  // namespace

void ModelConfig::validate() const {
  const Dims& dims = dynamics.dims;
  dims.validate();
  if (!architecture) {
    DynamicsSpec filled = dynamics;
    fill_missing_gates(filled, 0);
    filled.validate();
  }
  if (dims.d_v != dims.d) throw ConfigError("model: d_v must equal d");
  if (vocab_size == 0) throw ConfigError("model.vocab_size must be positive");
  if (layers == 0) throw ConfigError("model.layers must be positive");
  if (positional_embedding && max_len == 0) throw ConfigError("model.max_len must be positive");
  if (short_conv && conv_width == 0) throw ConfigError("model.conv_width must be positive");
  if (mlp && mlp_dim == 0) throw ConfigError("model.mlp_dim must be positive");
  if (block == BlockStyle::type2) {
    const ReadoutKind r = architecture ? preset(*architecture, dims, hyper).spec.readout.kind
                                       : dynamics.readout.kind;
    const bool identity = r == ReadoutKind::identity;
    if (!identity) throw ConfigError("model: type2 blocks require an identity readout");
  }
}

Json to_json(const ModelConfig& c) {
  Json j;
  if (c.architecture) {
    j["architecture"] = std::string(to_string(*c.architecture));
    j["hyper"] = to_json(c.hyper);
    j["dims"] = {{"d", c.dynamics.dims.d}, {"n", c.dynamics.dims.n}, {"heads", c.dynamics.dims.heads}};
  } else {
    j["dynamics"] = to_json(c.dynamics);
  }
  j["vocab_size"] = c.vocab_size;
  j["layers"] = c.layers;
  j["max_len"] = c.max_len;
  j["positional_embedding"] = c.positional_embedding;
  j["block"] = std::string(to_string(c.block));
  j["short_conv"] = c.short_conv;
  j["conv_width"] = c.conv_width;
  j["mlp"] = c.mlp;
  j["mlp_dim"] = c.mlp_dim;
  j["recurrent"] = c.recurrent;
  return j;
}

ModelConfig model_config_from_json(const Json& j) {
  require_known_keys(j,
                     {"architecture", "hyper", "dims", "dynamics", "vocab_size", "layers", "max_len",
                      "positional_embedding", "block", "short_conv", "conv_width", "mlp", "mlp_dim",
                      "recurrent"},
                     "model");
  ModelConfig c;
  try {
    if (j.contains("architecture")) {
      if (j.contains("dynamics")) throw ConfigError("model: give either architecture or dynamics");
      c.architecture = parse_architecture(j.at("architecture").get<std::string>());
      if (j.contains("hyper")) c.hyper = hyper_from_json(j.at("hyper"));
      const Json& d = j.at("dims");
      require_known_keys(d, {"d", "n", "heads"}, "model.dims");
      c.dynamics.dims.d = d.at("d").get<std::size_t>();
      c.dynamics.dims.n = d.at("n").get<std::size_t>();
      c.dynamics.dims.heads = d.value("heads", std::size_t{1});
      c.dynamics.dims.d_v = c.dynamics.dims.d;
    } else if (j.contains("dynamics")) {
      c.dynamics = spec_from_json(j.at("dynamics"), false);
    } else {
      throw ConfigError("model: architecture or dynamics is required");
    }
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.layers = j.value("layers", c.layers);
    c.max_len = j.value("max_len", c.max_len);
    c.positional_embedding = j.value("positional_embedding", c.positional_embedding);
    if (j.contains("block")) c.block = parse_block(j.at("block").get<std::string>());
    c.short_conv = j.value("short_conv", c.short_conv);
    c.conv_width = j.value("conv_width", c.conv_width);
    c.mlp = j.value("mlp", c.mlp);
    c.mlp_dim = j.value("mlp_dim", c.mlp_dim);
    c.recurrent = j.value("recurrent", c.recurrent);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  c.validate();
  return c;
}

Model Model::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const Dims& dims = cfg.dynamics.dims;
  const std::size_t d = dims.d;
  const double inv_d = 1.0 / std::sqrt(static_cast<double>(d));
  ParamSet p;
  p.add("embed", gaussian(cfg.vocab_size, d, 1.0, sub_seed(seed, 1000)));
  if (cfg.positional_embedding) p.add("pos", gaussian(cfg.max_len, d, 0.1, sub_seed(seed, 1001)));
  p.add("final_norm", ones_row(d));
  p.add("head", gaussian(cfg.vocab_size, d, inv_d, sub_seed(seed, 1002)));

  std::vector<DynamicsSpec> specs;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::uint64_t ls = sub_seed(seed, 2000 + l);
    DynamicsSpec spec;
    ProjectionSet proj;
    if (cfg.architecture) {
      auto pr = preset(*cfg.architecture, dims, cfg.hyper, ls);
      spec = std::move(pr.spec);
      proj = std::move(pr.proj);
    } else {
      spec = cfg.dynamics;
      fill_missing_gates(spec, ls);
      proj = ProjectionSet::random(dims, sub_seed(ls, 0));
    }
    p.add(lname(l, "norm"), ones_row(d));
    if (cfg.short_conv) {
      Matrix k = gaussian(cfg.conv_width, d, 0.1, sub_seed(ls, 1));
      for (double& v : k.row(0)) v += 1.0;
      p.add(lname(l, "conv"), std::move(k));
    }
    p.add(lname(l, "w_q"), std::move(proj.w_q));
    p.add(lname(l, "w_k"), std::move(proj.w_k));
    p.add(lname(l, "w_v"), std::move(proj.w_v));
    for (int k = 0; k < 5; ++k) {
      const std::size_t rows = gate_rows(spec, k);
      if (rows == 0) continue;
      const AffineGate& g = slot(spec, k);
      const std::string base = lname(l, kSlotNames[k]);
      p.add(base + ".w", g.weight);
      p.add(base + ".b", row_matrix(g.bias));
    }
    if (cfg.block == BlockStyle::type2) {
      p.add(lname(l, "w_g"), gaussian(dims.d_v, d, inv_d, sub_seed(ls, 2)));
      p.add(lname(l, "y_norm"), ones_row(dims.d_v));
    }
    p.add(lname(l, "w_o"), gaussian(d, dims.d_v, 1.0 / std::sqrt(double(dims.d_v)), sub_seed(ls, 3)));
    if (cfg.mlp) {
      p.add(lname(l, "mlp_norm"), ones_row(d));
      p.add(lname(l, "w1"), gaussian(cfg.mlp_dim, d, inv_d, sub_seed(ls, 4)));
      p.add(lname(l, "w3"), gaussian(cfg.mlp_dim, d, inv_d, sub_seed(ls, 5)));
      p.add(lname(l, "w2"), gaussian(d, cfg.mlp_dim, 1.0 / std::sqrt(double(cfg.mlp_dim)), sub_seed(ls, 6)));
    }
    specs.push_back(std::move(spec));
  }
  return Model(cfg, std::move(p), std::move(specs));
}

Model::Model(ModelConfig cfg, ParamSet params, std::vector<DynamicsSpec> layer_specs)
    : cfg_(std::move(cfg)), params_(std::move(params)), specs_(std::move(layer_specs)) {
  if (specs_.size() != cfg_.layers) throw ConfigError("model: one spec per layer required");
}

DynamicsSpec Model::live_spec(std::size_t l) const {
  DynamicsSpec s = specs_.at(l);
  for (int k = 0; k < 5; ++k) {
    const std::string base = lname(l, kSlotNames[k]);
    if (!params_.contains(base + ".w")) continue;
    AffineGate& g = slot(s, k);
    g.weight = params_.at(base + ".w");
    const auto b = params_.at(base + ".b").flat();
    g.bias.assign(b.begin(), b.end());
  }
  return s;
}

struct Model::LayerCache {
  Matrix x_in;
  RmsCache n1;
  Matrix u, c;
  Projected qkv;
  DynamicsSpec spec;
  Matrix y;
  RmsCache ny;
  Matrix yn, gpre, z;
  Matrix x_mid;
  RmsCache n2;
  Matrix m, a, b, hm;
};

Matrix Model::forward(std::span<const std::int32_t> tokens, std::vector<LayerCache>* caches,
                      Matrix* final_in, RmsCache* final_cache) const {
  const std::size_t len = tokens.size();
  const std::size_t d = cfg_.dynamics.dims.d;
  if (len == 0) throw ShapeError("model: empty sequence");
  if (cfg_.positional_embedding && len > cfg_.max_len)
    throw ShapeError("model: sequence longer than max_len=" + std::to_string(cfg_.max_len));
  const Matrix& emb = params_.at("embed");
  Matrix x(len, d);
  for (std::size_t t = 0; t < len; ++t) {
    if (tokens[t] < 0 || static_cast<std::size_t>(tokens[t]) >= cfg_.vocab_size)
      throw ShapeError("model: token " + std::to_string(tokens[t]) + " outside the vocabulary");
    std::copy_n(emb.row(tokens[t]).begin(), d, x.row(t).begin());
    if (cfg_.positional_embedding) kernels::axpy(1.0, params_.at("pos").row(t), x.row(t));
  }

  if (caches) caches->resize(cfg_.layers);
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    LayerCache local;
    LayerCache& c = caches ? (*caches)[l] : local;
    c.x_in = x;
    c.u = rmsnorm_forward(x, params_.at(lname(l, "norm")).flat(), c.n1);
    c.c = cfg_.short_conv ? causal_conv_forward(c.u, params_.at(lname(l, "conv"))) : c.u;
    c.qkv = {apply_rows(c.c, params_.at(lname(l, "w_q"))), apply_rows(c.c, params_.at(lname(l, "w_k"))),
             apply_rows(c.c, params_.at(lname(l, "w_v")))};
    c.spec = live_spec(l);
    c.y = dynamics_forward(c.spec, c.c, c.qkv, cfg_.recurrent);
    const Matrix* mixed = &c.y;
    if (cfg_.block == BlockStyle::type2) {
      c.yn = rmsnorm_forward(c.y, params_.at(lname(l, "y_norm")).flat(), c.ny);
      c.gpre = apply_rows(c.u, params_.at(lname(l, "w_g")));
      c.z = silu_of(c.gpre);
      kernels::mul(c.yn.flat(), c.z.flat());
      mixed = &c.z;
    }
    add_inplace(x, apply_rows(*mixed, params_.at(lname(l, "w_o"))));
    if (cfg_.mlp) {
      c.x_mid = x;
      c.m = rmsnorm_forward(x, params_.at(lname(l, "mlp_norm")).flat(), c.n2);
      c.a = apply_rows(c.m, params_.at(lname(l, "w1")));
      c.b = apply_rows(c.m, params_.at(lname(l, "w3")));
      c.hm = silu_of(c.a);
      kernels::mul(c.b.flat(), c.hm.flat());
      add_inplace(x, apply_rows(c.hm, params_.at(lname(l, "w2"))));
    }
  }
  RmsCache fc;
  const Matrix h = rmsnorm_forward(x, params_.at("final_norm").flat(), final_cache ? *final_cache : fc);
  if (final_in) *final_in = x;
  return apply_rows(h, params_.at("head"));
}

Matrix Model::logits(std::span<const std::int32_t> tokens) const {
  return forward(tokens, nullptr, nullptr, nullptr);
}

double Model::loss(const TaskExample& ex) const {
  std::size_t count = 0;
  for (auto t : ex.targets) count += t >= 0;
  if (count == 0) return 0.0;
  return cross_entropy(logits(ex.tokens), ex.targets, 1.0, nullptr) / double(count);
}

double Model::loss_and_grad(const TaskExample& ex, double normalizer, ParamSet* grad) const {
  if (!grad) return cross_entropy(logits(ex.tokens), ex.targets, normalizer, nullptr);
  std::vector<LayerCache> caches;
  Matrix x_final;
  RmsCache fcache;
  const Matrix lg = forward(ex.tokens, &caches, &x_final, &fcache);
  Matrix dlogits(lg.rows(), lg.cols());
  const double loss = cross_entropy(lg, ex.targets, normalizer, &dlogits);

  ParamSet& g = *grad;
  const std::size_t len = ex.tokens.size();
  RmsCache tmp;
  const Matrix h = rmsnorm_forward(x_final, params_.at("final_norm").flat(), tmp);
  Matrix dh(len, h.cols());
  linear_backward(h, params_.at("head"), dlogits, &dh, g.at("head"));
  Matrix dx = rmsnorm_backward(x_final, params_.at("final_norm").flat(), fcache, dh,
                               g.at("final_norm").flat());

  for (std::size_t l = cfg_.layers; l-- > 0;) {
    const LayerCache& c = caches[l];
    if (cfg_.mlp) {
      Matrix dhm(len, cfg_.mlp_dim);
      linear_backward(c.hm, params_.at(lname(l, "w2")), dx, &dhm, g.at(lname(l, "w2")));
      Matrix da(len, cfg_.mlp_dim), db(len, cfg_.mlp_dim);
      for (std::size_t i = 0; i < dhm.flat().size(); ++i) {
        const double a = c.a.flat()[i];
        da.flat()[i] = dhm.flat()[i] * c.b.flat()[i] * silu_derivative(a);
        db.flat()[i] = dhm.flat()[i] * silu(a);
      }
      Matrix dm(len, c.m.cols());
      linear_backward(c.m, params_.at(lname(l, "w1")), da, &dm, g.at(lname(l, "w1")));
      linear_backward(c.m, params_.at(lname(l, "w3")), db, &dm, g.at(lname(l, "w3")));
      add_inplace(dx, rmsnorm_backward(c.x_mid, params_.at(lname(l, "mlp_norm")).flat(), c.n2, dm,
                                       g.at(lname(l, "mlp_norm")).flat()));
    }

    Matrix du(len, c.u.cols());
    Matrix dy;
    if (cfg_.block == BlockStyle::type2) {
      Matrix dz(len, c.z.cols());
      linear_backward(c.z, params_.at(lname(l, "w_o")), dx, &dz, g.at(lname(l, "w_o")));
      Matrix dyn(len, c.z.cols()), dgpre(len, c.z.cols());
      for (std::size_t i = 0; i < dz.flat().size(); ++i) {
        const double gp = c.gpre.flat()[i];
        dyn.flat()[i] = dz.flat()[i] * silu(gp);
        dgpre.flat()[i] = dz.flat()[i] * c.yn.flat()[i] * silu_derivative(gp);
      }
      linear_backward(c.u, params_.at(lname(l, "w_g")), dgpre, &du, g.at(lname(l, "w_g")));
      dy = rmsnorm_backward(c.y, params_.at(lname(l, "y_norm")).flat(), c.ny, dyn,
                            g.at(lname(l, "y_norm")).flat());
    } else {
      dy = Matrix(len, c.y.cols());
      linear_backward(c.y, params_.at(lname(l, "w_o")), dx, &dy, g.at(lname(l, "w_o")));
    }

    DynamicsGradients dg = dynamics_backward(c.spec, c.c, c.qkv, dy);
    Matrix dc = std::move(dg.d_inputs);
    linear_backward(c.c, params_.at(lname(l, "w_q")), dg.d_qkv.queries, &dc, g.at(lname(l, "w_q")));
    linear_backward(c.c, params_.at(lname(l, "w_k")), dg.d_qkv.keys, &dc, g.at(lname(l, "w_k")));
    linear_backward(c.c, params_.at(lname(l, "w_v")), dg.d_qkv.values, &dc, g.at(lname(l, "w_v")));
    const AffineGate* gates[5] = {&dg.decay, &dg.strength, &dg.direction, &dg.scaling, &dg.normalization};
    for (int k = 0; k < 5; ++k) {
      const std::string base = lname(l, kSlotNames[k]);
      if (!g.contains(base + ".w")) continue;
      add_inplace(g.at(base + ".w"), gates[k]->weight);
      add_inplace(g.at(base + ".b"), row_matrix(gates[k]->bias));
    }
    if (cfg_.short_conv)
      add_inplace(du, causal_conv_backward(c.u, params_.at(lname(l, "conv")), dc, g.at(lname(l, "conv"))));
    else
      add_inplace(du, dc);
    add_inplace(dx, rmsnorm_backward(c.x_in, params_.at(lname(l, "norm")).flat(), c.n1, du,
                                     g.at(lname(l, "norm")).flat()));
  }

  Matrix& demb = g.at("embed");
  for (std::size_t t = 0; t < len; ++t) {
    kernels::axpy(1.0, dx.row(t), demb.row(ex.tokens[t]));
    if (cfg_.positional_embedding) kernels::axpy(1.0, dx.row(t), g.at("pos").row(t));
  }
  return loss;
}

Json checkpoint_json(const Model& m) {
  Json specs = Json::array();
  for (const auto& s : m.layer_specs()) specs.push_back(to_json(s));
  return {{"config", to_json(m.config())}, {"layer_specs", specs}, {"params", to_json(m.params())}};
}

Model model_from_checkpoint(const Json& j) {
  require_known_keys(j, {"config", "layer_specs", "params"}, "checkpoint");
  ModelConfig cfg = model_config_from_json(j.at("config"));
  std::vector<DynamicsSpec> specs;
  for (const auto& s : j.at("layer_specs")) specs.push_back(spec_from_json(s));
  return Model(std::move(cfg), params_from_json(j.at("params")), std::move(specs));
}

}  // namespace cdyn
