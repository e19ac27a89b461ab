#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <random>

#include "cdyn/errors.hpp"
#include "cdyn/verify/verify.hpp"

namespace cdyn::verify {

namespace {

// Identity readout with a constant scalar decay: both paths are defined and
// the dense path pays for evolving every stored key.
HeadDynamics bench_head(std::size_t len, std::size_t n, std::size_t dv, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  HeadDynamics h;
  h.kind = EvolutionKind::scalar;
  h.queries = Matrix(len, n);
  h.keys = Matrix(len, n);
  h.values = Matrix(len, dv);
  for (auto* m : {&h.queries, &h.keys, &h.values})
    for (double& v : m->flat()) v = g(rng);
  h.lambda.assign(len, 0.999);
  h.scale.assign(len, 1.0 / std::sqrt(static_cast<double>(n)));
  return h;
}

template <class F>
double median_seconds(std::size_t repeats, F&& f) {
  f();  // warm-up
  std::vector<double> t;
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

}  // namespace

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ConfigError("loglog_slope: need >= 2 paired points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= double(x.size());
  my /= double(x.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

BenchReport run_bench(const BenchOptions& opts, const std::function<void(const BenchRow&)>& progress) {
  if (opts.lengths.size() < 2 || opts.repeats == 0) throw ConfigError("bench: need >= 2 lengths and >= 1 repeat");
  BenchReport rep;
  volatile double sink = 0.0;
  for (std::size_t len : opts.lengths) {
    const HeadDynamics h = bench_head(len, opts.n, opts.d_v, sub_seed(opts.seed, len));
    BenchRow row;
    row.length = len;
    row.dense_seconds = median_seconds(opts.repeats, [&] { sink = sink + forward_dense(h)(len - 1, 0); });
    row.recurrent_seconds = median_seconds(opts.repeats, [&] { sink = sink + forward_recurrent(h)(len - 1, 0); });
    rep.rows.push_back(row);
    if (progress) progress(row);
  }
  const std::size_t k = std::min(opts.fit_points, rep.rows.size());
  std::vector<double> x, yd, yr;
  for (std::size_t i = rep.rows.size() - k; i < rep.rows.size(); ++i) {
    x.push_back(double(rep.rows[i].length));
    yd.push_back(rep.rows[i].dense_seconds);
    yr.push_back(rep.rows[i].recurrent_seconds);
  }
  rep.dense_slope = loglog_slope(x, yd);
  rep.recurrent_slope = loglog_slope(x, yr);
  rep.passed = rep.dense_slope >= 1.7 && rep.recurrent_slope <= 1.3;
  return rep;
}

void write_csv(std::ostream& os, const BenchReport& r) {
  os << "length,dense_seconds,recurrent_seconds\n";
  os.precision(9);
  for (const auto& row : r.rows) os << row.length << ',' << row.dense_seconds << ',' << row.recurrent_seconds << '\n';
}

Json to_json(const BenchReport& r) {
  Json rows = Json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"length", row.length}, {"dense_seconds", row.dense_seconds},
                    {"recurrent_seconds", row.recurrent_seconds}});
  return {{"rows", rows}, {"dense_slope", r.dense_slope}, {"recurrent_slope", r.recurrent_slope},
          {"passed", r.passed}};
}

}  // namespace cdyn::verify
