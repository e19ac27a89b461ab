#include <iomanip>
#include <ostream>

#include "cdyn/analysis/analysis.hpp"

namespace cdyn {

Json to_json(const NearZeroReport& r) {
  return {{"epsilon", r.epsilon},
          {"on_normalized", r.on_normalized},
          {"fraction", r.fraction},
          {"per_row_counts", r.per_row_counts},
          {"theoretical_measure", r.theoretical_measure}};
}

Json to_json(const MeasureResult& r) {
  Json j{{"numeric", r.numeric}};
  j["analytic"] = r.analytic ? Json(*r.analytic) : Json(nullptr);
  return j;
}

Json to_json(const ZeroCountProfile& r) {
  Json j{{"threshold", r.threshold},
         {"raw_counts", r.raw_counts},
         {"independent_counts", r.independent_counts}};
  j["bound"] = r.bound ? Json(*r.bound) : Json(nullptr);
  return j;
}

Json to_json(const VarianceReport& r) {
  return {{"analytic", r.analytic},
          {"empirical", r.empirical},
          {"empirical_mean", r.empirical_mean},
          {"mean_stderr", r.mean_stderr},
          {"samples", r.samples},
          {"relative_deviation", r.relative_deviation}};
}

Json to_json(const GrowthReport& r) {
  return {{"cap", r.cap},
          {"bounded", r.bounded},
          {"failing_index", r.failing_index},
          {"classification", r.classification},
          {"trajectory", r.trajectory}};
}

void write_csv(std::ostream& os, const NearZeroReport& r) {
  os << "i,count\n";
  for (std::size_t i = 0; i < r.per_row_counts.size(); ++i)
    os << i << ',' << r.per_row_counts[i] << '\n';
}

void write_csv(std::ostream& os, const ZeroCountProfile& r) {
  os << "i,raw_count,independent_count,bound\n";
  for (std::size_t i = 0; i < r.raw_counts.size(); ++i) {
    os << i << ',' << r.raw_counts[i] << ',';
    if (i < r.independent_counts.size()) os << r.independent_counts[i];
    os << ',';
    if (r.bound) os << *r.bound;
    os << '\n';
  }
}

void write_csv(std::ostream& os, const GrowthReport& r) {
  os << "i,max_abs_normalized\n" << std::setprecision(17);
  for (std::size_t i = 0; i < r.trajectory.size(); ++i) os << i << ',' << r.trajectory[i] << '\n';
}

}  // namespace cdyn
