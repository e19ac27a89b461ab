#include "cdyn/architectures/presets.hpp"

namespace cdyn {

Vector kernel_feature(FeatureMapKind map, std::span<const double> vec) {
  Vector out(vec.size());
  for (std::size_t r = 0; r < vec.size(); ++r) out[r] = feature_map(map, vec[r]);
  return out;
}

}  // namespace cdyn
