#include "ckd/common.hpp"

#include <algorithm>
#include <cstdio>

namespace ckd {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

void softmax_inplace(std::span<double> logits, double temperature) {
  if (logits.empty()) return;
  if (temperature <= 0) throw ConfigError("softmax temperature must be > 0");
  double mx = logits[0] / temperature;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    logits[i] /= temperature;
    mx = std::max(mx, logits[i]);
  }
  double z = 0;
  for (double& v : logits) {
    v = std::exp(v - mx);
    z += v;
  }
  for (double& v : logits) v /= z;
}

int argmax_lowest(std::span<const double> row) {
  if (row.empty()) throw ConfigError("argmax of empty row");
  int best = 0;
  for (int i = 1; i < static_cast<int>(row.size()); ++i)
    if (row[i] > row[best]) best = i;
  return best;
}

double l2_norm(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace ckd
