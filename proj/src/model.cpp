#include "parmix/model.hpp"

#include <algorithm>
#include <cmath>

namespace parmix {

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

double log_softmax_at(std::span<const double> logits, int index) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - m);
  return logits[index] - m - std::log(sum);
}

}  // namespace parmix
