#include "parmix/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace parmix {

ScheduleShape parse_schedule_shape(const std::string& name) {
  if (name == "constant") return ScheduleShape::kConstant;
  if (name == "linear") return ScheduleShape::kLinear;
  if (name == "exp") return ScheduleShape::kExp;
  if (name == "sigmoid") return ScheduleShape::kSigmoid;
  throw std::invalid_argument("unknown schedule shape: " + name);
}

std::string to_string(ScheduleShape shape) {
  switch (shape) {
    case ScheduleShape::kConstant: return "constant";
    case ScheduleShape::kLinear: return "linear";
    case ScheduleShape::kExp: return "exp";
    case ScheduleShape::kSigmoid: return "sigmoid";
  }
  return "?";
}

void MixingConfig::validate() const {
  if (p_max < 0.0 || p_max > 1.0)
    throw std::invalid_argument("mixing.p_max must be in [0,1]");
  if (passes < 1) throw std::invalid_argument("mixing.passes must be >= 1");
  if (warmup_steps < 0)
    throw std::invalid_argument("mixing.warmup_steps must be >= 0");
  if (total_steps <= warmup_steps)
    throw std::invalid_argument("mixing.total_steps must exceed warmup_steps");
}

namespace {
double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

double mixing_prob(const MixingConfig& config, std::int64_t step) {
  const std::int64_t W = config.warmup_steps;
  const std::int64_t S = config.total_steps;
  if (step < W) return 0.0;
  if (config.shape == ScheduleShape::kConstant) return config.p_max;

  // Hold at the step-S value beyond the schedule horizon.
  const std::int64_t s = std::min(step, S);
  const double span = static_cast<double>(S - W);
  const double u = static_cast<double>(s - W) / span;

  switch (config.shape) {
    case ScheduleShape::kLinear:
      return config.p_max * u;
    case ScheduleShape::kExp: {
      const double alpha = std::pow(0.01, 1.0 / span);
      return config.p_max * (1.0 - std::pow(alpha, static_cast<double>(s - W)));
    }
    case ScheduleShape::kSigmoid: {
      const double lo = logistic(-6.0);
      const double hi = logistic(6.0);
      return config.p_max * (logistic(12.0 * u - 6.0) - lo) / (hi - lo);
    }
    case ScheduleShape::kConstant:
      break;  // handled above
  }
  return config.p_max;
}

}  // namespace parmix
