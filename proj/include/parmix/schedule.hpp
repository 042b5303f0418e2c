#pragma once

#include <cstdint>
#include <string>

namespace parmix {

enum class ScheduleShape { kConstant, kLinear, kExp, kSigmoid };

ScheduleShape parse_schedule_shape(const std::string& name);
std::string to_string(ScheduleShape shape);

/// Mixing-probability schedule: warm-up steps of pure teacher-forcing
/// followed by a monotone ramp to p_max at total_steps.
struct MixingConfig {
  double p_max = 0.0;
  int passes = 1;
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 1;
  ScheduleShape shape = ScheduleShape::kExp;

  void validate() const;
};

/// Mixing probability at a training step.
///
/// Zero for step < warmup_steps; nondecreasing; clamped to the step-S value
/// beyond total_steps. With u = clamp((step-W)/(S-W), 0, 1):
///   linear:   p_max * u
///   exp:      p_max * (1 - alpha^(step-W)),  alpha = 0.01^(1/(S-W))
///   sigmoid:  p_max * (sig(12u-6) - sig(-6)) / (sig(6) - sig(-6))
///   constant: p_max for step >= W
/// The exp ramp reaches 0.99*p_max at step S; linear and sigmoid reach p_max
/// exactly.
double mixing_prob(const MixingConfig& config, std::int64_t step);

}  // namespace parmix
