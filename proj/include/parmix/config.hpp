#pragma once

#include <optional>
#include <string>

#include "parmix/harness.hpp"

namespace parmix {

/// Loads a RunConfig from a JSON file with sections `task`, `model`,
/// `mixing`, `run`. Unknown keys and missing required keys are errors that
/// name the offending key. `model` keys are optional (architecture
/// defaults); `task.repeats` defaults to 2 and `task.seed` to the run seed.
RunConfig load_run_config(const std::string& path);

/// Seed precedence: CLI flag beats the PARMIX_SEED environment variable,
/// which beats the config file.
void apply_seed_overrides(RunConfig& config, std::optional<std::uint64_t> cli_seed);

}  // namespace parmix
