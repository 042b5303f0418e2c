#include "parmix/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace parmix {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& section,
                const std::set<std::string>& allowed) {
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (!allowed.contains(key))
      throw std::invalid_argument("config: unknown key " +
                                  (section.empty() ? key : section + "." + key));
  }
}

const json& require(const json& obj, const std::string& section,
                    const std::string& key) {
  auto it = obj.find(key);
  if (it == obj.end())
    throw std::invalid_argument("config: missing key " + section + "." + key);
  return *it;
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is)
    throw std::invalid_argument("config: cannot open file " + path);
  json root;
  try {
    root = json::parse(is);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config: " + path + ": " + e.what());
  }

  check_keys(root, "", {"task", "model", "mixing", "run"});
  const json& task = require(root, "", "task");
  const json& mixing = require(root, "", "mixing");
  const json& run = require(root, "", "run");

  RunConfig config;

  check_keys(task, "task",
             {"kind", "vocab_size", "min_input_len", "max_input_len",
              "train_size", "eval_size", "repeats", "seed"});
  config.task.kind = parse_task_kind(require(task, "task", "kind").get<std::string>());
  config.task.vocab_size = require(task, "task", "vocab_size").get<int>();
  config.task.min_input_len = require(task, "task", "min_input_len").get<int>();
  config.task.max_input_len = require(task, "task", "max_input_len").get<int>();
  config.task.train_size = require(task, "task", "train_size").get<int>();
  config.task.eval_size = require(task, "task", "eval_size").get<int>();
  if (task.contains("repeats")) config.task.repeats = task["repeats"].get<int>();

  if (root.contains("model")) {
    const json& model = root["model"];
    check_keys(model, "model",
               {"embed_dim", "heads", "ff_dim", "layers", "max_positions"});
    if (model.contains("embed_dim")) config.model.embed = model["embed_dim"].get<int>();
    if (model.contains("heads")) config.model.heads = model["heads"].get<int>();
    if (model.contains("ff_dim")) config.model.ff = model["ff_dim"].get<int>();
    if (model.contains("layers")) config.model.layers = model["layers"].get<int>();
    if (model.contains("max_positions"))
      config.model.max_positions = model["max_positions"].get<int>();
  }

  check_keys(mixing, "mixing",
             {"p_max", "passes", "warmup_steps", "total_steps", "shape"});
  config.mixing.p_max = require(mixing, "mixing", "p_max").get<double>();
  config.mixing.passes = require(mixing, "mixing", "passes").get<int>();
  config.mixing.warmup_steps =
      require(mixing, "mixing", "warmup_steps").get<std::int64_t>();
  config.mixing.total_steps =
      require(mixing, "mixing", "total_steps").get<std::int64_t>();
  config.mixing.shape =
      parse_schedule_shape(require(mixing, "mixing", "shape").get<std::string>());

  check_keys(run, "run",
             {"method", "batch_size", "total_steps", "eval_interval", "seed",
              "output_dir"});
  config.method = parse_method(require(run, "run", "method").get<std::string>());
  config.batch_size = require(run, "run", "batch_size").get<int>();
  config.total_steps = require(run, "run", "total_steps").get<std::int64_t>();
  config.eval_interval = require(run, "run", "eval_interval").get<std::int64_t>();
  config.seed = require(run, "run", "seed").get<std::uint64_t>();
  config.output_dir = require(run, "run", "output_dir").get<std::string>();

  config.task.seed = task.contains("seed") ? task["seed"].get<std::uint64_t>()
                                           : config.seed;
  config.validate();
  return config;
}

void apply_seed_overrides(RunConfig& config, std::optional<std::uint64_t> cli_seed) {
  const bool task_seed_tracks_run = config.task.seed == config.seed;
  if (const char* env = std::getenv("PARMIX_SEED")) {
    config.seed = std::strtoull(env, nullptr, 10);
  }
  if (cli_seed) config.seed = *cli_seed;
  if (task_seed_tracks_run) config.task.seed = config.seed;
}

}  // namespace parmix
