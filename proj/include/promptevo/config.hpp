// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <promptevo/core.hpp>
#include <promptevo/datasets.hpp>
#include <promptevo/engine.hpp>
#include <promptevo/fitness.hpp>
#include <promptevo/gateway.hpp>
#include <promptevo/operators.hpp>
#include <promptevo/toolchain.hpp>

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace promptevo
{

/// Raw key=value pairs after include expansion. Later assignments win.
struct ConfigValues
{
    std::map<std::string, std::string> values;
    /// Directory of the file that set each key; relative paths resolve against it.
    std::map<std::string, std::filesystem::path> origin;
};

/// Parses a flat key=value file. `#` starts a comment; `include = path` splices another
/// file in place. Throws ConfigError on syntax errors, unknown keys and include cycles.
ConfigValues read_config_file(const std::filesystem::path& path);
ConfigValues parse_config_text(std::string_view text, const std::filesystem::path& base_dir);

/// Every key the config format accepts.
const std::vector<std::string>& declared_config_keys();
/// Keys backed by RunConfig fields; only these may be overridden with --set.
const std::vector<std::string>& run_config_keys();

/// Applies "key=value". Throws ConfigError for undeclared or non-RunConfig keys.
void apply_override(ConfigValues& values, std::string_view assignment);

enum class BackendKind
{
    mock,
    live,
};

enum class ExecutorKind
{
    stub,
    sandbox,
    none,
};

struct LiveSettings
{
    std::string url = "https://api.openai.com/v1/chat/completions";
    std::string model;
    /// Per-role model names; unset roles use `model`.
    std::map<Role, std::string> role_models;
    std::chrono::seconds timeout {120};
};

struct ExperimentConfig
{
    RunConfig run;
    std::filesystem::path manifest;
    std::filesystem::path instances;
    double train_fraction = 0.5;
    std::filesystem::path task_prompts;
    std::filesystem::path mutators;
    std::filesystem::path hypermutators;
    std::optional<std::filesystem::path> critic_template;
    std::array<double, 3> critic_weights {1.0, 1.0, 1.0};

    BackendKind backend = BackendKind::mock;
    std::filesystem::path mock_script;
    LiveSettings live;

    ExecutorKind executor = ExecutorKind::stub;
    std::vector<std::string> sandbox_command;
    std::size_t sandbox_recycle_after = 100;

    int gateway_max_attempts = 4;
    std::uint64_t gateway_backoff_ms = 200;
    std::size_t gateway_max_in_flight = 8;
    double gateway_requests_per_second = 0.0;
    std::optional<std::filesystem::path> cache_dir;
};

/// Converts and validates values. Field-level problems are collected into one ConfigError.
ExperimentConfig build_experiment(const ConfigValues& values);
ExperimentConfig load_experiment(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Canonical key=value text with absolute paths; stable across runs and machines that share
/// the same layout.
std::string render_config(const ConfigValues& values);
std::string config_hash(const ConfigValues& values);

/// One prompt per non-empty line group; blank lines separate prompts.
std::vector<std::string> read_prompt_list(const std::filesystem::path& path);

/// Backends, solver, evaluator and operators wired from an experiment config.
class Session
{
  public:
    explicit Session(ExperimentConfig config);

    [[nodiscard]] const ExperimentConfig& config() const { return _config; }
    [[nodiscard]] const std::vector<TaskInstance>& instances() const { return _instances; }
    [[nodiscard]] const std::vector<LoadDiagnostic>& rejected() const { return _rejected; }
    [[nodiscard]] Gateway& gateway() { return *_gateway; }
    [[nodiscard]] SolvePipeline& solver() { return *_solver; }
    [[nodiscard]] FitnessEvaluator& evaluator() { return *_evaluator; }
    [[nodiscard]] const PromptOperators& operators() const { return *_operators; }

    /// The seeded train/test split for `fraction` (config default when absent).
    [[nodiscard]] Split split_for(std::optional<double> fraction = std::nullopt) const;
    [[nodiscard]] Population initial_population() const;

  private:
    ExperimentConfig _config;
    std::vector<TaskInstance> _instances;
    std::vector<LoadDiagnostic> _rejected;
    std::vector<std::string> _seed_prompts;
    std::vector<std::string> _seed_mutators;
    std::vector<std::string> _seed_hypers;
    std::unique_ptr<Gateway> _gateway;
    std::unique_ptr<SolvePipeline> _solver;
    std::unique_ptr<FitnessEvaluator> _evaluator;
    std::unique_ptr<PromptOperators> _operators;
};

} // namespace promptevo
