// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <promptevo/rng.hpp>

#include <json.hpp>

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace promptevo
{

using Json = nlohmann::json;

/// Population-assigned identifier. Monotonically increasing within a run.
struct PromptId
{
    std::uint64_t value = 0;

    friend auto operator<=>(const PromptId&, const PromptId&) = default;
};

std::string to_string(PromptId id);

struct InstanceScore
{
    std::string instance_id;
    double score = 0.0;
    /// Solver failed on this instance; score forced to 0.
    bool flagged = false;
    bool used_tools = false;

    friend bool operator==(const InstanceScore&, const InstanceScore&) = default;
};

/// Decomposition of F = (1-lambda) F_task + lambda F_aux for one prompt on one minibatch.
struct FitnessReport
{
    double f_task = 0.0;
    double f_aux = 0.0;
    double f_total = 0.0;
    std::vector<std::string> minibatch_ids;
    std::vector<InstanceScore> per_instance;
    double lambda_used = 0.0;
    std::string critic_text;
    bool critic_flagged = false;

    /// Order-insensitive hash of minibatch_ids.
    [[nodiscard]] std::string minibatch_key() const;
    [[nodiscard]] std::size_t solves_with_tools() const;

    friend bool operator==(const FitnessReport&, const FitnessReport&) = default;
};

std::string minibatch_key(std::vector<std::string> ids);

/// True when every `<tool>` opener is closed before the next opener (case-insensitive).
bool tool_tags_balanced(std::string_view text);

struct TaskPrompt
{
    PromptId id;
    std::string text;
    std::optional<PromptId> parent_id;
    std::uint64_t birth_generation = 0;
    std::optional<FitnessReport> fitness_cache;

    friend bool operator==(const TaskPrompt&, const TaskPrompt&) = default;
};

struct MutationPrompt
{
    PromptId id;
    std::string text;

    friend bool operator==(const MutationPrompt&, const MutationPrompt&) = default;
};

struct HyperMutationPrompt
{
    PromptId id;
    std::string text;

    friend bool operator==(const HyperMutationPrompt&, const HyperMutationPrompt&) = default;
};

/// Throws InvariantError if the text is empty or has unbalanced tool tags.
void validate_prompt_text(std::string_view text);

/// Operator mix: first-order mutation, zero-order mutation, first-order hyper, zero-order hyper.
struct OperatorWeights
{
    double first_order_mutation = 0.60;
    double zero_order_mutation = 0.20;
    double first_order_hyper = 0.15;
    double zero_order_hyper = 0.05;

    [[nodiscard]] std::array<double, 4> as_array() const
    {
        return {first_order_mutation, zero_order_mutation, first_order_hyper, zero_order_hyper};
    }

    friend bool operator==(const OperatorWeights&, const OperatorWeights&) = default;
};

struct RunConfig
{
    std::size_t population_size = 20;
    std::size_t generations = 200;
    double lambda = 0.25;
    std::size_t minibatch_size = 8;
    OperatorWeights operator_weights;
    std::uint64_t rng_seed = 0;
    bool tool_use_enabled = false;
    std::size_t max_tool_calls = 4;
    std::size_t max_reingest_passes = 3;
    std::string task_description;

    /// Sample one minibatch at the start and reuse it for every tournament.
    bool fixed_minibatch = false;
    std::size_t snapshot_every = 10;
    std::uint64_t tool_timeout_ms = 10'000;
    /// Concurrent solves inside one tournament step.
    std::size_t workers = 1;

    /// Throws ConfigError naming every offending field.
    void validate() const;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Fixed-size population of task prompts plus the global mutation and hyper-mutation pools.
class Population
{
  public:
    Population() = default;

    [[nodiscard]] std::uint64_t generation() const { return _generation; }
    [[nodiscard]] const std::vector<TaskPrompt>& members() const { return _members; }
    [[nodiscard]] const std::vector<MutationPrompt>& mutation_pool() const { return _mutation_pool; }
    [[nodiscard]] const std::vector<HyperMutationPrompt>& hyper_pool() const { return _hyper_pool; }
    [[nodiscard]] std::size_t size() const { return _members.size(); }

    [[nodiscard]] const TaskPrompt& member(PromptId id) const;
    [[nodiscard]] bool contains(PromptId id) const;
    [[nodiscard]] std::size_t index_of(PromptId id) const;

    [[nodiscard]] PromptId allocate_id() { return PromptId {_next_id++}; }
    [[nodiscard]] std::uint64_t next_id() const { return _next_id; }

    /// New prompt with a fresh id born in the current generation.
    TaskPrompt make_prompt(std::string text, std::optional<PromptId> parent);
    MutationPrompt make_mutator(std::string text);

    /// Removes the loser, appends the child in its slot, increments the generation.
    void replace_loser(PromptId loser, TaskPrompt child);
    /// Advances the generation without changing members (failed step).
    void skip_generation() { ++_generation; }

    void set_fitness(PromptId id, FitnessReport report);
    void replace_mutator(std::size_t index, MutationPrompt mutator);

    friend Population new_population(const std::vector<std::string>&, const std::vector<std::string>&,
                                     const std::vector<std::string>&, const RunConfig&);
    friend void to_json(Json&, const Population&);
    friend void from_json(const Json&, Population&);

    friend bool operator==(const Population&, const Population&) = default;

  private:
    std::uint64_t _generation = 0;
    std::uint64_t _next_id = 0;
    std::vector<TaskPrompt> _members;
    std::vector<MutationPrompt> _mutation_pool;
    std::vector<HyperMutationPrompt> _hyper_pool;
};

/// Generation-0 population of exactly N members, filled cyclically from a seeded shuffle of
/// the seed prompts.
Population new_population(const std::vector<std::string>& seed_prompts, const std::vector<std::string>& seed_mutators,
                          const std::vector<std::string>& seed_hypers, const RunConfig& config);

/// Two distinct member indices, uniform over unordered pairs; `first` is the first-sampled.
std::pair<std::size_t, std::size_t> sample_pair(const Population& population, Rng& rng);

void to_json(Json& j, const PromptId& id);
void from_json(const Json& j, PromptId& id);
void to_json(Json& j, const InstanceScore& s);
void from_json(const Json& j, InstanceScore& s);
void to_json(Json& j, const FitnessReport& r);
void from_json(const Json& j, FitnessReport& r);
void to_json(Json& j, const TaskPrompt& p);
void from_json(const Json& j, TaskPrompt& p);
void to_json(Json& j, const MutationPrompt& m);
void from_json(const Json& j, MutationPrompt& m);
void to_json(Json& j, const HyperMutationPrompt& h);
void from_json(const Json& j, HyperMutationPrompt& h);
void to_json(Json& j, const RunConfig& c);
void from_json(const Json& j, RunConfig& c);

/// Canonical text form: sorted keys, fixed indentation.
std::string canonical_dump(const Json& j);

} // namespace promptevo
