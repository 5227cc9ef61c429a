// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <promptevo/core.hpp>
#include <promptevo/datasets.hpp>
#include <promptevo/fitness.hpp>
#include <promptevo/operators.hpp>

#include <optional>
#include <string>
#include <vector>

namespace promptevo
{

/// Operator attempts per step after the first; each attempt redraws the operator.
inline constexpr std::size_t kMutationRetries = 3;

struct GenerationEvent
{
    /// Generation at which the step started.
    std::uint64_t generation = 0;
    PromptId first;
    PromptId second;
    PromptId winner;
    PromptId loser;
    OperatorKind op = OperatorKind::first_order_mutation;
    /// Absent when every mutation attempt failed and the loser survived.
    std::optional<PromptId> child;
    double first_fitness = 0.0;
    double second_fitness = 0.0;
    std::string minibatch_key;
    bool reused_cache = false;

    /// Pool slot touched by a hyper-mutation, if any.
    std::optional<std::size_t> mutator_slot;
    std::size_t attempts = 1;
    bool mutation_failed = false;
    bool evaluation_flagged = false;

    /// Over members with a cached fitness, after the step.
    double best_f_total = 0.0;
    double mean_f_total = 0.0;
    double best_f_task = 0.0;
    double mean_f_task = 0.0;
    /// Fraction of this step's contestant solves with at least one executed tool.
    double tool_use_fraction = 0.0;

    [[nodiscard]] double winner_fitness() const { return winner == first ? first_fitness : second_fitness; }
    [[nodiscard]] double loser_fitness() const { return loser == first ? first_fitness : second_fitness; }

    friend bool operator==(const GenerationEvent&, const GenerationEvent&) = default;
};

void to_json(Json& j, const GenerationEvent& e);
void from_json(const Json& j, GenerationEvent& e);

/// Winner rule: the first-sampled contestant wins unless strictly beaten.
inline bool first_sampled_wins(double first, double second)
{
    return first >= second;
}

/// Everything a tournament step reads besides the population.
struct EngineContext
{
    const RunConfig& config;
    Evaluator& evaluator;
    const PromptOperators& operators;
    /// Train set A; minibatches are drawn from here only.
    const std::vector<TaskInstance>& train;
};

/// The minibatch reused by every step in fixed-minibatch mode.
std::vector<TaskInstance> fixed_minibatch_for(const RunConfig& config, const std::vector<TaskInstance>& train);

/// One tournament: sample a pair, score both on a shared minibatch, mutate the winner and
/// replace the loser. Mutates `population` in place.
GenerationEvent run_tournament_step(Population& population, const EngineContext& ctx, Rng& rng,
                                    TranscriptBuffer* transcript = nullptr);

/// Receives each completed step; used for run-directory persistence.
class StepObserver
{
  public:
    virtual ~StepObserver() = default;
    virtual void on_step(const Population& after, const GenerationEvent& event, const TranscriptBuffer& transcript) = 0;
    /// Called before a backend outage propagates out of evolve.
    virtual void on_abort(const Population& current) = 0;
};

struct BestPrompt
{
    TaskPrompt prompt;
    FitnessReport report;
};

/// Member with maximal f_total on the evaluation set; ties go to the lowest id.
BestPrompt best(const Population& population, const std::vector<TaskInstance>& eval_set, Evaluator& evaluator,
                TranscriptBuffer* transcript = nullptr);

struct EvolveResult
{
    BestPrompt best;
    std::vector<GenerationEvent> history;
    Population final_population;
};

/// Runs tournament steps until the population has seen config.generations steps. Step g draws
/// its randomness from the stream derived from (seed, "step", g), so a run resumed from any
/// snapshot continues exactly as the uninterrupted run would. `history` holds the events
/// already recorded before `population.generation()`.
EvolveResult evolve(Population population, const EngineContext& ctx, std::vector<GenerationEvent> history = {},
                    StepObserver* observer = nullptr, const std::vector<TaskInstance>* eval_set = nullptr);

} // namespace promptevo
