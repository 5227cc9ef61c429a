// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <promptevo/core.hpp>
#include <promptevo/datasets.hpp>
#include <promptevo/gateway.hpp>
#include <promptevo/toolchain.hpp>

#include <array>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <vector>

namespace promptevo
{

/// (1 - lambda) * f_task + lambda * f_aux.
double combined_fitness(double f_task, double f_aux, double lambda);

/// Uniform sample of k distinct instances without replacement. Throws ConfigError if k > |train|.
std::vector<TaskInstance> sample_minibatch(const std::vector<TaskInstance>& train, std::size_t k, Rng& rng);

/// Rubric dimensions scored by the critic, in template order.
inline constexpr std::array<std::string_view, 3> kCriticDimensions {"relevance", "logical flow", "clarity"};

/// The critic rubric shipped with the tool; data/critic_template.txt holds the same text.
extern const std::string_view kDefaultCriticTemplate;
inline constexpr std::string_view kCriticStrictSuffix =
    "Your previous reply could not be parsed. Reply with one final line of the form 'TOTAL: <number from 0 to "
    "100>'.";

struct CriticConfig
{
    std::string template_text = std::string(kDefaultCriticTemplate);
    /// Relative weights of relevance, logical flow, clarity.
    std::array<double, 3> weights {1.0, 1.0, 1.0};
};

/// Weighted 1-5 dimension scores mapped onto 0-100.
double rubric_total(const std::array<double, 3>& scores, const std::array<double, 3>& weights);

/// The critic's 0-100 total: the first in-range number after the last "total" marker, else the
/// weighted rubric total when all three dimensions are scored, else the last in-range number.
/// Throws ParseError when nothing qualifies.
double parse_critic_score(std::string_view text, const std::array<double, 3>& weights = {1.0, 1.0, 1.0});

struct TaskScore
{
    double f_task = 0.0;
    std::vector<InstanceScore> per_instance;
};

/// Mean per-instance score over the minibatch.
TaskScore score_task(const TaskPrompt& prompt, std::span<const TaskInstance> minibatch, const SolvePipeline& solver,
                     std::size_t workers = 1, TranscriptBuffer* transcript = nullptr);

struct AuxScore
{
    double f_aux = 0.0;
    std::string critic_text;
    bool flagged = false;
};

/// Critic score with one stricter reprompt; a second parse failure yields 0 and a flag.
AuxScore score_aux(Gateway& gateway, const TaskPrompt& prompt, const CriticConfig& critic,
                   TranscriptBuffer* transcript = nullptr);

/// Anything that can score a prompt on a minibatch. The engine only sees this interface.
class Evaluator
{
  public:
    virtual ~Evaluator() = default;
    virtual FitnessReport evaluate(const TaskPrompt& prompt, std::span<const TaskInstance> minibatch,
                                   TranscriptBuffer* transcript) = 0;
};

/// Full fitness: solver pipeline for F_task and the critic for F_aux, memoized per
/// (prompt text, minibatch id set).
class FitnessEvaluator: public Evaluator
{
  public:
    FitnessEvaluator(Gateway& gateway, const SolvePipeline& solver, CriticConfig critic, double lambda,
                     std::size_t workers = 1);

    FitnessReport evaluate(const TaskPrompt& prompt, std::span<const TaskInstance> minibatch,
                           TranscriptBuffer* transcript) override;

    [[nodiscard]] std::size_t memo_hits() const { return _memo_hits; }

  private:
    Gateway& _gateway;
    const SolvePipeline& _solver;
    CriticConfig _critic;
    double _lambda;
    std::size_t _workers;

    std::mutex _memo_mutex;
    std::map<std::string, std::pair<FitnessReport, TranscriptBuffer>> _memo;
    std::size_t _memo_hits = 0;
};

} // namespace promptevo
