// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <promptevo/core.hpp>
#include <promptevo/gateway.hpp>

#include <optional>
#include <string>
#include <string_view>

namespace promptevo
{

enum class OperatorKind
{
    first_order_mutation,
    zero_order_mutation,
    first_order_hyper,
    zero_order_hyper,
};

std::string_view to_string(OperatorKind kind);
OperatorKind operator_kind_from_string(std::string_view name);

inline constexpr std::string_view kHintTemplate = "A list of 100 hints:";
inline constexpr std::string_view kMutationFrame =
    "Rewrite the following task prompt according to the instruction. Reply with the rewritten task prompt only.";
inline constexpr std::string_view kHyperMutationFrame =
    "Rewrite the following mutation instruction according to the meta-instruction. Reply with the rewritten "
    "instruction only.";
inline constexpr std::string_view kHintListFrame = "Continue the numbered list of hints, one hint per line.";

/// Categorical draw over (mu1, mu0, nu1, nu0).
OperatorKind choose_operator(const OperatorWeights& weights, Rng& rng);

/// First numbered line of a hint list, else the first non-empty line. Throws MutationFailure.
std::string parse_first_hint(std::string_view completion);

/// Trims whitespace and surrounding markdown fences from a rewritten prompt.
std::string clean_completion(std::string_view completion);

/// The four prompt-rewriting operators. Fresh ids come from the population; inputs are
/// never modified.
class PromptOperators
{
  public:
    explicit PromptOperators(Gateway& gateway);

    /// p' = L(m + p). child.parent_id = p.id.
    TaskPrompt mutate_first_order(const TaskPrompt& prompt, const MutationPrompt& mutator, Population& ids,
                                  TranscriptBuffer* transcript = nullptr) const;
    /// p'' = first hint of L("A list of 100 hints:" + D). No parent.
    TaskPrompt mutate_zero_order(std::string_view task_description, Population& ids,
                                 TranscriptBuffer* transcript = nullptr) const;
    /// m' = L(h + m).
    MutationPrompt hypermutate_first_order(const MutationPrompt& mutator, const HyperMutationPrompt& hyper,
                                           Population& ids, TranscriptBuffer* transcript = nullptr) const;
    /// m'' = "A list of 100 hints:" + D, literally. No model call.
    static MutationPrompt hypermutate_zero_order(std::string_view task_description, Population& ids);

  private:
    Gateway& _gateway;
};

/// Replaces pool[index] with nu1(pool[index], h). Leaves the pool unchanged and returns
/// nullopt when the completion is empty.
std::optional<std::size_t> apply_first_order_hyper(Population& population, std::size_t index,
                                                   const HyperMutationPrompt& hyper, const PromptOperators& ops,
                                                   TranscriptBuffer* transcript = nullptr);
/// Inserts nu0(D) over a uniformly chosen pool slot; returns the slot.
std::size_t apply_zero_order_hyper(Population& population, std::string_view task_description, Rng& rng);

} // namespace promptevo
