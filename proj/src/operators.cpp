// SPDX-License-Identifier: Apache-2.0
#include <promptevo/error.hpp>
#include <promptevo/operators.hpp>

#include <spdlog/spdlog.h>

#include <cctype>
#include <regex>

namespace promptevo
{

std::string_view to_string(OperatorKind kind)
{
    switch (kind)
    {
        case OperatorKind::first_order_mutation: return "first_order_mutation";
        case OperatorKind::zero_order_mutation: return "zero_order_mutation";
        case OperatorKind::first_order_hyper: return "first_order_hyper";
        case OperatorKind::zero_order_hyper: return "zero_order_hyper";
    }
    return "unknown";
}

OperatorKind operator_kind_from_string(std::string_view name)
{
    for (auto kind: {OperatorKind::first_order_mutation, OperatorKind::zero_order_mutation,
                     OperatorKind::first_order_hyper, OperatorKind::zero_order_hyper})
        if (to_string(kind) == name)
            return kind;
    throw ParseError("unknown operator kind '" + std::string(name) + "'");
}

OperatorKind choose_operator(const OperatorWeights& weights, Rng& rng)
{
    const auto w = weights.as_array();
    return static_cast<OperatorKind>(rng.categorical(w));
}

namespace
{

std::string_view trim(std::string_view s)
{
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
        s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
        s.remove_suffix(1);
    return s;
}

void require_text(std::string_view text, const char* what)
{
    if (trim(text).empty())
        throw PreconditionError(std::string(what) + " must be non-empty");
}

} // namespace

std::string clean_completion(std::string_view completion)
{
    auto text = trim(completion);
    if (text.starts_with("```"))
    {
        const auto first_newline = text.find('\n');
        text = first_newline == std::string_view::npos ? std::string_view {} : text.substr(first_newline + 1);
        if (const auto fence = text.rfind("```"); fence != std::string_view::npos)
            text = text.substr(0, fence);
        text = trim(text);
    }
    return std::string(text);
}

std::string parse_first_hint(std::string_view completion)
{
    static const std::regex numbered(R"(^\s*\d+\s*[.):]\s*(.*\S)\s*$)");
    std::string first_non_empty;
    std::size_t pos = 0;
    while (pos <= completion.size())
    {
        auto end = completion.find('\n', pos);
        if (end == std::string_view::npos)
            end = completion.size();
        const std::string line(completion.substr(pos, end - pos));
        std::smatch m;
        if (std::regex_match(line, m, numbered))
            return m[1].str();
        if (first_non_empty.empty() && !trim(line).empty())
            first_non_empty = std::string(trim(line));
        pos = end + 1;
    }
    if (first_non_empty.empty())
        throw MutationFailure("hint list completion contains no hint");
    return first_non_empty;
}

PromptOperators::PromptOperators(Gateway& gateway): _gateway(gateway)
{
}

TaskPrompt PromptOperators::mutate_first_order(const TaskPrompt& prompt, const MutationPrompt& mutator,
                                               Population& ids, TranscriptBuffer* transcript) const
{
    require_text(prompt.text, "task prompt");
    require_text(mutator.text, "mutation prompt");
    auto request = make_request(Role::mutator, std::string(kMutationFrame),
                                mutator.text + std::string(kPayloadSeparator) + prompt.text);
    auto text = clean_completion(_gateway.complete(request, transcript).text);
    if (text.empty())
        throw MutationFailure("first-order mutation returned an empty prompt");
    if (!tool_tags_balanced(text))
        throw MutationFailure("first-order mutation produced unbalanced tool tags");
    return ids.make_prompt(std::move(text), prompt.id);
}

TaskPrompt PromptOperators::mutate_zero_order(std::string_view task_description, Population& ids,
                                              TranscriptBuffer* transcript) const
{
    require_text(task_description, "task description");
    auto request = make_request(Role::mutator, std::string(kHintListFrame),
                                std::string(kHintTemplate) + " " + std::string(task_description));
    auto hint = parse_first_hint(_gateway.complete(request, transcript).text);
    if (!tool_tags_balanced(hint))
        throw MutationFailure("zero-order mutation produced unbalanced tool tags");
    return ids.make_prompt(std::move(hint), std::nullopt);
}

MutationPrompt PromptOperators::hypermutate_first_order(const MutationPrompt& mutator,
                                                        const HyperMutationPrompt& hyper, Population& ids,
                                                        TranscriptBuffer* transcript) const
{
    require_text(mutator.text, "mutation prompt");
    require_text(hyper.text, "hyper-mutation prompt");
    auto request = make_request(Role::hypermutator, std::string(kHyperMutationFrame),
                                hyper.text + std::string(kPayloadSeparator) + mutator.text);
    auto text = clean_completion(_gateway.complete(request, transcript).text);
    if (text.empty())
        throw MutationFailure("first-order hyper-mutation returned an empty mutation prompt");
    return ids.make_mutator(std::move(text));
}

MutationPrompt PromptOperators::hypermutate_zero_order(std::string_view task_description, Population& ids)
{
    require_text(task_description, "task description");
    return ids.make_mutator(std::string(kHintTemplate) + " " + std::string(task_description));
}

std::optional<std::size_t> apply_first_order_hyper(Population& population, std::size_t index,
                                                   const HyperMutationPrompt& hyper, const PromptOperators& ops,
                                                   TranscriptBuffer* transcript)
{
    const auto original = population.mutation_pool().at(index);
    try
    {
        population.replace_mutator(index, ops.hypermutate_first_order(original, hyper, population, transcript));
        return index;
    }
    catch (const MutationFailure& e)
    {
        spdlog::warn("hyper-mutation left pool unchanged: {}", e.what());
        return std::nullopt;
    }
}

std::size_t apply_zero_order_hyper(Population& population, std::string_view task_description, Rng& rng)
{
    if (population.mutation_pool().empty())
        throw InvariantError("mutation pool is empty");
    const auto slot = static_cast<std::size_t>(rng.uniform_index(population.mutation_pool().size()));
    population.replace_mutator(slot, PromptOperators::hypermutate_zero_order(task_description, population));
    return slot;
}

} // namespace promptevo
