// SPDX-License-Identifier: Apache-2.0
#include <promptevo/core.hpp>
#include <promptevo/error.hpp>
#include <promptevo/hashing.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <sstream>

namespace promptevo
{

std::string to_string(PromptId id)
{
    return std::to_string(id.value);
}

std::string minibatch_key(std::vector<std::string> ids)
{
    std::sort(ids.begin(), ids.end());
    ContentHasher hasher;
    for (const auto& id: ids)
        hasher.field(id);
    return hasher.hex_digest();
}

std::string FitnessReport::minibatch_key() const
{
    return promptevo::minibatch_key(minibatch_ids);
}

std::size_t FitnessReport::solves_with_tools() const
{
    return static_cast<std::size_t>(
        std::count_if(per_instance.begin(), per_instance.end(), [](const auto& s) { return s.used_tools; }));
}

namespace
{

bool iequals_at(std::string_view text, std::size_t pos, std::string_view token)
{
    if (pos + token.size() > text.size())
        return false;
    for (std::size_t i = 0; i < token.size(); ++i)
        if (std::tolower(static_cast<unsigned char>(text[pos + i])) != token[i])
            return false;
    return true;
}

} // namespace

bool tool_tags_balanced(std::string_view text)
{
    bool open = false;
    for (std::size_t i = 0; i < text.size(); ++i)
    {
        if (text[i] != '<')
            continue;
        if (iequals_at(text, i, "<tool>"))
        {
            if (open)
                return false;
            open = true;
        }
        else if (iequals_at(text, i, "</tool>"))
        {
            if (!open)
                return false;
            open = false;
        }
    }
    return !open;
}

void validate_prompt_text(std::string_view text)
{
    if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); }))
        throw InvariantError("prompt text must be non-empty");
    if (!tool_tags_balanced(text))
        throw InvariantError("prompt text has unbalanced <tool> tags");
}

void RunConfig::validate() const
{
    std::vector<std::string> problems;
    if (population_size < 2)
        problems.emplace_back("population_size: must be >= 2");
    if (!(lambda >= 0.0 && lambda <= 1.0))
        problems.emplace_back("lambda: must be in [0,1]");
    if (minibatch_size < 1)
        problems.emplace_back("minibatch_size: must be >= 1");
    const auto w = operator_weights.as_array();
    if (std::any_of(w.begin(), w.end(), [](double x) { return !(x >= 0.0); }))
        problems.emplace_back("operator_weights: must be non-negative");
    else if (std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0) > 1e-9)
        problems.emplace_back("operator_weights: must sum to 1");
    if ((operator_weights.zero_order_mutation > 0.0 || operator_weights.zero_order_hyper > 0.0) &&
        task_description.empty())
        problems.emplace_back("task_description: required when zero-order operators have positive weight");
    if (max_tool_calls < 1)
        problems.emplace_back("max_tool_calls: must be positive");
    if (max_reingest_passes < 1)
        problems.emplace_back("max_reingest_passes: must be positive");
    if (snapshot_every < 1)
        problems.emplace_back("snapshot_every: must be positive");
    if (workers < 1)
        problems.emplace_back("workers: must be positive");
    if (tool_timeout_ms < 1)
        problems.emplace_back("tool_timeout_ms: must be positive");
    if (problems.empty())
        return;
    std::ostringstream msg;
    msg << "invalid run configuration:";
    for (const auto& p: problems)
        msg << "\n  " << p;
    throw ConfigError(msg.str());
}

const TaskPrompt& Population::member(PromptId id) const
{
    return _members[index_of(id)];
}

bool Population::contains(PromptId id) const
{
    return std::any_of(_members.begin(), _members.end(), [id](const auto& m) { return m.id == id; });
}

std::size_t Population::index_of(PromptId id) const
{
    auto it = std::find_if(_members.begin(), _members.end(), [id](const auto& m) { return m.id == id; });
    if (it == _members.end())
        throw StaleHandleError("prompt " + to_string(id) + " is not a population member");
    return static_cast<std::size_t>(it - _members.begin());
}

TaskPrompt Population::make_prompt(std::string text, std::optional<PromptId> parent)
{
    validate_prompt_text(text);
    return TaskPrompt {
        .id = allocate_id(),
        .text = std::move(text),
        .parent_id = parent,
        .birth_generation = _generation,
        .fitness_cache = std::nullopt,
    };
}

MutationPrompt Population::make_mutator(std::string text)
{
    if (text.empty())
        throw InvariantError("mutation prompt text must be non-empty");
    return MutationPrompt {allocate_id(), std::move(text)};
}

void Population::replace_loser(PromptId loser, TaskPrompt child)
{
    const auto slot = index_of(loser);
    if (child.id.value >= _next_id || contains(child.id))
        throw InvariantError("child id " + to_string(child.id) + " is not fresh");
    if (child.parent_id && child.parent_id->value >= child.id.value)
        throw InvariantError("child parent must predate the child");
    validate_prompt_text(child.text);
    _members[slot] = std::move(child);
    ++_generation;
}

void Population::set_fitness(PromptId id, FitnessReport report)
{
    _members[index_of(id)].fitness_cache = std::move(report);
}

void Population::replace_mutator(std::size_t index, MutationPrompt mutator)
{
    if (index >= _mutation_pool.size())
        throw PreconditionError("mutation pool index out of range");
    if (mutator.text.empty())
        throw InvariantError("mutation prompt text must be non-empty");
    _mutation_pool[index] = std::move(mutator);
}

Population new_population(const std::vector<std::string>& seed_prompts, const std::vector<std::string>& seed_mutators,
                          const std::vector<std::string>& seed_hypers, const RunConfig& config)
{
    config.validate();
    if (seed_prompts.empty())
        throw ConfigError("seed task prompt universe is empty");
    if (seed_mutators.empty())
        throw ConfigError("seed mutation prompt universe is empty");
    if (seed_hypers.empty() && config.operator_weights.first_order_hyper > 0.0)
        throw ConfigError("first-order hyper-mutation needs a non-empty hyper-mutation universe");

    Population pop;
    auto rng = Rng(config.rng_seed).derive("population.init");
    std::vector<std::size_t> order(seed_prompts.size());
    std::iota(order.begin(), order.end(), std::size_t {0});
    rng.shuffle(order);
    for (std::size_t i = 0; i < config.population_size; ++i)
        pop._members.push_back(pop.make_prompt(seed_prompts[order[i % order.size()]], std::nullopt));
    for (const auto& text: seed_mutators)
        pop._mutation_pool.push_back(pop.make_mutator(text));
    for (const auto& text: seed_hypers)
    {
        if (text.empty())
            throw ConfigError("hyper-mutation prompt text must be non-empty");
        pop._hyper_pool.push_back(HyperMutationPrompt {pop.allocate_id(), text});
    }
    return pop;
}

std::pair<std::size_t, std::size_t> sample_pair(const Population& population, Rng& rng)
{
    const auto n = population.size();
    if (n < 2)
        throw InvariantError("sample_pair needs at least two members");
    const auto first = static_cast<std::size_t>(rng.uniform_index(n));
    auto second = static_cast<std::size_t>(rng.uniform_index(n - 1));
    if (second >= first)
        ++second;
    return {first, second};
}

// --- serialization --------------------------------------------------------

void to_json(Json& j, const PromptId& id)
{
    j = id.value;
}

void from_json(const Json& j, PromptId& id)
{
    id.value = j.get<std::uint64_t>();
}

void to_json(Json& j, const InstanceScore& s)
{
    j = Json {{"id", s.instance_id}, {"score", s.score}, {"flagged", s.flagged}, {"used_tools", s.used_tools}};
}

void from_json(const Json& j, InstanceScore& s)
{
    s.instance_id = j.at("id").get<std::string>();
    s.score = j.at("score").get<double>();
    s.flagged = j.at("flagged").get<bool>();
    s.used_tools = j.at("used_tools").get<bool>();
}

void to_json(Json& j, const FitnessReport& r)
{
    j = Json {
        {"f_task", r.f_task},
        {"f_aux", r.f_aux},
        {"f_total", r.f_total},
        {"minibatch_ids", r.minibatch_ids},
        {"per_instance", r.per_instance},
        {"lambda", r.lambda_used},
        {"critic_text", r.critic_text},
        {"critic_flagged", r.critic_flagged},
    };
}

void from_json(const Json& j, FitnessReport& r)
{
    r.f_task = j.at("f_task").get<double>();
    r.f_aux = j.at("f_aux").get<double>();
    r.f_total = j.at("f_total").get<double>();
    r.minibatch_ids = j.at("minibatch_ids").get<std::vector<std::string>>();
    r.per_instance = j.at("per_instance").get<std::vector<InstanceScore>>();
    r.lambda_used = j.at("lambda").get<double>();
    r.critic_text = j.at("critic_text").get<std::string>();
    r.critic_flagged = j.at("critic_flagged").get<bool>();
}

void to_json(Json& j, const TaskPrompt& p)
{
    j = Json {{"id", p.id}, {"text", p.text}, {"birth_generation", p.birth_generation}};
    j["parent_id"] = p.parent_id ? Json(p.parent_id->value) : Json(nullptr);
    j["fitness"] = p.fitness_cache ? Json(*p.fitness_cache) : Json(nullptr);
}

void from_json(const Json& j, TaskPrompt& p)
{
    p.id = j.at("id").get<PromptId>();
    p.text = j.at("text").get<std::string>();
    p.birth_generation = j.at("birth_generation").get<std::uint64_t>();
    p.parent_id = j.at("parent_id").is_null() ? std::nullopt : std::optional(j.at("parent_id").get<PromptId>());
    p.fitness_cache =
        j.at("fitness").is_null() ? std::nullopt : std::optional(j.at("fitness").get<FitnessReport>());
}

void to_json(Json& j, const MutationPrompt& m)
{
    j = Json {{"id", m.id}, {"text", m.text}};
}

void from_json(const Json& j, MutationPrompt& m)
{
    m.id = j.at("id").get<PromptId>();
    m.text = j.at("text").get<std::string>();
}

void to_json(Json& j, const HyperMutationPrompt& h)
{
    j = Json {{"id", h.id}, {"text", h.text}};
}

void from_json(const Json& j, HyperMutationPrompt& h)
{
    h.id = j.at("id").get<PromptId>();
    h.text = j.at("text").get<std::string>();
}

void to_json(Json& j, const Population& p)
{
    j = Json {
        {"generation", p._generation},
        {"next_id", p._next_id},
        {"members", p._members},
        {"mutation_pool", p._mutation_pool},
        {"hyper_pool", p._hyper_pool},
    };
}

void from_json(const Json& j, Population& p)
{
    p._generation = j.at("generation").get<std::uint64_t>();
    p._next_id = j.at("next_id").get<std::uint64_t>();
    p._members = j.at("members").get<std::vector<TaskPrompt>>();
    p._mutation_pool = j.at("mutation_pool").get<std::vector<MutationPrompt>>();
    p._hyper_pool = j.at("hyper_pool").get<std::vector<HyperMutationPrompt>>();
    for (std::size_t i = 0; i < p._members.size(); ++i)
    {
        validate_prompt_text(p._members[i].text);
        for (std::size_t k = i + 1; k < p._members.size(); ++k)
            if (p._members[i].id == p._members[k].id)
                throw InvariantError("duplicate member id in population snapshot");
        if (p._members[i].id.value >= p._next_id)
            throw InvariantError("member id exceeds next_id in population snapshot");
    }
}

void to_json(Json& j, const RunConfig& c)
{
    const auto w = c.operator_weights.as_array();
    j = Json {
        {"population_size", c.population_size},
        {"generations", c.generations},
        {"lambda", c.lambda},
        {"minibatch_size", c.minibatch_size},
        {"operator_weights", w},
        {"rng_seed", c.rng_seed},
        {"tool_use_enabled", c.tool_use_enabled},
        {"max_tool_calls", c.max_tool_calls},
        {"max_reingest_passes", c.max_reingest_passes},
        {"task_description", c.task_description},
        {"fixed_minibatch", c.fixed_minibatch},
        {"snapshot_every", c.snapshot_every},
        {"tool_timeout_ms", c.tool_timeout_ms},
        {"workers", c.workers},
    };
}

void from_json(const Json& j, RunConfig& c)
{
    c.population_size = j.at("population_size").get<std::size_t>();
    c.generations = j.at("generations").get<std::size_t>();
    c.lambda = j.at("lambda").get<double>();
    c.minibatch_size = j.at("minibatch_size").get<std::size_t>();
    const auto w = j.at("operator_weights").get<std::array<double, 4>>();
    c.operator_weights = OperatorWeights {w[0], w[1], w[2], w[3]};
    c.rng_seed = j.at("rng_seed").get<std::uint64_t>();
    c.tool_use_enabled = j.at("tool_use_enabled").get<bool>();
    c.max_tool_calls = j.at("max_tool_calls").get<std::size_t>();
    c.max_reingest_passes = j.at("max_reingest_passes").get<std::size_t>();
    c.task_description = j.at("task_description").get<std::string>();
    c.fixed_minibatch = j.at("fixed_minibatch").get<bool>();
    c.snapshot_every = j.at("snapshot_every").get<std::size_t>();
    c.tool_timeout_ms = j.at("tool_timeout_ms").get<std::uint64_t>();
    c.workers = j.at("workers").get<std::size_t>();
}

std::string canonical_dump(const Json& j)
{
    return j.dump(2, ' ', false, Json::error_handler_t::strict);
}

} // namespace promptevo
