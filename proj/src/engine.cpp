// SPDX-License-Identifier: Apache-2.0
#include <promptevo/engine.hpp>
#include <promptevo/error.hpp>
#include <promptevo/parallel.hpp>

#include <spdlog/spdlog.h>

#include <algorithm>

namespace promptevo
{

void to_json(Json& j, const GenerationEvent& e)
{
    j = Json {
        {"generation", e.generation},
        {"first", e.first},
        {"second", e.second},
        {"winner", e.winner},
        {"loser", e.loser},
        {"op", std::string(to_string(e.op))},
        {"child", e.child ? Json(*e.child) : Json(nullptr)},
        {"first_fitness", e.first_fitness},
        {"second_fitness", e.second_fitness},
        {"minibatch_key", e.minibatch_key},
        {"reused_cache", e.reused_cache},
        {"mutator_slot", e.mutator_slot ? Json(*e.mutator_slot) : Json(nullptr)},
        {"attempts", e.attempts},
        {"mutation_failed", e.mutation_failed},
        {"evaluation_flagged", e.evaluation_flagged},
        {"best_f_total", e.best_f_total},
        {"mean_f_total", e.mean_f_total},
        {"best_f_task", e.best_f_task},
        {"mean_f_task", e.mean_f_task},
        {"tool_use_fraction", e.tool_use_fraction},
    };
}

void from_json(const Json& j, GenerationEvent& e)
{
    e.generation = j.at("generation").get<std::uint64_t>();
    e.first = j.at("first").get<PromptId>();
    e.second = j.at("second").get<PromptId>();
    e.winner = j.at("winner").get<PromptId>();
    e.loser = j.at("loser").get<PromptId>();
    e.op = operator_kind_from_string(j.at("op").get<std::string>());
    e.child = j.at("child").is_null() ? std::nullopt : std::optional(j.at("child").get<PromptId>());
    e.first_fitness = j.at("first_fitness").get<double>();
    e.second_fitness = j.at("second_fitness").get<double>();
    e.minibatch_key = j.at("minibatch_key").get<std::string>();
    e.reused_cache = j.at("reused_cache").get<bool>();
    e.mutator_slot =
        j.at("mutator_slot").is_null() ? std::nullopt : std::optional(j.at("mutator_slot").get<std::size_t>());
    e.attempts = j.at("attempts").get<std::size_t>();
    e.mutation_failed = j.at("mutation_failed").get<bool>();
    e.evaluation_flagged = j.at("evaluation_flagged").get<bool>();
    e.best_f_total = j.at("best_f_total").get<double>();
    e.mean_f_total = j.at("mean_f_total").get<double>();
    e.best_f_task = j.at("best_f_task").get<double>();
    e.mean_f_task = j.at("mean_f_task").get<double>();
    e.tool_use_fraction = j.at("tool_use_fraction").get<double>();
}

std::vector<TaskInstance> fixed_minibatch_for(const RunConfig& config, const std::vector<TaskInstance>& train)
{
    auto rng = Rng(config.rng_seed).derive("minibatch.fixed");
    return sample_minibatch(train, config.minibatch_size, rng);
}

namespace
{

bool report_flagged(const FitnessReport& r)
{
    return r.critic_flagged ||
           std::any_of(r.per_instance.begin(), r.per_instance.end(), [](const auto& s) { return s.flagged; });
}

struct Child
{
    TaskPrompt prompt;
    std::optional<std::size_t> slot;
};

Child produce_child(OperatorKind op, const TaskPrompt& winner, Population& population, const EngineContext& ctx,
                    Rng& rng, TranscriptBuffer* transcript)
{
    const auto& ops = ctx.operators;
    const auto& description = ctx.config.task_description;
    std::optional<std::size_t> slot;
    switch (op)
    {
    case OperatorKind::zero_order_mutation:
        return {ops.mutate_zero_order(description, population, transcript), std::nullopt};
    case OperatorKind::first_order_mutation:
        slot = rng.uniform_index(population.mutation_pool().size());
        break;
    case OperatorKind::first_order_hyper:
    {
        if (population.hyper_pool().empty())
            throw MutationFailure("hyper-mutation pool is empty");
        const auto index = rng.uniform_index(population.mutation_pool().size());
        const auto hyper = population.hyper_pool()[rng.uniform_index(population.hyper_pool().size())];
        apply_first_order_hyper(population, index, hyper, ops, transcript);
        slot = index;
        break;
    }
    case OperatorKind::zero_order_hyper:
        slot = apply_zero_order_hyper(population, description, rng);
        break;
    }
    const auto mutator = population.mutation_pool()[*slot];
    auto child = ops.mutate_first_order(winner, mutator, population, transcript);
    const bool hyper = op == OperatorKind::first_order_hyper || op == OperatorKind::zero_order_hyper;
    return {std::move(child), hyper ? slot : std::nullopt};
}

void fill_statistics(const Population& population, GenerationEvent& event)
{
    std::size_t cached = 0;
    double sum_total = 0.0;
    double sum_task = 0.0;
    for (const auto& m: population.members())
    {
        if (!m.fitness_cache)
            continue;
        const auto& r = *m.fitness_cache;
        if (cached == 0 || r.f_total > event.best_f_total)
            event.best_f_total = r.f_total;
        if (cached == 0 || r.f_task > event.best_f_task)
            event.best_f_task = r.f_task;
        sum_total += r.f_total;
        sum_task += r.f_task;
        ++cached;
    }
    if (cached > 0)
    {
        event.mean_f_total = sum_total / static_cast<double>(cached);
        event.mean_f_task = sum_task / static_cast<double>(cached);
    }
}

} // namespace

GenerationEvent run_tournament_step(Population& population, const EngineContext& ctx, Rng& rng,
                                    TranscriptBuffer* transcript)
{
    if (population.generation() >= ctx.config.generations)
        throw PreconditionError("generation budget exhausted");
    GenerationEvent event;
    event.generation = population.generation();

    const auto [i1, i2] = sample_pair(population, rng);
    const auto p1 = population.members()[i1];
    const auto p2 = population.members()[i2];
    event.first = p1.id;
    event.second = p2.id;

    TranscriptBuffer step_log;
    FitnessReport r1;
    FitnessReport r2;
    if (p1.fitness_cache && p2.fitness_cache &&
        p1.fitness_cache->minibatch_key() == p2.fitness_cache->minibatch_key())
    {
        r1 = *p1.fitness_cache;
        r2 = *p2.fitness_cache;
        event.reused_cache = true;
    }
    else
    {
        const auto minibatch = ctx.config.fixed_minibatch
                                   ? fixed_minibatch_for(ctx.config, ctx.train)
                                   : sample_minibatch(ctx.train, ctx.config.minibatch_size, rng);
        const std::array<const TaskPrompt*, 2> contestants {&p1, &p2};
        std::array<FitnessReport, 2> reports;
        std::array<TranscriptBuffer, 2> logs;
        parallel_for(2, ctx.config.workers > 1 ? 2 : 1, [&](std::size_t i) {
            reports[i] = ctx.evaluator.evaluate(*contestants[i], minibatch, &logs[i]);
        });
        step_log.splice(std::move(logs[0]));
        step_log.splice(std::move(logs[1]));
        r1 = std::move(reports[0]);
        r2 = std::move(reports[1]);
        population.set_fitness(p1.id, r1);
        population.set_fitness(p2.id, r2);
    }
    event.first_fitness = r1.f_total;
    event.second_fitness = r2.f_total;
    event.minibatch_key = r1.minibatch_key();
    event.evaluation_flagged = report_flagged(r1) || report_flagged(r2);

    std::size_t solves = 0;
    std::size_t with_tools = 0;
    for (const auto* r: {&r1, &r2})
        for (const auto& s: r->per_instance)
        {
            ++solves;
            with_tools += s.used_tools ? 1 : 0;
        }
    event.tool_use_fraction = solves ? static_cast<double>(with_tools) / static_cast<double>(solves) : 0.0;

    const bool first_wins = first_sampled_wins(r1.f_total, r2.f_total);
    event.winner = first_wins ? p1.id : p2.id;
    event.loser = first_wins ? p2.id : p1.id;
    const auto& winner = population.member(event.winner);

    std::optional<Child> child;
    for (std::size_t attempt = 0; attempt <= kMutationRetries && !child; ++attempt)
    {
        event.attempts = attempt + 1;
        event.op = choose_operator(ctx.config.operator_weights, rng);
        try
        {
            child = produce_child(event.op, winner, population, ctx, rng, &step_log);
        }
        catch (const MutationFailure& e)
        {
            spdlog::warn("generation {}: {} failed: {}", event.generation, to_string(event.op), e.what());
        }
    }

    if (child)
    {
        event.child = child->prompt.id;
        event.mutator_slot = child->slot;
        population.replace_loser(event.loser, std::move(child->prompt));
    }
    else
    {
        event.mutation_failed = true;
        population.skip_generation();
    }
    fill_statistics(population, event);
    if (transcript)
        transcript->splice(std::move(step_log));
    return event;
}

BestPrompt best(const Population& population, const std::vector<TaskInstance>& eval_set, Evaluator& evaluator,
                TranscriptBuffer* transcript)
{
    if (population.size() == 0)
        throw PreconditionError("population is empty");
    std::optional<BestPrompt> out;
    for (const auto& m: population.members())
    {
        auto report = evaluator.evaluate(m, eval_set, transcript);
        const bool better = !out || report.f_total > out->report.f_total ||
                            (report.f_total == out->report.f_total && m.id.value < out->prompt.id.value);
        if (better)
            out = BestPrompt {m, std::move(report)};
    }
    out->prompt.fitness_cache = out->report;
    return *out;
}

EvolveResult evolve(Population population, const EngineContext& ctx, std::vector<GenerationEvent> history,
                    StepObserver* observer, const std::vector<TaskInstance>* eval_set)
{
    ctx.config.validate();
    if (ctx.train.empty())
        throw PreconditionError("training set is empty");
    if (history.size() != population.generation())
        throw PreconditionError("history length does not match the population generation");
    const Rng root(ctx.config.rng_seed);
    while (population.generation() < ctx.config.generations)
    {
        auto rng = root.derive("step", population.generation());
        const auto before = population;
        TranscriptBuffer transcript;
        try
        {
            history.push_back(run_tournament_step(population, ctx, rng, &transcript));
        }
        catch (const BackendUnavailable&)
        {
            if (observer)
                observer->on_abort(before);
            throw;
        }
        if (observer)
            observer->on_step(population, history.back(), transcript);
    }
    auto top = best(population, eval_set ? *eval_set : ctx.train, ctx.evaluator);
    return EvolveResult {std::move(top), std::move(history), std::move(population)};
}

} // namespace promptevo
