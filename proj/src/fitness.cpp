// SPDX-License-Identifier: Apache-2.0
#include <promptevo/error.hpp>
#include <promptevo/fitness.hpp>
#include <promptevo/hashing.hpp>
#include <promptevo/parallel.hpp>

#include <spdlog/spdlog.h>

#include <cctype>
#include <cmath>
#include <numeric>
#include <regex>

namespace promptevo
{

const std::string_view kDefaultCriticTemplate = "Evaluate this prompt for:\n"
                                                "\n"
                                                "Relevance to the stated visual reasoning task\n"
                                                "\n"
                                                "Logical flow between instructions\n"
                                                "\n"
                                                "Clarity of language and specificity\n"
                                                "Score each dimension 1-5, then compute weighted total (0-100).\n"
                                                "Flag any instructions that deviate from the task's core requirements.";

double combined_fitness(double f_task, double f_aux, double lambda)
{
    return (1.0 - lambda) * f_task + lambda * f_aux;
}

std::vector<TaskInstance> sample_minibatch(const std::vector<TaskInstance>& train, std::size_t k, Rng& rng)
{
    if (k < 1)
        throw ConfigError("minibatch size must be positive");
    if (k > train.size())
        throw ConfigError("minibatch size " + std::to_string(k) + " exceeds training set size " +
                          std::to_string(train.size()));
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t {0});
    // Partial Fisher-Yates: the first k slots are a uniform k-subset in random order.
    for (std::size_t i = 0; i < k; ++i)
        std::swap(order[i], order[i + rng.uniform_index(order.size() - i)]);
    std::vector<TaskInstance> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i)
        out.push_back(train[order[i]]);
    return out;
}

double rubric_total(const std::array<double, 3>& scores, const std::array<double, 3>& weights)
{
    double weighted = 0.0;
    double weight_sum = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
    {
        weighted += weights[i] * scores[i];
        weight_sum += weights[i];
    }
    if (!(weight_sum > 0.0))
        throw ConfigError("critic weights must not all be zero");
    return 100.0 * weighted / (5.0 * weight_sum);
}

namespace
{

struct NumberAt
{
    std::size_t pos;
    double value;
};

std::vector<NumberAt> numbers_in(const std::string& text)
{
    static const std::regex number(R"((?:\d+(?:\.\d+)?|\.\d+))");
    std::vector<NumberAt> out;
    for (auto it = std::sregex_iterator(text.begin(), text.end(), number); it != std::sregex_iterator(); ++it)
        out.push_back({static_cast<std::size_t>(it->position()), std::stod(it->str())});
    return out;
}

bool in_range(double v)
{
    return v >= 0.0 && v <= 100.0;
}

} // namespace

double parse_critic_score(std::string_view text, const std::array<double, 3>& weights)
{
    std::string lowered(text);
    for (auto& c: lowered)
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    const auto numbers = numbers_in(lowered);

    if (const auto marker = lowered.rfind("total"); marker != std::string::npos)
        for (const auto& n: numbers)
            if (n.pos > marker && in_range(n.value))
                return n.value;

    static const std::array<std::regex, 3> dims {
        std::regex(R"(relevance[^0-9\n]{0,40}?([1-5](?:\.\d+)?))"),
        std::regex(R"(logic(?:al)?\s*(?:flow)?[^0-9\n]{0,40}?([1-5](?:\.\d+)?))"),
        std::regex(R"(clarity[^0-9\n]{0,40}?([1-5](?:\.\d+)?))"),
    };
    std::array<double, 3> scores {};
    bool all = true;
    for (std::size_t i = 0; i < 3 && all; ++i)
    {
        std::smatch m;
        if (std::regex_search(lowered, m, dims[i]))
            scores[i] = std::stod(m[1].str());
        else
            all = false;
    }
    if (all)
        return rubric_total(scores, weights);

    for (auto it = numbers.rbegin(); it != numbers.rend(); ++it)
        if (in_range(it->value))
            return it->value;
    throw ParseError("critic reply contains no score in [0,100]");
}

TaskScore score_task(const TaskPrompt& prompt, std::span<const TaskInstance> minibatch, const SolvePipeline& solver,
                     std::size_t workers, TranscriptBuffer* transcript)
{
    if (minibatch.empty())
        throw PreconditionError("minibatch must be non-empty");
    TaskScore result;
    result.per_instance.resize(minibatch.size());
    std::vector<TranscriptBuffer> buffers(minibatch.size());
    parallel_for(minibatch.size(), workers, [&](std::size_t i) {
        const auto& inst = minibatch[i];
        auto& score = result.per_instance[i];
        score.instance_id = inst.id;
        try
        {
            const auto trace = solver.solve(prompt, inst, &buffers[i]);
            score.score = score_answer(trace.final_answer, inst);
            score.used_tools = trace.executed_tools() > 0;
        }
        catch (const BackendUnavailable&)
        {
            throw;
        }
        catch (const ScriptGapError&)
        {
            throw;
        }
        catch (const ConfigError&)
        {
            throw;
        }
        catch (const Error& e)
        {
            spdlog::warn("solve failed for prompt {} on instance {}: {}", to_string(prompt.id), inst.id, e.what());
            score.score = 0.0;
            score.flagged = true;
        }
    });
    double sum = 0.0;
    for (const auto& s: result.per_instance)
        sum += s.score;
    result.f_task = sum / static_cast<double>(minibatch.size());
    if (transcript)
        for (auto& b: buffers)
            transcript->splice(std::move(b));
    return result;
}

AuxScore score_aux(Gateway& gateway, const TaskPrompt& prompt, const CriticConfig& critic,
                   TranscriptBuffer* transcript)
{
    const auto user = critic.template_text + std::string(kPayloadSeparator) + prompt.text;
    auto reply = gateway.complete(make_request(Role::critic, {}, user), transcript).text;
    try
    {
        return AuxScore {parse_critic_score(reply, critic.weights), reply, false};
    }
    catch (const ParseError&)
    {
    }
    const auto strict = critic.template_text + "\n" + std::string(kCriticStrictSuffix) +
                        std::string(kPayloadSeparator) + prompt.text;
    reply = gateway.complete(make_request(Role::critic, {}, strict), transcript).text;
    try
    {
        return AuxScore {parse_critic_score(reply, critic.weights), reply, false};
    }
    catch (const ParseError&)
    {
        spdlog::warn("critic reply for prompt {} unparseable twice; F_aux = 0", to_string(prompt.id));
        return AuxScore {0.0, reply, true};
    }
}

FitnessEvaluator::FitnessEvaluator(Gateway& gateway, const SolvePipeline& solver, CriticConfig critic, double lambda,
                                   std::size_t workers):
    _gateway(gateway), _solver(solver), _critic(std::move(critic)), _lambda(lambda), _workers(workers)
{
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw ConfigError("lambda must be in [0,1]");
}

FitnessReport FitnessEvaluator::evaluate(const TaskPrompt& prompt, std::span<const TaskInstance> minibatch,
                                         TranscriptBuffer* transcript)
{
    std::vector<std::string> ids;
    for (const auto& inst: minibatch)
        ids.push_back(inst.id);
    ContentHasher hasher;
    hasher.field(prompt.text).field(minibatch_key(ids));
    const auto key = hasher.hex_digest();
    {
        std::lock_guard lock(_memo_mutex);
        if (auto it = _memo.find(key); it != _memo.end())
        {
            ++_memo_hits;
            // Replaying the records keeps transcripts independent of memo state.
            if (transcript)
                for (const auto& r: it->second.second.records())
                    transcript->append(r);
            auto report = it->second.first;
            report.minibatch_ids = ids;
            std::vector<InstanceScore> reordered;
            for (const auto& id: ids)
                for (const auto& s: it->second.first.per_instance)
                    if (s.instance_id == id)
                        reordered.push_back(s);
            report.per_instance = std::move(reordered);
            return report;
        }
    }

    TranscriptBuffer local;
    auto task = score_task(prompt, minibatch, _solver, _workers, &local);
    auto aux = score_aux(_gateway, prompt, _critic, &local);
    FitnessReport report;
    report.f_task = task.f_task;
    report.f_aux = aux.f_aux;
    report.lambda_used = _lambda;
    report.f_total = combined_fitness(task.f_task, aux.f_aux, _lambda);
    report.minibatch_ids = ids;
    report.per_instance = std::move(task.per_instance);
    report.critic_text = std::move(aux.critic_text);
    report.critic_flagged = aux.flagged;

    if (transcript)
        for (const auto& r: local.records())
            transcript->append(r);
    std::lock_guard lock(_memo_mutex);
    _memo.emplace(key, std::make_pair(report, std::move(local)));
    return report;
}

} // namespace promptevo
