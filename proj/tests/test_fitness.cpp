// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <promptevo/fitness.hpp>

#include <doctest.h>

#include <map>

using namespace promptevo;
using testsupport::plain_instances;

namespace
{

/// Solver answers yes iff the system prompt names the topic; critic scores by a fixed rule.
std::shared_ptr<MockBackend> topic_mock(std::string critic_reply)
{
    MockRule solver {Role::solver, R"(Topic: (\w+))", "Thinking...\nANSWER: {{when_system_has:$1|yes|no}}", {}};
    MockRule critic {Role::critic, "", std::move(critic_reply), {}};
    return std::make_shared<MockBackend>(std::vector<MockRule> {solver, critic}, 3);
}

std::vector<TaskInstance> topic_instances(const std::vector<std::string>& topics)
{
    auto out = plain_instances(topics.size());
    for (std::size_t i = 0; i < topics.size(); ++i)
        out[i].question_text = "Topic: " + topics[i] + ". Covered?";
    return out;
}

TaskPrompt prompt_with(const std::string& text, std::uint64_t id = 1)
{
    TaskPrompt p;
    p.id = PromptId {id};
    p.text = text;
    return p;
}

GatewayOptions quiet()
{
    GatewayOptions o;
    o.sleeper = [](std::chrono::milliseconds) {};
    return o;
}

} // namespace

TEST_CASE("combined fitness algebra")
{
    Rng rng(2024);
    for (int i = 0; i < 1000; ++i)
    {
        const double t = 100.0 * rng.uniform01();
        const double a = 100.0 * rng.uniform01();
        const double l = rng.uniform01();
        // Oracle written as an interpolation from f_task toward f_aux.
        const double expected = t + l * (a - t);
        CHECK(std::abs(combined_fitness(t, a, l) - expected) <= 1e-9);
        CHECK(combined_fitness(t, a, 0.0) == t);
        CHECK(combined_fitness(t, a, 1.0) == a);
    }
    CHECK(combined_fitness(60.0, 80.0, 0.25) == doctest::Approx(65.0).epsilon(1e-12));
}

TEST_CASE("minibatch sampling is a uniform k-subset")
{
    const auto train = plain_instances(12);
    Rng rng(8);
    std::map<std::string, int> seen;
    const int draws = 30'000;
    const std::size_t k = 4;
    for (int i = 0; i < draws; ++i)
    {
        const auto b = sample_minibatch(train, k, rng);
        REQUIRE(b.size() == k);
        std::set<std::string> ids;
        for (const auto& inst: b)
            ids.insert(inst.id);
        REQUIRE(ids.size() == k);
        for (const auto& id: ids)
            seen[id]++;
    }
    // Each instance is included with probability k/n.
    const double p = static_cast<double>(k) / 12.0;
    const double sd = std::sqrt(draws * p * (1 - p));
    for (const auto& [id, n]: seen)
        CHECK(std::abs(n - draws * p) < 4.5 * sd);
    CHECK(seen.size() == 12);

    CHECK(sample_minibatch(train, 12, rng).size() == 12);
    CHECK_THROWS_AS(sample_minibatch(train, 13, rng), ConfigError);
    CHECK_THROWS_AS(sample_minibatch(train, 0, rng), ConfigError);
}

TEST_CASE("rubric total maps 1-5 scores onto 0-100")
{
    CHECK(rubric_total({5, 5, 5}, {1, 1, 1}) == doctest::Approx(100.0));
    CHECK(rubric_total({1, 1, 1}, {1, 1, 1}) == doctest::Approx(20.0));
    CHECK(rubric_total({4, 3, 5}, {1, 1, 1}) == doctest::Approx(80.0));
    CHECK(rubric_total({5, 1, 1}, {2, 1, 1}) == doctest::Approx(100.0 * 12.0 / 20.0));
    CHECK_THROWS_AS(rubric_total({1, 1, 1}, {0, 0, 0}), ConfigError);
}

TEST_CASE("critic reply parsing")
{
    CHECK(parse_critic_score("TOTAL: 72") == 72.0);
    CHECK(parse_critic_score("Relevance: 4\nLogical flow: 3\nClarity: 5\nWeighted total: 80") == 80.0);
    CHECK(parse_critic_score("Relevance 4/5, logical flow 3/5, clarity 5/5.") == doctest::Approx(80.0));
    CHECK(parse_critic_score("Relevance: 5\nLogic: 5\nClarity: 5") == doctest::Approx(100.0));
    CHECK(parse_critic_score("I would say 64 overall.") == 64.0);
    CHECK(parse_critic_score("Total score = 55.5 out of 100") == 55.5);
    // Out-of-range numbers after the marker are skipped.
    CHECK(parse_critic_score("total (of 1000): 940, i.e. 94") == 94.0);
    CHECK_THROWS_AS(parse_critic_score("no numbers at all"), ParseError);
    CHECK_THROWS_AS(parse_critic_score("Total: 250"), ParseError);
}

TEST_CASE("task score is the mean of per-instance scores")
{
    Gateway gw(std::make_shared<ImageStore>(), quiet());
    gw.set_all_backends(topic_mock("TOTAL: 50"));
    SolvePipeline solver(gw, nullptr, {});
    const auto batch = topic_instances({"grid", "tally", "magnify", "grid"});
    for (std::size_t workers: {std::size_t {1}, std::size_t {3}})
    {
        TranscriptBuffer t;
        const auto s = score_task(prompt_with("Use a grid and keep a tally."), batch, solver, workers, &t);
        CHECK(s.f_task == doctest::Approx(75.0));
        REQUIRE(s.per_instance.size() == 4);
        CHECK(s.per_instance[0].score == 100.0);
        CHECK(s.per_instance[2].score == 0.0);
        CHECK(s.per_instance[2].instance_id == batch[2].id);
        CHECK(t.records().size() == 4);
    }
    CHECK_THROWS_AS(score_task(prompt_with("x"), {}, solver), PreconditionError);
}

TEST_CASE("solver failures flag the instance and score zero")
{
    Gateway gw(std::make_shared<ImageStore>(), quiet());
    gw.set_all_backends(topic_mock("TOTAL: 50"));
    SolvePipeline solver(gw, nullptr, {});
    auto batch = topic_instances({"grid", "grid"});
    batch[1].image_paths = {"/nonexistent/image.png"};
    const auto s = score_task(prompt_with("grid"), batch, solver);
    CHECK(s.f_task == doctest::Approx(50.0));
    CHECK_FALSE(s.per_instance[0].flagged);
    CHECK(s.per_instance[1].flagged);
    CHECK(s.per_instance[1].score == 0.0);
}

TEST_CASE("backend outages propagate out of scoring")
{
    Gateway gw(std::make_shared<ImageStore>(), quiet());
    gw.set_all_backends(std::make_shared<MockBackend>(std::vector<MockRule> {}, 0));
    SolvePipeline solver(gw, nullptr, {});
    CHECK_THROWS_AS(score_task(prompt_with("grid"), topic_instances({"grid"}), solver), ScriptGapError);
}

TEST_CASE("critic sees the template then the prompt; one strict reprompt")
{
    std::vector<std::string> users;
    int call = 0;
    MockRule critic;
    critic.role = Role::critic;
    critic.responder = [&](const MockMatch& m) {
        users.push_back(m.request.user_text);
        return ++call == 1 ? std::string("looks fine") : std::string("TOTAL: 40");
    };
    Gateway gw(std::make_shared<ImageStore>(), quiet());
    gw.set_all_backends(std::make_shared<MockBackend>(std::vector<MockRule> {critic}, 0));
    const CriticConfig cfg;
    const auto aux = score_aux(gw, prompt_with("Count carefully."), cfg);
    CHECK(aux.f_aux == 40.0);
    CHECK_FALSE(aux.flagged);
    REQUIRE(users.size() == 2);
    CHECK(users[0] == cfg.template_text + std::string(kPayloadSeparator) + "Count carefully.");
    CHECK(users[1].find(kCriticStrictSuffix) != std::string::npos);
    CHECK(payload_of(users[1]) == "Count carefully.");

    Gateway never(std::make_shared<ImageStore>(), quiet());
    never.set_all_backends(
        std::make_shared<MockBackend>(std::vector<MockRule> {{Role::critic, "", "no idea", {}}}, 0));
    const auto bad = score_aux(never, prompt_with("Count carefully."), cfg);
    CHECK(bad.flagged);
    CHECK(bad.f_aux == 0.0);
}

TEST_CASE("default critic template matches the shipped data file")
{
    auto text = testsupport::slurp(testsupport::kData / "critic_template.txt");
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r'))
        text.pop_back();
    CHECK(text == kDefaultCriticTemplate);
}

TEST_CASE("evaluator combines, memoizes and replays transcripts")
{
    Gateway gw(std::make_shared<ImageStore>(), quiet());
    auto mock = topic_mock("TOTAL: {{percent_present:grid|quadrant|recount|tally|magnify}}");
    gw.set_all_backends(mock);
    SolvePipeline solver(gw, nullptr, {});
    FitnessEvaluator eval(gw, solver, {}, 0.25);
    const auto batch = topic_instances({"grid", "tally", "magnify", "recount"});
    const auto p = prompt_with("Draw a grid, then tally.");

    TranscriptBuffer t1;
    const auto r1 = eval.evaluate(p, batch, &t1);
    CHECK(r1.f_task == doctest::Approx(50.0));
    CHECK(r1.f_aux == doctest::Approx(40.0));
    CHECK(r1.f_total == doctest::Approx(0.75 * 50 + 0.25 * 40));
    CHECK(r1.lambda_used == 0.25);
    const auto calls = mock->calls();

    std::vector<TaskInstance> reordered {batch[3], batch[1], batch[0], batch[2]};
    TranscriptBuffer t2;
    const auto r2 = eval.evaluate(prompt_with(p.text, 99), reordered, &t2);
    CHECK(mock->calls() == calls);
    CHECK(eval.memo_hits() == 1);
    CHECK(r2.f_total == r1.f_total);
    CHECK(r2.minibatch_ids == std::vector<std::string> {batch[3].id, batch[1].id, batch[0].id, batch[2].id});
    CHECK(r2.per_instance[0].instance_id == batch[3].id);
    CHECK(t2.records() == t1.records());

    // A different minibatch is a different memo key.
    eval.evaluate(p, std::vector<TaskInstance> {batch[0], batch[1]}, nullptr);
    CHECK(eval.memo_hits() == 1);
    CHECK_THROWS_AS(FitnessEvaluator(gw, solver, {}, 1.5), ConfigError);
}
