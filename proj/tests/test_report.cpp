// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <promptevo/hashing.hpp>
#include <promptevo/report.hpp>

#include <doctest.h>

using namespace promptevo;
using testsupport::slurp;
using testsupport::spit;
using testsupport::TempDir;
namespace fs = std::filesystem;

namespace
{

/// Forwards to a run directory and simulates a crash after `crash_after` steps.
class CrashingObserver: public StepObserver
{
  public:
    CrashingObserver(RunDirectory& dir, std::uint64_t crash_after): _dir(dir), _crash_after(crash_after) {}
    void on_step(const Population& after, const GenerationEvent& e, const TranscriptBuffer& t) override
    {
        _dir.on_step(after, e, t);
        if (after.generation() == _crash_after)
            throw std::runtime_error("simulated crash");
    }
    void on_abort(const Population& current) override { _dir.on_abort(current); }

  private:
    RunDirectory& _dir;
    std::uint64_t _crash_after;
};

struct LandscapeRun
{
    explicit LandscapeRun(std::uint64_t seed, std::vector<std::string> overrides = {})
    {
        values = read_config_file(testsupport::kLandscapeConfig);
        overrides.push_back("rng_seed=" + std::to_string(seed));
        for (const auto& o: overrides)
            apply_override(values, o);
        session = std::make_unique<Session>(build_experiment(values));
        const auto parts = session->split_for();
        train = select(session->instances(), parts.train);
        test = select(session->instances(), parts.test);
    }

    [[nodiscard]] EngineContext context() const
    {
        return EngineContext {session->config().run, session->evaluator(), session->operators(), train};
    }

    /// Runs (or resumes) into `root`; optionally crashes after a step.
    void run(const fs::path& root, std::optional<std::uint64_t> crash_after = std::nullopt)
    {
        RunDirectory dir(root, render_config(values), session->config().run.snapshot_every);
        auto state = dir.resume();
        if (!state)
        {
            state = ResumeState {session->initial_population(), {}};
            dir.start(state->population);
        }
        if (crash_after)
        {
            CrashingObserver crash(dir, *crash_after);
            evolve(std::move(state->population), context(), std::move(state->history), &crash);
            return;
        }
        const auto result = evolve(std::move(state->population), context(), std::move(state->history), &dir);
        dir.finish(session->config().run, result, evaluate_prompt(result.best.prompt, test, session->solver()));
    }

    ConfigValues values;
    std::unique_ptr<Session> session;
    std::vector<TaskInstance> train;
    std::vector<TaskInstance> test;
};

std::vector<std::string> lines_of(const fs::path& path)
{
    std::vector<std::string> out;
    std::istringstream in(slurp(path));
    for (std::string line; std::getline(in, line);)
        out.push_back(line);
    return out;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines)
{
    std::string s;
    for (const auto& l: lines)
        s += l + "\n";
    spit(path, s);
}

GenerationEvent event_with(std::uint64_t generation, double best, double mean, double tools)
{
    GenerationEvent e;
    e.generation = generation;
    e.best_f_total = best;
    e.mean_f_total = mean;
    e.best_f_task = best / 2;
    e.mean_f_task = mean / 2;
    e.tool_use_fraction = tools;
    return e;
}

} // namespace

TEST_CASE("curves have one row per step")
{
    const std::vector<GenerationEvent> h {event_with(0, 10, 5, 0), event_with(1, 20, 7.5, 0.25)};
    const auto rows = curves_from(h);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].step == 1);
    CHECK(rows[1].step == 2);
    CHECK(rows[1].mean_f_total == 7.5);
    CHECK(rows[1].best_f_task == 10.0);
    CHECK(curves_csv(h) == std::string(kCurvesHeader) + "\n1,10,5,5,2.5,0\n2,20,7.5,10,3.75,0.25\n");
    TempDir dir;
    CHECK_THROWS_AS(emit_curves({}, dir / "c.csv"), PreconditionError);
    emit_curves(h, dir / "c.csv");
    CHECK(slurp(dir / "c.csv") == curves_csv(h));
}

TEST_CASE("a completed run directory verifies")
{
    TempDir dir;
    LandscapeRun run(2, {"generations=30"});
    run.run(dir.path());
    for (auto name: {run_files::config, run_files::events, run_files::transcript, run_files::curves,
                     run_files::best_prompt, run_files::summary})
        CHECK(fs::exists(dir / std::string(name)));
    CHECK(fs::exists(dir / "snapshots" / "step_000000.json"));
    CHECK(fs::exists(dir / "snapshots" / "step_000030.json"));
    CHECK(lines_of(dir / "events.jsonl").size() == 30);
    CHECK(lines_of(dir / "curves.csv").size() == 31);

    const auto report = verify_run(dir.path());
    CHECK(report.ok);
    CHECK(report.events == 30);
    const auto summary = Json::parse(slurp(dir / "summary.json"));
    CHECK(summary.at("steps") == 30);
    CHECK(summary.at("best_f_total").size() == 30);
    CHECK(slurp(dir / "best_prompt.txt").find(summary.at("best_prompt").at("text").get<std::string>()) == 0);
}

TEST_CASE("a tampered event is reported at its step")
{
    TempDir dir;
    LandscapeRun run(3, {"generations=20"});
    run.run(dir.path());
    auto lines = lines_of(dir / "events.jsonl");
    auto rec = Json::parse(lines[7]);
    rec.at("event").at("first_fitness") = 99.0;
    lines[7] = rec.dump();
    write_lines(dir / "events.jsonl", lines);
    const auto r = verify_run(dir.path());
    CHECK_FALSE(r.ok);
    CHECK(r.divergent_step == std::optional<std::uint64_t>(7));
}

TEST_CASE("dropped or edited transcript lines are detected")
{
    TempDir dir;
    LandscapeRun run(3, {"generations=12"});
    run.run(dir.path());
    auto lines = lines_of(dir / "transcript.jsonl");
    REQUIRE(lines.size() > 3);
    lines.erase(lines.begin() + 2);
    write_lines(dir / "transcript.jsonl", lines);
    const auto r = verify_run(dir.path());
    CHECK_FALSE(r.ok);
    CHECK(r.divergent_step == std::optional<std::uint64_t>(0));
}

TEST_CASE("edited curves or summary are detected")
{
    TempDir dir;
    LandscapeRun run(5, {"generations=10"});
    run.run(dir.path());
    const auto curves = slurp(dir / "curves.csv");
    spit(dir / "curves.csv", curves + "11,0,0,0,0,0\n");
    CHECK_FALSE(verify_run(dir.path()).ok);
    spit(dir / "curves.csv", curves);
    CHECK(verify_run(dir.path()).ok);
    spit(dir / "best_prompt.txt", "something else\n");
    CHECK_FALSE(verify_run(dir.path()).ok);
}

TEST_CASE("a run directory refuses a different config")
{
    TempDir dir;
    LandscapeRun run(2, {"generations=5"});
    run.run(dir.path());
    CHECK_THROWS_AS(RunDirectory(dir.path(), "population_size = 8\n", 10), ConfigError);
    LandscapeRun other(3, {"generations=5"});
    CHECK_THROWS_AS(other.run(dir.path()), ConfigError);
}

TEST_CASE("a corrupted snapshot is refused on resume")
{
    TempDir dir;
    LandscapeRun run(2, {"generations=25"});
    CHECK_THROWS_AS(run.run(dir.path(), 25), std::runtime_error);
    const auto snap = dir / "snapshots" / "step_000020.json";
    REQUIRE(fs::exists(snap));
    auto j = Json::parse(slurp(snap));
    j.at("body").at("generation") = 19;
    spit(snap, j.dump());
    RunDirectory reopened(dir.path(), render_config(run.values), 10);
    CHECK_THROWS_AS(reopened.resume(), ChecksumError);
    CHECK_FALSE(verify_run(dir.path()).ok);
}

TEST_CASE("resume after a crash reproduces the uninterrupted run byte for byte")
{
    TempDir a;
    TempDir b;
    {
        LandscapeRun run(6, {"generations=40"});
        run.run(a.path());
    }
    {
        LandscapeRun run(6, {"generations=40"});
        CHECK_THROWS_AS(run.run(b.path(), 27), std::runtime_error);
    }
    CHECK(lines_of(b / "events.jsonl").size() == 27);
    {
        // New session and gateway, as in a new process.
        LandscapeRun run(6, {"generations=40"});
        RunDirectory dir(b.path(), render_config(run.values), 10);
        const auto state = dir.resume();
        REQUIRE(state);
        CHECK(state->population.generation() == 20);
        CHECK(state->history.size() == 20);
        CHECK(lines_of(b / "events.jsonl").size() == 20);
        CHECK_FALSE(fs::exists(b / "snapshots" / "step_000030.json"));
    }
    {
        LandscapeRun run(6, {"generations=40"});
        run.run(b.path());
    }
    for (auto name: {run_files::events, run_files::transcript, run_files::curves, run_files::best_prompt,
                     run_files::summary})
    {
        CAPTURE(name);
        CHECK(slurp(a / std::string(name)) == slurp(b / std::string(name)));
    }
    CHECK(verify_run(b.path()).ok);
}

TEST_CASE("summary contents")
{
    LandscapeRun run(1, {"generations=15"});
    const auto r = evolve(run.session->initial_population(), run.context());
    const auto s = summarize(run.session->config().run, r, 55.0);
    CHECK(s.steps == 15);
    CHECK(s.best_f_total.size() == 15);
    CHECK(s.best_prompt.id == r.best.prompt.id);
    CHECK(s.best_train_f_total == r.best.report.f_total);
    CHECK(s.test_score == std::optional<double>(55.0));
    const Json j = s;
    CHECK(j.at("config").at("population_size") == 8);
}

TEST_CASE("generalization sweep runs every cell on disjoint sides")
{
    const auto instances = testsupport::plain_instances(40);
    std::vector<std::pair<std::size_t, std::size_t>> sizes;
    const auto result = generalization_sweep(
        instances, {0.25, 0.5}, {1, 2, 3}, [&](const auto& train, const auto& test, std::uint64_t seed) {
            audit_disjoint(train, test);
            sizes.emplace_back(train.size(), test.size());
            if (seed == 3 && train.size() == 20)
                throw LoadError("cell exploded");
            return static_cast<double>(train.size()) + static_cast<double>(seed);
        });
    REQUIRE(result.cells.size() == 6);
    CHECK(sizes.size() == 6);
    for (const auto& [tr, te]: sizes)
        CHECK(tr + te == 40);
    const auto rows = result.rows();
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].fraction == 0.25);
    CHECK(rows[0].cells == 3);
    CHECK(rows[0].mean == doctest::Approx(12.0));
    CHECK(rows[0].stdev == doctest::Approx(1.0));
    CHECK(rows[1].cells == 2);
    CHECK(rows[1].mean == doctest::Approx(21.5));
    CHECK(result.cells[5].error.find("exploded") != std::string::npos);
    CHECK(result.cells_csv().rfind("fraction,seed,test_score,error\n", 0) == 0);
    CHECK(result.rows_csv().rfind("fraction,cells,mean,stdev\n", 0) == 0);
    CHECK_THROWS_AS(generalization_sweep(instances, {1.0}, {1}, [](const auto&, const auto&, auto) { return 0.0; }),
                    PreconditionError);
}

TEST_CASE("disjointness audit")
{
    const auto all = testsupport::plain_instances(4);
    CHECK_NOTHROW(audit_disjoint({all[0], all[1]}, {all[2], all[3]}));
    CHECK_THROWS_AS(audit_disjoint({all[0], all[1]}, {all[1]}), InvariantError);
}
