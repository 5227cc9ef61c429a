// SPDX-License-Identifier: Apache-2.0
// Command-line driver: evolve, evaluate, sweep, report, replay, validate-config.

#include <promptevo/config.hpp>
#include <promptevo/error.hpp>
#include <promptevo/report.hpp>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace promptevo;

namespace
{

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitBackend = 3;
constexpr int kExitDivergence = 4;

struct Options
{
    std::string config;
    std::string run_dir;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;
    std::string backend;
    std::string tools;
    std::optional<double> fraction;
    std::string side = "test";
    std::string prompt_file;
    std::vector<double> fractions {0.2, 0.3, 0.5};
    std::vector<std::uint64_t> seeds {1, 2, 3};
    std::string log_level = "warn";
};

ConfigValues load_values(const Options& o)
{
    if (o.config.empty())
        throw ConfigError("--config is required");
    if (!fs::exists(o.config))
        throw ConfigError("config file " + o.config + " does not exist");
    auto values = read_config_file(o.config);
    for (const auto& s: o.overrides)
        apply_override(values, s);
    if (o.seed)
        apply_override(values, "rng_seed=" + std::to_string(*o.seed));
    if (!o.tools.empty())
        apply_override(values, std::string("tool_use_enabled=") + (o.tools == "on" ? "true" : "false"));
    if (!o.backend.empty())
        values.values["backend"] = o.backend;
    if (o.fraction)
    {
        std::ostringstream f;
        f << std::setprecision(17) << *o.fraction;
        values.values["dataset.train_fraction"] = f.str();
    }
    return values;
}

std::string read_text(const fs::path& path)
{
    std::ifstream f(path);
    if (!f)
        throw InputError("cannot read " + path.string());
    std::stringstream buf;
    buf << f.rdbuf();
    auto s = buf.str();
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r' || s.back() == ' '))
        s.pop_back();
    return s;
}

int cmd_validate(const Options& o)
{
    const auto values = load_values(o);
    build_experiment(values);
    std::cout << render_config(values);
    return kExitOk;
}

int cmd_evolve(const Options& o)
{
    const auto values = load_values(o);
    const auto config = build_experiment(values);
    if (o.run_dir.empty())
        throw ConfigError("--run-dir is required");
    Session session(config);
    const auto parts = session.split_for();
    const auto train = select(session.instances(), parts.train);
    const auto test = select(session.instances(), parts.test);
    audit_disjoint(train, test);

    RunDirectory dir(o.run_dir, render_config(values), config.run.snapshot_every);
    const EngineContext ctx {session.config().run, session.evaluator(), session.operators(), train};
    auto state = dir.resume();
    if (state)
        spdlog::info("resuming {} at generation {}", o.run_dir, state->population.generation());
    else
    {
        state = ResumeState {session.initial_population(), {}};
        dir.start(state->population);
    }
    const auto result = evolve(std::move(state->population), ctx, std::move(state->history), &dir);
    const auto test_score = evaluate_prompt(result.best.prompt, test, session.solver(), config.run.workers);
    dir.finish(config.run, result, test_score);

    std::cout << "steps: " << result.history.size() << "\n"
              << "best prompt id: " << to_string(result.best.prompt.id) << "\n"
              << "train f_total: " << result.best.report.f_total << "\n"
              << "test f_task: " << test_score << "\n"
              << "run dir: " << o.run_dir << "\n";
    return kExitOk;
}

int cmd_evaluate(const Options& o)
{
    const auto config = build_experiment(load_values(o));
    if (o.prompt_file.empty())
        throw ConfigError("--prompt is required");
    if (o.side != "train" && o.side != "test")
        throw ConfigError("--side must be train or test");
    Session session(config);
    const auto parts = session.split_for();
    const auto& ids = o.side == "train" ? parts.train : parts.test;
    const auto instances = select(session.instances(), ids);
    if (instances.empty())
        throw PreconditionError("the " + o.side + " side is empty");
    TaskPrompt prompt;
    prompt.text = read_text(o.prompt_file);
    validate_prompt_text(prompt.text);
    const auto score = score_task(prompt, instances, session.solver(), config.run.workers);
    for (const auto& s: score.per_instance)
        std::cout << s.instance_id << "," << s.score << (s.flagged ? ",flagged" : "") << "\n";
    std::cout << "mean: " << score.f_task << "\n";
    return kExitOk;
}

int cmd_sweep(const Options& o)
{
    const auto config = build_experiment(load_values(o));
    Session session(config);
    const auto result = generalization_sweep(session.instances(), o.fractions, o.seeds, session_cell_runner(config));
    if (!o.run_dir.empty())
    {
        fs::create_directories(o.run_dir);
        std::ofstream(fs::path(o.run_dir) / "sweep_cells.csv") << result.cells_csv();
        std::ofstream(fs::path(o.run_dir) / "sweep_rows.csv") << result.rows_csv();
    }
    std::cout << result.rows_csv();
    for (const auto& c: result.cells)
        if (!c.error.empty())
            std::cerr << "cell fraction=" << c.fraction << " seed=" << c.seed << " failed: " << c.error << "\n";
    return kExitOk;
}

int cmd_report(const Options& o)
{
    if (o.run_dir.empty())
        throw ConfigError("--run-dir is required");
    const auto summary_path = fs::path(o.run_dir) / run_files::summary;
    const auto summary = Json::parse(read_text(summary_path));
    std::cout << "steps: " << summary.at("steps") << "\n"
              << "best train f_total: " << summary.at("best_train_f_total") << "\n"
              << "test score: " << summary.at("test_score") << "\n"
              << "mutation failures: " << summary.at("mutation_failures") << "\n"
              << "best prompt:\n"
              << summary.at("best_prompt").at("text").get<std::string>() << "\n";
    return kExitOk;
}

int cmd_replay(const Options& o)
{
    if (o.run_dir.empty())
        throw ConfigError("--run-dir is required");
    const auto report = verify_run(o.run_dir);
    if (report.ok)
    {
        std::cout << "ok: " << report.message << "\n";
        return kExitOk;
    }
    std::cout << "divergence";
    if (report.divergent_step)
        std::cout << " at step " << *report.divergent_step;
    std::cout << ": " << report.message << "\n";
    return kExitDivergence;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app {"Evolutionary prompt optimization with tool synthesis"};
    app.require_subcommand(1);
    Options o;
    app.add_option("--log-level", o.log_level, "trace, debug, info, warn, error or off");

    const auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "Experiment config (key=value)");
        sub->add_option("--seed", o.seed, "Master seed (overrides rng_seed)");
        sub->add_option("--set", o.overrides, "Override a run configuration field, key=value")->take_all();
        sub->add_option("--backend", o.backend, "mock or live")->check(CLI::IsMember({"mock", "live"}));
        sub->add_option("--tools", o.tools, "on or off")->check(CLI::IsMember({"on", "off"}));
        sub->add_option("--fraction", o.fraction, "Train fraction of the dataset");
    };

    auto* evolve_cmd = app.add_subcommand("evolve", "Run (or resume) an evolution");
    add_common(evolve_cmd);
    evolve_cmd->add_option("--run-dir", o.run_dir, "Run directory");

    auto* evaluate_cmd = app.add_subcommand("evaluate", "Score a prompt file on one side of the split");
    add_common(evaluate_cmd);
    evaluate_cmd->add_option("--prompt", o.prompt_file, "Prompt text file");
    evaluate_cmd->add_option("--side", o.side, "train or test")->check(CLI::IsMember({"train", "test"}));

    auto* sweep_cmd = app.add_subcommand("sweep", "Generalization sweep over train fractions");
    add_common(sweep_cmd);
    sweep_cmd->add_option("--run-dir", o.run_dir, "Directory for the sweep tables");
    sweep_cmd->add_option("--fractions", o.fractions, "Train fractions")->delimiter(',');
    sweep_cmd->add_option("--seeds", o.seeds, "Seeds per fraction")->delimiter(',');

    auto* report_cmd = app.add_subcommand("report", "Print a run summary");
    report_cmd->add_option("--run-dir", o.run_dir, "Run directory");

    auto* replay_cmd = app.add_subcommand("replay", "Verify a run directory against its event log");
    replay_cmd->add_option("--run-dir", o.run_dir, "Run directory");

    auto* validate_cmd = app.add_subcommand("validate-config", "Check a config and print its canonical form");
    add_common(validate_cmd);

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError& e)
    {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    auto logger = spdlog::stderr_color_mt("promptevo");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::from_str(o.log_level));

    try
    {
        if (*evolve_cmd)
            return cmd_evolve(o);
        if (*evaluate_cmd)
            return cmd_evaluate(o);
        if (*sweep_cmd)
            return cmd_sweep(o);
        if (*report_cmd)
            return cmd_report(o);
        if (*replay_cmd)
            return cmd_replay(o);
        if (*validate_cmd)
            return cmd_validate(o);
    }
    catch (const ConfigError& e)
    {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }
    catch (const BackendUnavailable& e)
    {
        std::cerr << "backend unavailable: " << e.what() << "\n";
        return kExitBackend;
    }
    catch (const ChecksumError& e)
    {
        std::cerr << "run directory rejected: " << e.what() << "\n";
        return kExitFailure;
    }
    catch (const std::exception& e)
    {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitFailure;
}
