// SPDX-License-Identifier: Apache-2.0
// Shared fixtures for the test binaries.
#pragma once

#include <promptevo/config.hpp>
#include <promptevo/engine.hpp>
#include <promptevo/error.hpp>
#include <promptevo/fitness.hpp>
#include <promptevo/report.hpp>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include <sys/wait.h>

namespace testsupport
{

namespace fs = std::filesystem;
using namespace promptevo;

inline const fs::path kData = PROMPTEVO_DATA_DIR;
inline const fs::path kLandscapeConfig = kData / "landscape" / "landscape.cfg";
inline const fs::path kCountingConfig = kData / "counting" / "counting.cfg";

/// The planted keywords of the landscape scenario.
inline const std::array<std::string, 5> kKeywords {"grid", "quadrant", "recount", "tally", "magnify"};

class TempDir
{
  public:
    TempDir()
    {
        std::string tmpl = (fs::temp_directory_path() / "promptevo-test-XXXXXX").string();
        if (!mkdtemp(tmpl.data()))
            throw std::runtime_error("mkdtemp failed");
        _path = tmpl;
    }
    ~TempDir()
    {
        std::error_code ec;
        fs::remove_all(_path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const fs::path& path() const { return _path; }
    fs::path operator/(const std::string& name) const { return _path / name; }

  private:
    fs::path _path;
};

inline std::string slurp(const fs::path& path)
{
    std::ifstream f(path, std::ios::binary);
    std::stringstream buf;
    buf << f.rdbuf();
    return buf.str();
}

inline void spit(const fs::path& path, std::string_view content)
{
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << content;
}

struct CliResult
{
    int exit_code = -1;
    std::string out;
};

/// Runs the command-line tool with stdout and stderr captured together.
inline CliResult run_cli(const std::string& args, const std::string& env = {})
{
    TempDir tmp;
    const auto log = tmp / "out.txt";
    const auto cmd = env + (env.empty() ? "" : " ") + std::string(PROMPTEVO_CLI) + " " + args + " >" +
                     log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(log);
    return r;
}

/// Everything needed to run the engine directly on the landscape scenario.
struct Landscape
{
    explicit Landscape(std::uint64_t seed, std::vector<std::string> overrides = {})
    {
        overrides.push_back("rng_seed=" + std::to_string(seed));
        session = std::make_unique<Session>(load_experiment(kLandscapeConfig, overrides));
        const auto parts = session->split_for();
        train = select(session->instances(), parts.train);
        test = select(session->instances(), parts.test);
    }

    [[nodiscard]] EngineContext context() const
    {
        return EngineContext {session->config().run, session->evaluator(), session->operators(), train};
    }

    std::unique_ptr<Session> session;
    std::vector<TaskInstance> train;
    std::vector<TaskInstance> test;
};

/// Independent fitness oracle for the landscape: a prompt solves an instance iff it names the
/// instance's keyword, and the critic awards 20 points per keyword present.
inline double landscape_oracle(const std::vector<bool>& present, const std::vector<TaskInstance>& instances,
                               double lambda)
{
    double solved = 0.0;
    for (const auto& inst: instances)
    {
        const auto& kw = inst.metadata.at("keyword");
        for (std::size_t i = 0; i < kKeywords.size(); ++i)
            if (kKeywords[i] == kw && present[i])
                solved += 1.0;
    }
    double count = 0.0;
    for (bool b: present)
        count += b ? 1.0 : 0.0;
    const double task = 100.0 * solved / static_cast<double>(instances.size());
    return (1.0 - lambda) * task + lambda * 20.0 * count;
}

/// Fitness from a function of the prompt text; counts evaluations.
class SyntheticEvaluator: public Evaluator
{
  public:
    explicit SyntheticEvaluator(std::function<double(const std::string&)> f): _f(std::move(f)) {}

    FitnessReport evaluate(const TaskPrompt& prompt, std::span<const TaskInstance> minibatch,
                           TranscriptBuffer*) override
    {
        ++calls;
        FitnessReport r;
        r.f_task = r.f_aux = r.f_total = _f(prompt.text);
        for (const auto& inst: minibatch)
        {
            r.minibatch_ids.push_back(inst.id);
            r.per_instance.push_back({inst.id, r.f_task, false, false});
        }
        return r;
    }

    std::size_t calls = 0;

  private:
    std::function<double(const std::string&)> _f;
};

/// n trivially-scored instances with ids i-000, i-001, ...
inline std::vector<TaskInstance> plain_instances(std::size_t n)
{
    std::vector<TaskInstance> out;
    for (std::size_t i = 0; i < n; ++i)
    {
        TaskInstance inst;
        char id[32];
        std::snprintf(id, sizeof id, "i-%03zu", i);
        inst.id = id;
        inst.question_text = "Question " + std::to_string(i);
        inst.gold_answer = "yes";
        out.push_back(std::move(inst));
    }
    return out;
}

} // namespace testsupport
