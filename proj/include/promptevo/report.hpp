// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <promptevo/config.hpp>
#include <promptevo/core.hpp>
#include <promptevo/engine.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace promptevo
{

struct CurveRow
{
    std::uint64_t step = 0;
    double best_f_total = 0.0;
    double mean_f_total = 0.0;
    double best_f_task = 0.0;
    double mean_f_task = 0.0;
    double tool_use_fraction = 0.0;
};

inline constexpr std::string_view kCurvesHeader =
    "step,best_f_total,mean_f_total,best_f_task,mean_f_task,tool_use_fraction";

/// One row per event; `step` counts completed steps (1-based).
std::vector<CurveRow> curves_from(const std::vector<GenerationEvent>& history);
std::string curves_csv(const std::vector<GenerationEvent>& history);
/// Throws PreconditionError on an empty history.
void emit_curves(const std::vector<GenerationEvent>& history, const std::filesystem::path& path);

struct RunSummary
{
    Json config;
    std::size_t steps = 0;
    std::vector<double> best_f_total;
    std::vector<double> mean_f_total;
    std::vector<double> tool_use_fraction;
    TaskPrompt best_prompt;
    double best_train_f_total = 0.0;
    std::optional<double> test_score;
    std::size_t mutation_failures = 0;
};

RunSummary summarize(const RunConfig& config, const EvolveResult& result, std::optional<double> test_score);
void to_json(Json& j, const RunSummary& s);

/// File names inside a run directory.
namespace run_files
{
inline constexpr std::string_view config = "config.cfg";
inline constexpr std::string_view events = "events.jsonl";
inline constexpr std::string_view transcript = "transcript.jsonl";
inline constexpr std::string_view curves = "curves.csv";
inline constexpr std::string_view best_prompt = "best_prompt.txt";
inline constexpr std::string_view summary = "summary.json";
inline constexpr std::string_view snapshots = "snapshots";
} // namespace run_files

/// Chain hash of one event record: H(prev, canonical event, transcript position).
std::string event_chain_hash(const std::string& prev, const Json& event, std::uint64_t transcript_count,
                             const std::string& transcript_head);
std::string transcript_chain_hash(const std::string& prev, const std::string& line);

struct ResumeState
{
    Population population;
    std::vector<GenerationEvent> history;
};

/// Persists a run: config copy, hash-chained event log, transcript, periodic snapshots.
class RunDirectory: public StepObserver
{
  public:
    /// Creates the directory or reopens it. Throws ConfigError when it holds a different config.
    RunDirectory(std::filesystem::path root, std::string config_text, std::size_t snapshot_every);

    [[nodiscard]] const std::filesystem::path& root() const { return _root; }

    /// The most recent snapshot with its log prefix, or nullopt for a fresh directory. Logs
    /// are truncated back to the snapshot. Throws ChecksumError when anything fails to verify.
    std::optional<ResumeState> resume();
    /// Writes the generation-0 snapshot.
    void start(const Population& initial);

    void on_step(const Population& after, const GenerationEvent& event, const TranscriptBuffer& transcript) override;
    void on_abort(const Population& current) override;

    /// Final snapshot, curves, best prompt and summary.
    void finish(const RunConfig& config, const EvolveResult& result, std::optional<double> test_score);

    void write_snapshot(const Population& population);

  private:
    std::filesystem::path _root;
    std::string _config_hash;
    std::size_t _snapshot_every;
    std::uint64_t _events = 0;
    std::string _events_head;
    std::uint64_t _transcript = 0;
    std::string _transcript_head;
};

struct ReplayReport
{
    bool ok = true;
    /// 0-based index of the first event that fails verification.
    std::optional<std::uint64_t> divergent_step;
    std::string message;
    std::size_t events = 0;
};

/// Re-derives curves from the event log and checks every checksum in a run directory.
ReplayReport verify_run(const std::filesystem::path& root);

struct SweepCell
{
    double fraction = 0.0;
    std::uint64_t seed = 0;
    std::optional<double> test_score;
    std::string error;
};

struct SweepRow
{
    double fraction = 0.0;
    std::size_t cells = 0;
    double mean = 0.0;
    double stdev = 0.0;
};

struct SweepResult
{
    std::vector<SweepCell> cells;

    /// Mean and sample standard deviation of successful cells per fraction.
    [[nodiscard]] std::vector<SweepRow> rows() const;
    /// fraction,seed,test_score,error
    [[nodiscard]] std::string cells_csv() const;
    /// fraction,cells,mean,stdev
    [[nodiscard]] std::string rows_csv() const;
};

/// Evolves on `train` and returns the test score of the resulting best prompt.
using CellRunner = std::function<double(const std::vector<TaskInstance>& train,
                                        const std::vector<TaskInstance>& test, std::uint64_t seed)>;

/// Every (fraction, seed) cell: seeded split into A and B, then `run` on (A, B). Cell failures
/// are recorded and the sweep continues.
SweepResult generalization_sweep(const std::vector<TaskInstance>& instances, const std::vector<double>& fractions,
                                 const std::vector<std::uint64_t>& seeds, const CellRunner& run);

/// Throws InvariantError when an id appears on both sides.
void audit_disjoint(const std::vector<TaskInstance>& train, const std::vector<TaskInstance>& test);

/// Mean f_task of `prompt` over `instances`.
double evaluate_prompt(const TaskPrompt& prompt, const std::vector<TaskInstance>& instances,
                       const SolvePipeline& solver, std::size_t workers = 1);

/// CellRunner backed by a fresh Session per cell, seeded with the cell seed.
CellRunner session_cell_runner(ExperimentConfig base);

} // namespace promptevo
