// SPDX-License-Identifier: Apache-2.0
#include <promptevo/error.hpp>
#include <promptevo/hashing.hpp>
#include <promptevo/report.hpp>

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace promptevo
{

namespace fs = std::filesystem;

namespace
{

std::string read_file(const fs::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw InputError("cannot read " + path.string());
    std::stringstream buf;
    buf << f.rdbuf();
    return buf.str();
}

void write_atomic(const fs::path& path, std::string_view content)
{
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f)
            throw InputError("cannot write " + tmp.string());
        f << content;
        f.flush();
        if (!f)
            throw InputError("short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

void append_line(const fs::path& path, std::string_view line)
{
    std::ofstream f(path, std::ios::binary | std::ios::app);
    if (!f)
        throw InputError("cannot append to " + path.string());
    f << line << '\n';
}

std::vector<std::string> read_lines(const fs::path& path)
{
    std::vector<std::string> lines;
    if (!fs::exists(path))
        return lines;
    std::ifstream f(path, std::ios::binary);
    std::string line;
    while (std::getline(f, line))
        lines.push_back(line);
    return lines;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines, std::size_t count)
{
    std::string out;
    for (std::size_t i = 0; i < count; ++i)
        out += lines[i] + "\n";
    write_atomic(path, out);
}

std::string fmt_number(double v)
{
    std::ostringstream s;
    s << std::setprecision(10) << v;
    return s.str();
}

std::string snapshot_name(std::uint64_t generation)
{
    std::ostringstream s;
    s << "step_" << std::setw(6) << std::setfill('0') << generation << ".json";
    return s.str();
}

std::string snapshot_checksum(const Json& body)
{
    return sha256_hex(body.dump());
}

std::string transcript_line(const TranscriptRecord& r)
{
    return Json {{"request_hash", r.request_hash}, {"role", std::string(to_string(r.role))}, {"response", r.response}}
        .dump();
}

} // namespace

std::vector<CurveRow> curves_from(const std::vector<GenerationEvent>& history)
{
    std::vector<CurveRow> rows;
    rows.reserve(history.size());
    for (const auto& e: history)
        rows.push_back({e.generation + 1, e.best_f_total, e.mean_f_total, e.best_f_task, e.mean_f_task,
                        e.tool_use_fraction});
    return rows;
}

std::string curves_csv(const std::vector<GenerationEvent>& history)
{
    std::ostringstream out;
    out << kCurvesHeader << "\n";
    for (const auto& r: curves_from(history))
        out << r.step << ',' << fmt_number(r.best_f_total) << ',' << fmt_number(r.mean_f_total) << ','
            << fmt_number(r.best_f_task) << ',' << fmt_number(r.mean_f_task) << ','
            << fmt_number(r.tool_use_fraction) << "\n";
    return out.str();
}

void emit_curves(const std::vector<GenerationEvent>& history, const fs::path& path)
{
    if (history.empty())
        throw PreconditionError("cannot emit curves for an empty history");
    write_atomic(path, curves_csv(history));
}

RunSummary summarize(const RunConfig& config, const EvolveResult& result, std::optional<double> test_score)
{
    RunSummary s;
    s.config = config;
    s.steps = result.history.size();
    for (const auto& e: result.history)
    {
        s.best_f_total.push_back(e.best_f_total);
        s.mean_f_total.push_back(e.mean_f_total);
        s.tool_use_fraction.push_back(e.tool_use_fraction);
        s.mutation_failures += e.mutation_failed ? 1 : 0;
    }
    s.best_prompt = result.best.prompt;
    s.best_train_f_total = result.best.report.f_total;
    s.test_score = test_score;
    return s;
}

void to_json(Json& j, const RunSummary& s)
{
    j = Json {
        {"config", s.config},
        {"steps", s.steps},
        {"best_f_total", s.best_f_total},
        {"mean_f_total", s.mean_f_total},
        {"tool_use_fraction", s.tool_use_fraction},
        {"best_prompt", s.best_prompt},
        {"best_train_f_total", s.best_train_f_total},
        {"test_score", s.test_score ? Json(*s.test_score) : Json(nullptr)},
        {"mutation_failures", s.mutation_failures},
    };
}

std::string event_chain_hash(const std::string& prev, const Json& event, std::uint64_t transcript_count,
                             const std::string& transcript_head)
{
    ContentHasher h;
    h.field(prev).field(event.dump()).field(transcript_count).field(transcript_head);
    return h.hex_digest();
}

std::string transcript_chain_hash(const std::string& prev, const std::string& line)
{
    ContentHasher h;
    h.field(prev).field(line);
    return h.hex_digest();
}

RunDirectory::RunDirectory(fs::path root, std::string config_text, std::size_t snapshot_every):
    _root(std::move(root)), _config_hash(sha256_hex(config_text)), _snapshot_every(snapshot_every)
{
    if (_snapshot_every < 1)
        throw ConfigError("snapshot_every must be positive");
    fs::create_directories(_root / run_files::snapshots);
    const auto config_path = _root / run_files::config;
    if (fs::exists(config_path))
    {
        if (read_file(config_path) != config_text)
            throw ConfigError("run directory " + _root.string() +
                              " was created with a different configuration; refusing to resume");
    }
    else
        write_atomic(config_path, config_text);
}

std::optional<ResumeState> RunDirectory::resume()
{
    std::vector<fs::path> snapshots;
    for (const auto& entry: fs::directory_iterator(_root / run_files::snapshots))
        if (entry.path().extension() == ".json")
            snapshots.push_back(entry.path());
    if (snapshots.empty())
        return std::nullopt;
    std::sort(snapshots.begin(), snapshots.end());
    const auto& latest = snapshots.back();

    Json doc;
    try
    {
        doc = Json::parse(read_file(latest));
    }
    catch (const Json::exception& e)
    {
        throw ChecksumError("snapshot " + latest.string() + " is not valid JSON: " + e.what());
    }
    if (!doc.contains("checksum") || !doc.contains("body"))
        throw ChecksumError("snapshot " + latest.string() + " lacks a checksum");
    const auto& body = doc.at("body");
    if (snapshot_checksum(body) != doc.at("checksum").get<std::string>())
        throw ChecksumError("snapshot " + latest.string() + " fails its checksum; refusing to resume");
    if (body.at("config_hash").get<std::string>() != _config_hash)
        throw ChecksumError("snapshot " + latest.string() + " belongs to a different configuration");

    const auto events_count = body.at("events_count").get<std::uint64_t>();
    const auto transcript_count = body.at("transcript_count").get<std::uint64_t>();
    auto event_lines = read_lines(_root / run_files::events);
    auto transcript_lines = read_lines(_root / run_files::transcript);
    if (event_lines.size() < events_count || transcript_lines.size() < transcript_count)
        throw ChecksumError("event log or transcript is shorter than the snapshot records");

    std::string head;
    for (std::size_t i = 0; i < transcript_count; ++i)
        head = transcript_chain_hash(head, transcript_lines[i]);
    if (head != body.at("transcript_head").get<std::string>())
        throw ChecksumError("transcript does not match the snapshot");

    std::vector<GenerationEvent> history;
    std::string prev;
    for (std::size_t i = 0; i < events_count; ++i)
    {
        const auto rec = Json::parse(event_lines[i]);
        const auto expect = event_chain_hash(prev, rec.at("event"), rec.at("transcript_count").get<std::uint64_t>(),
                                             rec.at("transcript_head").get<std::string>());
        if (rec.at("prev").get<std::string>() != prev || rec.at("hash").get<std::string>() != expect)
            throw ChecksumError("event log fails verification at step " + std::to_string(i));
        history.push_back(rec.at("event").get<GenerationEvent>());
        prev = expect;
    }
    if (prev != body.at("events_head").get<std::string>())
        throw ChecksumError("event log does not match the snapshot");

    auto population = body.at("population").get<Population>();
    if (population.generation() != events_count)
        throw ChecksumError("snapshot generation does not match its event count");

    // Drop anything recorded after the snapshot; those steps are re-run.
    write_lines(_root / run_files::events, event_lines, events_count);
    write_lines(_root / run_files::transcript, transcript_lines, transcript_count);
    for (const auto& s: snapshots)
        if (s.filename().string() > latest.filename().string())
            fs::remove(s);
    _events = events_count;
    _events_head = prev;
    _transcript = transcript_count;
    _transcript_head = head;
    return ResumeState {std::move(population), std::move(history)};
}

void RunDirectory::start(const Population& initial)
{
    write_atomic(_root / run_files::events, "");
    write_atomic(_root / run_files::transcript, "");
    _events = 0;
    _events_head.clear();
    _transcript = 0;
    _transcript_head.clear();
    write_snapshot(initial);
}

void RunDirectory::write_snapshot(const Population& population)
{
    const Json body {
        {"config_hash", _config_hash},
        {"generation", population.generation()},
        {"population", population},
        {"events_count", _events},
        {"events_head", _events_head},
        {"transcript_count", _transcript},
        {"transcript_head", _transcript_head},
    };
    const Json doc {{"body", body}, {"checksum", snapshot_checksum(body)}};
    write_atomic(_root / run_files::snapshots / snapshot_name(population.generation()), doc.dump(1));
}

void RunDirectory::on_step(const Population& after, const GenerationEvent& event, const TranscriptBuffer& transcript)
{
    if (event.generation != _events)
        throw InvariantError("event for generation " + std::to_string(event.generation) + " out of order");
    std::string lines;
    for (const auto& r: transcript.records())
    {
        const auto line = transcript_line(r);
        _transcript_head = transcript_chain_hash(_transcript_head, line);
        ++_transcript;
        lines += line + "\n";
    }
    if (!lines.empty())
    {
        std::ofstream f(_root / run_files::transcript, std::ios::binary | std::ios::app);
        f << lines;
    }
    const Json ev = event;
    const auto hash = event_chain_hash(_events_head, ev, _transcript, _transcript_head);
    const Json rec {{"step", _events},      {"event", ev},
                    {"prev", _events_head}, {"hash", hash},
                    {"transcript_count", _transcript}, {"transcript_head", _transcript_head}};
    append_line(_root / run_files::events, rec.dump());
    _events_head = hash;
    ++_events;
    if (after.generation() % _snapshot_every == 0)
        write_snapshot(after);
}

void RunDirectory::on_abort(const Population& current)
{
    spdlog::error("backend unavailable at generation {}; snapshot written to {}", current.generation(),
                  _root.string());
    write_snapshot(current);
}

void RunDirectory::finish(const RunConfig& config, const EvolveResult& result, std::optional<double> test_score)
{
    if (result.final_population.generation() % _snapshot_every != 0)
        write_snapshot(result.final_population);
    if (!result.history.empty())
        emit_curves(result.history, _root / run_files::curves);
    write_atomic(_root / run_files::best_prompt, result.best.prompt.text + "\n");
    const Json summary = summarize(config, result, test_score);
    write_atomic(_root / run_files::summary, summary.dump(2) + "\n");
}

ReplayReport verify_run(const fs::path& root)
{
    ReplayReport report;
    const auto fail = [&](std::optional<std::uint64_t> step, std::string message) {
        report.ok = false;
        report.divergent_step = step;
        report.message = std::move(message);
        return report;
    };
    if (!fs::exists(root / run_files::config))
        return fail(std::nullopt, "missing " + std::string(run_files::config));
    if (!fs::exists(root / run_files::events))
        return fail(std::nullopt, "missing " + std::string(run_files::events));
    const auto config_hash = sha256_hex(read_file(root / run_files::config));

    const auto transcript_lines = read_lines(root / run_files::transcript);
    std::vector<std::string> transcript_heads {""};
    for (const auto& line: transcript_lines)
        transcript_heads.push_back(transcript_chain_hash(transcript_heads.back(), line));

    const auto event_lines = read_lines(root / run_files::events);
    std::vector<GenerationEvent> history;
    std::vector<std::string> heads {""};
    for (std::size_t i = 0; i < event_lines.size(); ++i)
    {
        try
        {
            const auto rec = Json::parse(event_lines[i]);
            const auto count = rec.at("transcript_count").get<std::uint64_t>();
            const auto thead = rec.at("transcript_head").get<std::string>();
            if (rec.at("step").get<std::uint64_t>() != i)
                return fail(i, "step index out of sequence");
            if (rec.at("prev").get<std::string>() != heads.back())
                return fail(i, "broken hash chain");
            const auto expect = event_chain_hash(heads.back(), rec.at("event"), count, thead);
            if (rec.at("hash").get<std::string>() != expect)
                return fail(i, "event record does not match its hash");
            if (count >= transcript_heads.size() || transcript_heads[count] != thead)
                return fail(i, "transcript does not match the event log");
            auto event = rec.at("event").get<GenerationEvent>();
            if (event.generation != i)
                return fail(i, "event generation out of sequence");
            if (event.winner_fitness() < event.loser_fitness())
                return fail(i, "winner fitness below loser fitness");
            history.push_back(std::move(event));
            heads.push_back(expect);
        }
        catch (const Json::exception& e)
        {
            return fail(i, std::string("malformed event record: ") + e.what());
        }
        catch (const Error& e)
        {
            return fail(i, std::string("malformed event record: ") + e.what());
        }
    }
    report.events = history.size();

    const auto snapshot_dir = root / run_files::snapshots;
    if (fs::exists(snapshot_dir))
        for (const auto& entry: fs::directory_iterator(snapshot_dir))
        {
            if (entry.path().extension() != ".json")
                continue;
            try
            {
                const auto doc = Json::parse(read_file(entry.path()));
                const auto& body = doc.at("body");
                const auto n = body.at("events_count").get<std::uint64_t>();
                if (snapshot_checksum(body) != doc.at("checksum").get<std::string>())
                    return fail(n, "snapshot " + entry.path().filename().string() + " fails its checksum");
                if (body.at("config_hash").get<std::string>() != config_hash)
                    return fail(n, "snapshot " + entry.path().filename().string() + " has a foreign config hash");
                if (n >= heads.size() || heads[n] != body.at("events_head").get<std::string>())
                    return fail(n, "snapshot " + entry.path().filename().string() + " disagrees with the event log");
            }
            catch (const Json::exception& e)
            {
                return fail(std::nullopt, "malformed snapshot " + entry.path().filename().string() + ": " + e.what());
            }
        }

    if (fs::exists(root / run_files::curves))
    {
        const auto recorded = read_lines(root / run_files::curves);
        std::vector<std::string> derived;
        std::istringstream in(curves_csv(history));
        for (std::string line; std::getline(in, line);)
            derived.push_back(line);
        for (std::size_t i = 0; i < std::max(recorded.size(), derived.size()); ++i)
            if (i >= recorded.size() || i >= derived.size() || recorded[i] != derived[i])
                return fail(i == 0 ? 0 : i - 1, "curve table differs from the event log");
    }

    if (fs::exists(root / run_files::summary))
    {
        try
        {
            const auto summary = Json::parse(read_file(root / run_files::summary));
            if (summary.at("steps").get<std::size_t>() != history.size())
                return fail(std::nullopt, "summary step count differs from the event log");
            const auto series = summary.at("best_f_total").get<std::vector<double>>();
            for (std::size_t i = 0; i < history.size(); ++i)
                if (series.at(i) != history[i].best_f_total)
                    return fail(i, "summary series differs from the event log");
            if (fs::exists(root / run_files::best_prompt) &&
                read_file(root / run_files::best_prompt) !=
                    summary.at("best_prompt").at("text").get<std::string>() + "\n")
                return fail(std::nullopt, "best prompt file differs from the summary");
        }
        catch (const Json::exception& e)
        {
            return fail(std::nullopt, std::string("malformed summary: ") + e.what());
        }
    }
    report.message = "verified " + std::to_string(history.size()) + " events";
    return report;
}

std::vector<SweepRow> SweepResult::rows() const
{
    std::vector<double> fractions;
    for (const auto& c: cells)
        if (std::find(fractions.begin(), fractions.end(), c.fraction) == fractions.end())
            fractions.push_back(c.fraction);
    std::vector<SweepRow> out;
    for (auto f: fractions)
    {
        std::vector<double> scores;
        for (const auto& c: cells)
            if (c.fraction == f && c.test_score)
                scores.push_back(*c.test_score);
        SweepRow row {f, scores.size(), 0.0, 0.0};
        if (!scores.empty())
        {
            for (auto s: scores)
                row.mean += s;
            row.mean /= static_cast<double>(scores.size());
            if (scores.size() > 1)
            {
                double ss = 0.0;
                for (auto s: scores)
                    ss += (s - row.mean) * (s - row.mean);
                row.stdev = std::sqrt(ss / static_cast<double>(scores.size() - 1));
            }
        }
        out.push_back(row);
    }
    return out;
}

std::string SweepResult::cells_csv() const
{
    std::ostringstream out;
    out << "fraction,seed,test_score,error\n";
    for (const auto& c: cells)
    {
        auto error = c.error;
        std::replace(error.begin(), error.end(), ',', ';');
        std::replace(error.begin(), error.end(), '\n', ' ');
        out << fmt_number(c.fraction) << ',' << c.seed << ',' << (c.test_score ? fmt_number(*c.test_score) : "")
            << ',' << error << "\n";
    }
    return out.str();
}

std::string SweepResult::rows_csv() const
{
    std::ostringstream out;
    out << "fraction,cells,mean,stdev\n";
    for (const auto& r: rows())
        out << fmt_number(r.fraction) << ',' << r.cells << ',' << fmt_number(r.mean) << ',' << fmt_number(r.stdev)
            << "\n";
    return out.str();
}

void audit_disjoint(const std::vector<TaskInstance>& train, const std::vector<TaskInstance>& test)
{
    std::set<std::string> ids;
    for (const auto& i: train)
        ids.insert(i.id);
    for (const auto& i: test)
        if (ids.count(i.id))
            throw InvariantError("instance " + i.id + " appears in both train and test sets");
}

SweepResult generalization_sweep(const std::vector<TaskInstance>& instances, const std::vector<double>& fractions,
                                 const std::vector<std::uint64_t>& seeds, const CellRunner& run)
{
    for (auto f: fractions)
        if (!(f > 0.0 && f < 1.0))
            throw PreconditionError("sweep fractions must lie in (0,1)");
    SweepResult result;
    for (auto f: fractions)
        for (auto seed: seeds)
        {
            SweepCell cell {f, seed, std::nullopt, {}};
            try
            {
                const auto parts = split(instances, f, seed);
                const auto train = select(instances, parts.train);
                const auto test = select(instances, parts.test);
                audit_disjoint(train, test);
                cell.test_score = run(train, test, seed);
            }
            catch (const std::exception& e)
            {
                spdlog::warn("sweep cell fraction={} seed={} failed: {}", f, seed, e.what());
                cell.error = e.what();
            }
            result.cells.push_back(std::move(cell));
        }
    return result;
}

double evaluate_prompt(const TaskPrompt& prompt, const std::vector<TaskInstance>& instances,
                       const SolvePipeline& solver, std::size_t workers)
{
    if (instances.empty())
        throw PreconditionError("cannot evaluate on an empty instance set");
    return score_task(prompt, instances, solver, workers).f_task;
}

CellRunner session_cell_runner(ExperimentConfig base)
{
    return [base = std::move(base)](const std::vector<TaskInstance>& train, const std::vector<TaskInstance>& test,
                                    std::uint64_t seed) {
        audit_disjoint(train, test);
        auto config = base;
        config.run.rng_seed = seed;
        Session session(config);
        const EngineContext ctx {session.config().run, session.evaluator(), session.operators(), train};
        const auto result = evolve(session.initial_population(), ctx);
        return evaluate_prompt(result.best.prompt, test, session.solver(), session.config().run.workers);
    };
}

} // namespace promptevo
