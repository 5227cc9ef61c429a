// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <promptevo/rng.hpp>

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace promptevo
{

enum class ScorerKind
{
    exact_match,
    numeric_tolerance,
    multiple_choice,
    count_accuracy,
};

std::string_view to_string(ScorerKind kind);
ScorerKind scorer_kind_from_string(std::string_view name);

struct ScorerSpec
{
    ScorerKind kind = ScorerKind::exact_match;
    /// Relative tolerance for numeric_tolerance (absolute when gold is 0).
    double tolerance = 1e-6;
    /// count_accuracy only: 100 * max(0, 1 - |pred - gold| / gold) instead of exact match.
    bool graded_count = false;

    friend bool operator==(const ScorerSpec&, const ScorerSpec&) = default;
};

struct TaskInstance
{
    std::string id;
    std::string question_text;
    std::vector<std::filesystem::path> image_paths;
    std::string gold_answer;
    ScorerSpec scorer;
    std::map<std::string, std::string> metadata;
};

/// Field mapping and scorer choice for one dataset layout.
struct Manifest
{
    ScorerSpec scorer;
    std::string id_field = "id";
    std::string question_field = "question";
    std::string images_field = "images";
    std::string answer_field = "answer";
    std::string metadata_field = "metadata";
    /// Image paths are resolved against this directory (default: the instance file's directory).
    std::optional<std::filesystem::path> image_root;
    /// Fraction of bad records above which loading aborts.
    double max_bad_fraction = 0.10;

    static Manifest from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
    static Manifest from_file(const std::filesystem::path& path);
};

struct LoadDiagnostic
{
    std::size_t line = 0;
    std::string message;
};

struct LoadedTask
{
    std::vector<TaskInstance> instances;
    std::vector<LoadDiagnostic> rejected;
};

/// Reads one JSON record per line. Blank lines are skipped. Throws LoadError on an empty
/// file or when more than `max_bad_fraction` of records are rejected.
LoadedTask load_task(const std::filesystem::path& path, const Manifest& manifest);

struct Split
{
    std::vector<std::string> train;
    std::vector<std::string> test;
};

/// Seeded uniform partition with |train| = round(fraction * n) clamped to [1, n-1].
/// Each side keeps file order.
Split split(const std::vector<TaskInstance>& instances, double train_fraction, std::uint64_t seed);

/// Instances whose ids are in `ids`, in the order of `ids`. Throws InputError on unknown ids.
std::vector<TaskInstance> select(const std::vector<TaskInstance>& instances, const std::vector<std::string>& ids);

/// Per-instance score in [0, 100].
double score_answer(std::string_view predicted, const TaskInstance& instance);

/// Lowercased, whitespace-collapsed, surrounding punctuation removed.
std::string normalize_answer(std::string_view text);
std::optional<char> extract_option_letter(std::string_view text);
std::optional<double> extract_number(std::string_view text);

} // namespace promptevo
