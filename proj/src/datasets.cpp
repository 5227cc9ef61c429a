// SPDX-License-Identifier: Apache-2.0
#include <promptevo/datasets.hpp>
#include <promptevo/error.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>

namespace promptevo
{

std::string_view to_string(ScorerKind kind)
{
    switch (kind)
    {
        case ScorerKind::exact_match: return "exact_match";
        case ScorerKind::numeric_tolerance: return "numeric_tolerance";
        case ScorerKind::multiple_choice: return "multiple_choice";
        case ScorerKind::count_accuracy: return "count_accuracy";
    }
    return "unknown";
}

ScorerKind scorer_kind_from_string(std::string_view name)
{
    for (auto kind: {ScorerKind::exact_match, ScorerKind::numeric_tolerance, ScorerKind::multiple_choice,
                     ScorerKind::count_accuracy})
        if (to_string(kind) == name)
            return kind;
    throw ConfigError("unknown scorer '" + std::string(name) + "'");
}

Manifest Manifest::from_json(const nlohmann::json& j, const std::filesystem::path& base_dir)
{
    Manifest m;
    try
    {
        if (!j.contains("scorer"))
            throw ConfigError("manifest must declare a scorer");
        m.scorer.kind = scorer_kind_from_string(j.at("scorer").get<std::string>());
        m.scorer.tolerance = j.value("tolerance", m.scorer.tolerance);
        m.scorer.graded_count = j.value("graded_count", false);
        m.max_bad_fraction = j.value("max_bad_fraction", m.max_bad_fraction);
        if (j.contains("fields"))
        {
            const auto& f = j.at("fields");
            m.id_field = f.value("id", m.id_field);
            m.question_field = f.value("question", m.question_field);
            m.images_field = f.value("images", m.images_field);
            m.answer_field = f.value("answer", m.answer_field);
            m.metadata_field = f.value("metadata", m.metadata_field);
        }
        if (j.contains("image_root"))
            m.image_root = base_dir / j.at("image_root").get<std::string>();
    }
    catch (const nlohmann::json::exception& e)
    {
        throw ConfigError(std::string("invalid manifest: ") + e.what());
    }
    if (!(m.scorer.tolerance >= 0.0))
        throw ConfigError("manifest tolerance must be non-negative");
    return m;
}

Manifest Manifest::from_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open manifest " + path.string());
    try
    {
        return from_json(nlohmann::json::parse(in), path.parent_path());
    }
    catch (const nlohmann::json::parse_error& e)
    {
        throw ConfigError("manifest " + path.string() + ": " + e.what());
    }
}

namespace
{

std::string field_as_string(const nlohmann::json& value)
{
    if (value.is_string())
        return value.get<std::string>();
    if (value.is_number_integer())
        return std::to_string(value.get<long long>());
    if (value.is_number())
        return value.dump();
    throw InputError("expected a string or number");
}

TaskInstance parse_record(const nlohmann::json& record, const Manifest& manifest,
                          const std::filesystem::path& image_root)
{
    if (!record.is_object())
        throw InputError("record is not an object");
    TaskInstance inst;
    if (!record.contains(manifest.id_field))
        throw InputError("missing field '" + manifest.id_field + "'");
    inst.id = field_as_string(record.at(manifest.id_field));
    if (inst.id.empty())
        throw InputError("empty id");
    if (!record.contains(manifest.question_field))
        throw InputError("missing field '" + manifest.question_field + "'");
    inst.question_text = record.at(manifest.question_field).get<std::string>();
    if (!record.contains(manifest.answer_field) || record.at(manifest.answer_field).is_null())
        throw InputError("missing gold answer field '" + manifest.answer_field + "'");
    inst.gold_answer = field_as_string(record.at(manifest.answer_field));
    if (inst.gold_answer.empty())
        throw InputError("empty gold answer");
    inst.scorer = manifest.scorer;
    if (record.contains("scorer"))
        inst.scorer.kind = scorer_kind_from_string(record.at("scorer").get<std::string>());
    if (record.contains(manifest.images_field))
    {
        const auto& images = record.at(manifest.images_field);
        auto add = [&](const nlohmann::json& p) {
            auto path = std::filesystem::path(p.get<std::string>());
            if (path.is_relative())
                path = image_root / path;
            std::ifstream probe(path, std::ios::binary);
            if (!probe)
                throw InputError("unreadable image " + path.string());
            inst.image_paths.push_back(path);
        };
        if (images.is_array())
            for (const auto& p: images)
                add(p);
        else if (!images.is_null())
            add(images);
    }
    if (record.contains(manifest.metadata_field) && record.at(manifest.metadata_field).is_object())
        for (const auto& [k, v]: record.at(manifest.metadata_field).items())
            inst.metadata[k] = v.is_string() ? v.get<std::string>() : v.dump();
    return inst;
}

} // namespace

LoadedTask load_task(const std::filesystem::path& path, const Manifest& manifest)
{
    std::ifstream in(path);
    if (!in)
        throw LoadError("cannot open task file " + path.string());
    const auto image_root = manifest.image_root.value_or(path.parent_path());
    LoadedTask result;
    std::set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    std::size_t records = 0;
    while (std::getline(in, line))
    {
        ++line_no;
        if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); }))
            continue;
        ++records;
        try
        {
            auto inst = parse_record(nlohmann::json::parse(line), manifest, image_root);
            if (!seen.insert(inst.id).second)
                throw InputError("duplicate id '" + inst.id + "'");
            result.instances.push_back(std::move(inst));
        }
        catch (const nlohmann::json::exception& e)
        {
            result.rejected.push_back({line_no, e.what()});
        }
        catch (const Error& e)
        {
            result.rejected.push_back({line_no, e.what()});
        }
    }
    if (records == 0)
        throw LoadError("task file " + path.string() + " has no records");
    if (static_cast<double>(result.rejected.size()) > manifest.max_bad_fraction * static_cast<double>(records) ||
        result.instances.empty())
    {
        std::ostringstream msg;
        msg << path.string() << ": " << result.rejected.size() << " of " << records << " records rejected";
        for (const auto& d: result.rejected)
            msg << "\n  line " << d.line << ": " << d.message;
        throw LoadError(msg.str());
    }
    return result;
}

Split split(const std::vector<TaskInstance>& instances, double train_fraction, std::uint64_t seed)
{
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw PreconditionError("train fraction must be in (0, 1)");
    const auto n = instances.size();
    if (n < 2)
        throw PreconditionError("splitting needs at least two instances");
    auto train_size = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
    train_size = std::clamp<std::size_t>(train_size, 1, n - 1);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t {0});
    auto rng = Rng(seed).derive("datasets.split");
    rng.shuffle(order);
    std::vector<bool> in_train(n, false);
    for (std::size_t i = 0; i < train_size; ++i)
        in_train[order[i]] = true;

    Split s;
    for (std::size_t i = 0; i < n; ++i)
        (in_train[i] ? s.train : s.test).push_back(instances[i].id);
    return s;
}

std::vector<TaskInstance> select(const std::vector<TaskInstance>& instances, const std::vector<std::string>& ids)
{
    std::map<std::string, const TaskInstance*> by_id;
    for (const auto& inst: instances)
        by_id.emplace(inst.id, &inst);
    std::vector<TaskInstance> out;
    out.reserve(ids.size());
    for (const auto& id: ids)
    {
        auto it = by_id.find(id);
        if (it == by_id.end())
            throw InputError("unknown instance id '" + id + "'");
        out.push_back(*it->second);
    }
    return out;
}

std::string normalize_answer(std::string_view text)
{
    std::string out;
    bool pending_space = false;
    for (unsigned char c: text)
    {
        if (std::isspace(c))
        {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space)
            out.push_back(' ');
        pending_space = false;
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    while (!out.empty() && (out.back() == '.' || out.back() == '!'))
        out.pop_back();
    return out;
}

std::optional<char> extract_option_letter(std::string_view text)
{
    auto norm = normalize_answer(text);
    static const std::string_view punct = "()[]{}.:,;'\" ";
    const auto first = norm.find_first_not_of(punct);
    if (first == std::string::npos)
        return std::nullopt;
    const auto last = norm.find_last_not_of(punct);
    const auto core = norm.substr(first, last - first + 1);
    if (core.size() == 1 && std::isalpha(static_cast<unsigned char>(core[0])))
        return core[0];
    static const std::regex leading(R"(^\(?([a-z])[).:](\s|$))");
    static const std::regex option(R"(\b(?:option|answer|choice)\s*(?:is\s*)?:?\s*\(?([a-z])\b)");
    std::smatch m;
    if (std::regex_search(core, m, leading) || std::regex_search(core, m, option))
        return m[1].str()[0];
    return std::nullopt;
}

std::optional<double> extract_number(std::string_view text)
{
    static const std::regex number(R"([-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?)");
    std::string cleaned;
    for (char c: text)
        if (c != ',')
            cleaned.push_back(c);
    std::smatch m;
    if (!std::regex_search(cleaned, m, number))
        return std::nullopt;
    try
    {
        return std::stod(m.str());
    }
    catch (const std::exception&)
    {
        return std::nullopt;
    }
}

double score_answer(std::string_view predicted, const TaskInstance& instance)
{
    const auto& spec = instance.scorer;
    switch (spec.kind)
    {
        case ScorerKind::exact_match:
            return normalize_answer(predicted) == normalize_answer(instance.gold_answer) ? 100.0 : 0.0;
        case ScorerKind::multiple_choice:
        {
            const auto pred = extract_option_letter(predicted);
            const auto gold = extract_option_letter(instance.gold_answer);
            return pred && gold && *pred == *gold ? 100.0 : 0.0;
        }
        case ScorerKind::numeric_tolerance:
        {
            const auto pred = extract_number(predicted);
            const auto gold = extract_number(instance.gold_answer);
            if (!pred || !gold)
                return 0.0;
            const double scale = *gold == 0.0 ? 1.0 : std::abs(*gold);
            return std::abs(*pred - *gold) <= spec.tolerance * scale ? 100.0 : 0.0;
        }
        case ScorerKind::count_accuracy:
        {
            const auto pred = extract_number(predicted);
            const auto gold = extract_number(instance.gold_answer);
            if (!pred || !gold || *pred != std::floor(*pred))
                return 0.0;
            if (!spec.graded_count || *gold == 0.0)
                return *pred == *gold ? 100.0 : 0.0;
            return 100.0 * std::max(0.0, 1.0 - std::abs(*pred - *gold) / std::abs(*gold));
        }
    }
    return 0.0;
}

} // namespace promptevo
