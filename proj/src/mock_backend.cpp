// SPDX-License-Identifier: Apache-2.0
#include <promptevo/error.hpp>
#include <promptevo/gateway.hpp>
#include <promptevo/hashing.hpp>
#include <promptevo/rng.hpp>

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace promptevo
{

namespace
{

std::vector<std::string> split_args(std::string_view text)
{
    std::vector<std::string> out;
    std::string current;
    for (char c: text)
    {
        if (c == '|')
        {
            out.push_back(current);
            current.clear();
        }
        else
            current.push_back(c);
    }
    out.push_back(current);
    return out;
}

bool is_word_char(char c)
{
    return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}

std::string lower(std::string_view s)
{
    std::string out(s);
    for (auto& c: out)
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string format_number(double value)
{
    if (std::abs(value - std::round(value)) < 1e-12)
        return std::to_string(static_cast<long long>(std::llround(value)));
    std::ostringstream out;
    out.precision(6);
    out << value;
    return out.str();
}

std::string substitute_captures(std::string_view text, const std::vector<std::string>& captures)
{
    std::string out;
    for (std::size_t i = 0; i < text.size(); ++i)
    {
        if (text[i] == '$' && i + 1 < text.size() && std::isdigit(static_cast<unsigned char>(text[i + 1])))
        {
            const auto n = static_cast<std::size_t>(text[i + 1] - '0');
            if (n < captures.size())
                out += captures[n];
            ++i;
        }
        else
            out.push_back(text[i]);
    }
    return out;
}

} // namespace

bool contains_word(std::string_view text, std::string_view word)
{
    if (word.empty())
        return false;
    const auto hay = lower(text);
    const auto needle = lower(word);
    for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1))
    {
        const bool left_ok = pos == 0 || !is_word_char(hay[pos - 1]);
        const auto end = pos + needle.size();
        const bool right_ok = end >= hay.size() || !is_word_char(hay[end]);
        if (left_ok && right_ok)
            return true;
    }
    return false;
}

std::string expand_mock_template(std::string_view tmpl, const MockMatch& match)
{
    const auto& req = match.request;
    const auto payload = std::string(payload_of(req.user_text));
    std::string out;
    std::uint64_t directive_index = 0;
    std::size_t pos = 0;
    while (pos < tmpl.size())
    {
        const auto open = tmpl.find("{{", pos);
        if (open == std::string_view::npos)
        {
            out.append(tmpl.substr(pos));
            break;
        }
        out.append(tmpl.substr(pos, open - pos));
        const auto close = tmpl.find("}}", open + 2);
        if (close == std::string_view::npos)
            throw ConfigError("mock template has an unterminated directive");
        const auto body = tmpl.substr(open + 2, close - open - 2);
        pos = close + 2;
        const auto colon = body.find(':');
        const auto name = std::string(body.substr(0, colon));
        const auto args =
            colon == std::string_view::npos ? std::vector<std::string> {}
                                            : split_args(substitute_captures(body.substr(colon + 1), match.captures));
        Rng rng(Rng::derive_seed(match.seed, match.request_key, directive_index++));

        if (name == "system")
            out += req.system_text;
        else if (name == "user")
            out += req.user_text;
        else if (name == "payload")
            out += payload;
        else if (name == "image_count")
            out += std::to_string(req.image_refs.size());
        else if (name.size() == 2 && name[0] == '$' && std::isdigit(static_cast<unsigned char>(name[1])))
        {
            const auto n = static_cast<std::size_t>(name[1] - '0');
            if (n < match.captures.size())
                out += match.captures[n];
        }
        else if (name == "pick")
        {
            if (args.empty())
                throw ConfigError("pick needs at least one option");
            out += args[rng.uniform_index(args.size())];
        }
        else if (name == "append_missing")
        {
            std::vector<std::string> missing;
            for (const auto& word: args)
                if (!contains_word(payload, word))
                    missing.push_back(word);
            out += payload;
            if (!missing.empty())
                out += " " + missing[rng.uniform_index(missing.size())];
        }
        else if (name == "percent_present")
        {
            if (args.empty())
                throw ConfigError("percent_present needs at least one word");
            std::size_t present = 0;
            for (const auto& word: args)
                present += contains_word(payload, word) ? 1 : 0;
            out += format_number(100.0 * static_cast<double>(present) / static_cast<double>(args.size()));
        }
        else if (name == "when_system_has")
        {
            if (args.size() != 3)
                throw ConfigError("when_system_has needs word|then|else");
            out += contains_word(req.system_text, args[0]) ? args[1] : args[2];
        }
        else
            throw ConfigError("unknown mock directive '" + name + "'");
    }
    return out;
}

MockBackend::MockBackend(std::vector<MockRule> rules, std::uint64_t seed, std::string id):
    _seed(seed), _id(std::move(id))
{
    for (auto& rule: rules)
    {
        CompiledRule compiled {std::move(rule), std::nullopt};
        if (!compiled.rule.pattern.empty())
        {
            try
            {
                compiled.regex.emplace(compiled.rule.pattern, std::regex::ECMAScript);
            }
            catch (const std::regex_error& e)
            {
                throw ConfigError("invalid mock pattern '" + compiled.rule.pattern + "': " + e.what());
            }
        }
        _rules.push_back(std::move(compiled));
    }
}

BackendReply MockBackend::generate(const CompletionRequest& request, const ImageStore& images)
{
    ++_calls;
    const auto haystack = request.system_text + "\n" + request.user_text;
    for (const auto& compiled: _rules)
    {
        if (compiled.rule.role && *compiled.rule.role != request.role)
            continue;
        std::vector<std::string> captures;
        if (compiled.regex)
        {
            std::smatch m;
            if (!std::regex_search(haystack, m, *compiled.regex))
                continue;
            for (const auto& group: m)
                captures.push_back(group.str());
        }
        // Key excludes image handles so output depends on content only.
        ContentHasher hasher;
        hasher.field(to_string(request.role)).field(request.system_text).field(request.user_text);
        for (auto handle: request.image_refs)
            hasher.field(images.content_hash(handle));
        const MockMatch match {request, hasher.hex_digest(), _seed, std::move(captures)};
        auto text = compiled.rule.responder ? compiled.rule.responder(match)
                                            : expand_mock_template(compiled.rule.response_template, match);
        return BackendReply {std::move(text), false};
    }
    throw ScriptGapError(std::string("mock script has no rule for ") + std::string(to_string(request.role)) +
                         " request: " + request.user_text.substr(0, 160));
}

std::shared_ptr<MockBackend> mock_program(const nlohmann::json& script, std::uint64_t seed)
{
    if (!script.contains("rules") || !script.at("rules").is_array())
        throw ConfigError("mock script needs a 'rules' array");
    std::vector<MockRule> rules;
    for (const auto& entry: script.at("rules"))
    {
        MockRule rule;
        if (entry.contains("role"))
            rule.role = role_from_string(entry.at("role").get<std::string>());
        rule.pattern = entry.value("match", std::string {});
        if (!entry.contains("respond"))
            throw ConfigError("mock rule is missing 'respond'");
        rule.response_template = entry.at("respond").get<std::string>();
        rules.push_back(std::move(rule));
    }
    const auto script_seed = script.value("seed", std::uint64_t {0});
    return std::make_shared<MockBackend>(std::move(rules), splitmix64(seed ^ script_seed));
}

std::shared_ptr<MockBackend> mock_program_file(const std::filesystem::path& path, std::uint64_t seed)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open mock script " + path.string());
    try
    {
        return mock_program(nlohmann::json::parse(in), seed);
    }
    catch (const nlohmann::json::exception& e)
    {
        throw ConfigError("mock script " + path.string() + ": " + e.what());
    }
}

std::shared_ptr<MockBackend> identity_backend()
{
    return std::make_shared<MockBackend>(std::vector<MockRule> {MockRule {std::nullopt, "", "{{user}}", {}}}, 0,
                                         "identity");
}

} // namespace promptevo
