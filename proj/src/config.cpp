// SPDX-License-Identifier: Apache-2.0
#include <promptevo/config.hpp>
#include <promptevo/error.hpp>
#include <promptevo/hashing.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace promptevo
{

namespace
{

std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

const std::set<std::string>& path_keys()
{
    static const std::set<std::string> keys {
        "dataset.manifest", "dataset.instances", "seeds.task_prompts", "seeds.mutators",
        "seeds.hypermutators", "critic.template", "mock.script", "gateway.cache_dir",
    };
    return keys;
}

bool is_declared(const std::string& key)
{
    const auto& keys = declared_config_keys();
    return std::find(keys.begin(), keys.end(), key) != keys.end();
}

void parse_into(ConfigValues& out, std::string_view text, const std::filesystem::path& base_dir,
                std::vector<std::filesystem::path>& stack, const std::string& where)
{
    std::istringstream in {std::string(text)};
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line))
    {
        ++number;
        const auto content = trim(line);
        if (content.empty() || content.front() == '#')
            continue;
        const auto eq = content.find('=');
        if (eq == std::string::npos)
            throw ConfigError(where + ":" + std::to_string(number) + ": expected key = value");
        const auto key = trim(std::string_view(content).substr(0, eq));
        const auto value = trim(std::string_view(content).substr(eq + 1));
        if (key == "include")
        {
            auto target = std::filesystem::path(value);
            if (target.is_relative())
                target = base_dir / target;
            target = std::filesystem::weakly_canonical(target);
            if (std::find(stack.begin(), stack.end(), target) != stack.end())
                throw ConfigError(where + ":" + std::to_string(number) + ": include cycle through " +
                                  target.string());
            std::ifstream f(target);
            if (!f)
                throw ConfigError(where + ":" + std::to_string(number) + ": cannot read include " +
                                  target.string());
            std::stringstream buf;
            buf << f.rdbuf();
            stack.push_back(target);
            parse_into(out, buf.str(), target.parent_path(), stack, target.string());
            stack.pop_back();
            continue;
        }
        if (key == "api_key" || key == "live.api_key")
            throw ConfigError(where + ":" + std::to_string(number) +
                              ": credentials are read from PROMPTEVO_API_KEY, not from config files");
        if (!is_declared(key))
            throw ConfigError(where + ":" + std::to_string(number) + ": unknown key '" + key + "'");
        out.values[key] = value;
        out.origin[key] = base_dir;
    }
}

template <typename T>
T parse_number(const std::string& key, const std::string& text, std::vector<std::string>& problems)
{
    try
    {
        std::size_t used = 0;
        T value {};
        if constexpr (std::is_floating_point_v<T>)
            value = static_cast<T>(std::stod(text, &used));
        else
        {
            if (!text.empty() && text.front() == '-')
                throw std::invalid_argument("negative");
            value = static_cast<T>(std::stoull(text, &used));
        }
        if (used != text.size())
            throw std::invalid_argument("trailing characters");
        return value;
    }
    catch (const std::exception&)
    {
        problems.push_back(key + ": '" + text + "' is not a valid " +
                           (std::is_floating_point_v<T> ? "number" : "non-negative integer"));
        return T {};
    }
}

bool parse_bool(const std::string& key, const std::string& text, std::vector<std::string>& problems)
{
    if (text == "true" || text == "on" || text == "1" || text == "yes")
        return true;
    if (text == "false" || text == "off" || text == "0" || text == "no")
        return false;
    problems.push_back(key + ": '" + text + "' is not a boolean");
    return false;
}

std::filesystem::path resolve(const ConfigValues& values, const std::string& key)
{
    std::filesystem::path p(values.values.at(key));
    if (p.is_relative())
    {
        const auto it = values.origin.find(key);
        p = (it != values.origin.end() ? it->second : std::filesystem::current_path()) / p;
    }
    return std::filesystem::absolute(p).lexically_normal();
}

std::vector<std::string> split_words(const std::string& text, char sep)
{
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(text);
    while (std::getline(in, item, sep))
        if (auto t = trim(item); !t.empty())
            out.push_back(t);
    return out;
}

} // namespace

const std::vector<std::string>& run_config_keys()
{
    static const std::vector<std::string> keys {
        "population_size",
        "generations",
        "lambda",
        "minibatch_size",
        "operator_weights.first_order_mutation",
        "operator_weights.zero_order_mutation",
        "operator_weights.first_order_hyper",
        "operator_weights.zero_order_hyper",
        "rng_seed",
        "tool_use_enabled",
        "max_tool_calls",
        "max_reingest_passes",
        "task_description",
        "fixed_minibatch",
        "snapshot_every",
        "tool_timeout_ms",
        "workers",
    };
    return keys;
}

const std::vector<std::string>& declared_config_keys()
{
    static const std::vector<std::string> keys = [] {
        auto k = run_config_keys();
        for (const char* extra: {"dataset.manifest",
                                 "dataset.instances",
                                 "dataset.train_fraction",
                                 "seeds.task_prompts",
                                 "seeds.mutators",
                                 "seeds.hypermutators",
                                 "critic.template",
                                 "critic.weights",
                                 "backend",
                                 "mock.script",
                                 "live.url",
                                 "live.model",
                                 "live.model.mutator",
                                 "live.model.hypermutator",
                                 "live.model.solver",
                                 "live.model.tool_synthesizer",
                                 "live.model.critic",
                                 "live.timeout_s",
                                 "executor",
                                 "sandbox.command",
                                 "sandbox.recycle_after",
                                 "gateway.max_attempts",
                                 "gateway.backoff_ms",
                                 "gateway.max_in_flight",
                                 "gateway.requests_per_second",
                                 "gateway.cache_dir"})
            k.emplace_back(extra);
        return k;
    }();
    return keys;
}

ConfigValues parse_config_text(std::string_view text, const std::filesystem::path& base_dir)
{
    ConfigValues out;
    std::vector<std::filesystem::path> stack;
    parse_into(out, text, base_dir, stack, "<config>");
    return out;
}

ConfigValues read_config_file(const std::filesystem::path& path)
{
    std::ifstream f(path);
    if (!f)
        throw ConfigError("cannot read config file " + path.string());
    std::stringstream buf;
    buf << f.rdbuf();
    const auto canonical = std::filesystem::weakly_canonical(path);
    ConfigValues out;
    std::vector<std::filesystem::path> stack {canonical};
    parse_into(out, buf.str(), canonical.parent_path(), stack, path.string());
    return out;
}

void apply_override(ConfigValues& values, std::string_view assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos)
        throw ConfigError("override '" + std::string(assignment) + "' is not of the form key=value");
    const auto key = trim(assignment.substr(0, eq));
    const auto& keys = run_config_keys();
    if (std::find(keys.begin(), keys.end(), key) == keys.end())
        throw ConfigError("override key '" + key + "' is not a run configuration field");
    values.values[key] = trim(assignment.substr(eq + 1));
    values.origin[key] = std::filesystem::current_path();
}

ExperimentConfig build_experiment(const ConfigValues& values)
{
    ExperimentConfig c;
    std::vector<std::string> problems;
    const auto has = [&](const std::string& k) { return values.values.count(k) > 0; };
    const auto get = [&](const std::string& k) { return values.values.at(k); };
    auto& r = c.run;

    if (has("population_size"))
        r.population_size = parse_number<std::size_t>("population_size", get("population_size"), problems);
    if (has("generations"))
        r.generations = parse_number<std::size_t>("generations", get("generations"), problems);
    if (has("lambda"))
        r.lambda = parse_number<double>("lambda", get("lambda"), problems);
    if (has("minibatch_size"))
        r.minibatch_size = parse_number<std::size_t>("minibatch_size", get("minibatch_size"), problems);
    for (auto [key, field]: {std::pair {"operator_weights.first_order_mutation", &OperatorWeights::first_order_mutation},
                             std::pair {"operator_weights.zero_order_mutation", &OperatorWeights::zero_order_mutation},
                             std::pair {"operator_weights.first_order_hyper", &OperatorWeights::first_order_hyper},
                             std::pair {"operator_weights.zero_order_hyper", &OperatorWeights::zero_order_hyper}})
        if (has(key))
            r.operator_weights.*field = parse_number<double>(key, get(key), problems);
    if (has("rng_seed"))
        r.rng_seed = parse_number<std::uint64_t>("rng_seed", get("rng_seed"), problems);
    if (has("tool_use_enabled"))
        r.tool_use_enabled = parse_bool("tool_use_enabled", get("tool_use_enabled"), problems);
    if (has("max_tool_calls"))
        r.max_tool_calls = parse_number<std::size_t>("max_tool_calls", get("max_tool_calls"), problems);
    if (has("max_reingest_passes"))
        r.max_reingest_passes = parse_number<std::size_t>("max_reingest_passes", get("max_reingest_passes"), problems);
    if (has("task_description"))
        r.task_description = get("task_description");
    if (has("fixed_minibatch"))
        r.fixed_minibatch = parse_bool("fixed_minibatch", get("fixed_minibatch"), problems);
    if (has("snapshot_every"))
        r.snapshot_every = parse_number<std::size_t>("snapshot_every", get("snapshot_every"), problems);
    if (has("tool_timeout_ms"))
        r.tool_timeout_ms = parse_number<std::uint64_t>("tool_timeout_ms", get("tool_timeout_ms"), problems);
    if (has("workers"))
        r.workers = parse_number<std::size_t>("workers", get("workers"), problems);

    for (const char* key: {"dataset.manifest", "dataset.instances", "seeds.task_prompts", "seeds.mutators"})
        if (!has(key))
            problems.push_back(std::string(key) + ": required");
    if (has("dataset.manifest"))
        c.manifest = resolve(values, "dataset.manifest");
    if (has("dataset.instances"))
        c.instances = resolve(values, "dataset.instances");
    if (has("dataset.train_fraction"))
    {
        c.train_fraction = parse_number<double>("dataset.train_fraction", get("dataset.train_fraction"), problems);
        if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0))
            problems.emplace_back("dataset.train_fraction: must be in (0,1)");
    }
    if (has("seeds.task_prompts"))
        c.task_prompts = resolve(values, "seeds.task_prompts");
    if (has("seeds.mutators"))
        c.mutators = resolve(values, "seeds.mutators");
    if (has("seeds.hypermutators"))
        c.hypermutators = resolve(values, "seeds.hypermutators");
    else if (r.operator_weights.first_order_hyper > 0.0)
        problems.emplace_back("seeds.hypermutators: required when operator_weights.first_order_hyper > 0");
    if (has("critic.template"))
        c.critic_template = resolve(values, "critic.template");
    if (has("critic.weights"))
    {
        const auto parts = split_words(get("critic.weights"), ',');
        if (parts.size() != 3)
            problems.emplace_back("critic.weights: expected three comma-separated numbers");
        else
            for (std::size_t i = 0; i < 3; ++i)
            {
                c.critic_weights[i] = parse_number<double>("critic.weights", parts[i], problems);
                if (c.critic_weights[i] < 0.0)
                    problems.emplace_back("critic.weights: must be non-negative");
            }
    }

    if (has("backend"))
    {
        if (get("backend") == "mock")
            c.backend = BackendKind::mock;
        else if (get("backend") == "live")
            c.backend = BackendKind::live;
        else
            problems.push_back("backend: '" + get("backend") + "' is not mock or live");
    }
    if (has("mock.script"))
        c.mock_script = resolve(values, "mock.script");
    else if (c.backend == BackendKind::mock)
        problems.emplace_back("mock.script: required for the mock backend");
    if (has("live.url"))
        c.live.url = get("live.url");
    if (has("live.model"))
        c.live.model = get("live.model");
    for (auto role: kAllRoles)
    {
        const auto key = "live.model." + std::string(to_string(role));
        if (has(key))
            c.live.role_models[role] = get(key);
    }
    if (has("live.timeout_s"))
        c.live.timeout = std::chrono::seconds(parse_number<std::uint64_t>("live.timeout_s", get("live.timeout_s"), problems));
    if (c.backend == BackendKind::live && c.live.model.empty() && c.live.role_models.size() != kAllRoles.size())
        problems.emplace_back("live.model: required for the live backend");

    if (has("executor"))
    {
        const auto e = get("executor");
        if (e == "stub")
            c.executor = ExecutorKind::stub;
        else if (e == "sandbox")
            c.executor = ExecutorKind::sandbox;
        else if (e == "none")
            c.executor = ExecutorKind::none;
        else
            problems.push_back("executor: '" + e + "' is not stub, sandbox or none");
    }
    if (has("sandbox.command"))
        c.sandbox_command = split_words(get("sandbox.command"), ' ');
    if (c.executor == ExecutorKind::sandbox && c.sandbox_command.empty())
        problems.emplace_back("sandbox.command: required for the sandbox executor");
    if (has("sandbox.recycle_after"))
        c.sandbox_recycle_after = parse_number<std::size_t>("sandbox.recycle_after", get("sandbox.recycle_after"), problems);

    if (has("gateway.max_attempts"))
        c.gateway_max_attempts =
            static_cast<int>(parse_number<std::size_t>("gateway.max_attempts", get("gateway.max_attempts"), problems));
    if (has("gateway.backoff_ms"))
        c.gateway_backoff_ms = parse_number<std::uint64_t>("gateway.backoff_ms", get("gateway.backoff_ms"), problems);
    if (has("gateway.max_in_flight"))
        c.gateway_max_in_flight =
            parse_number<std::size_t>("gateway.max_in_flight", get("gateway.max_in_flight"), problems);
    if (has("gateway.requests_per_second"))
        c.gateway_requests_per_second =
            parse_number<double>("gateway.requests_per_second", get("gateway.requests_per_second"), problems);
    if (has("gateway.cache_dir"))
        c.cache_dir = resolve(values, "gateway.cache_dir");

    try
    {
        r.validate();
    }
    catch (const ConfigError& e)
    {
        // Re-split so every problem is listed once in the combined message.
        std::istringstream lines(e.what());
        std::string line;
        std::getline(lines, line);
        while (std::getline(lines, line))
            problems.push_back(trim(line));
    }
    if (!problems.empty())
    {
        std::ostringstream msg;
        msg << "invalid configuration:";
        for (const auto& p: problems)
            msg << "\n  " << p;
        throw ConfigError(msg.str());
    }
    return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path, const std::vector<std::string>& overrides)
{
    auto values = read_config_file(path);
    for (const auto& o: overrides)
        apply_override(values, o);
    return build_experiment(values);
}

std::string render_config(const ConfigValues& values)
{
    std::ostringstream out;
    for (const auto& [key, value]: values.values)
    {
        if (path_keys().count(key))
            out << key << " = " << resolve(values, key).string() << "\n";
        else
            out << key << " = " << value << "\n";
    }
    return out.str();
}

std::string config_hash(const ConfigValues& values)
{
    return sha256_hex(render_config(values));
}

std::vector<std::string> read_prompt_list(const std::filesystem::path& path)
{
    std::ifstream f(path);
    if (!f)
        throw ConfigError("cannot read prompt list " + path.string());
    std::vector<std::string> prompts;
    std::string current;
    std::string line;
    const auto flush = [&] {
        if (auto t = trim(current); !t.empty())
            prompts.push_back(t);
        current.clear();
    };
    while (std::getline(f, line))
    {
        const auto t = trim(line);
        if (t.empty())
        {
            flush();
            continue;
        }
        if (t.front() == '#')
            continue;
        if (!current.empty())
            current += "\n";
        current += t;
    }
    flush();
    if (prompts.empty())
        throw ConfigError("prompt list " + path.string() + " is empty");
    return prompts;
}

Session::Session(ExperimentConfig config): _config(std::move(config))
{
    const auto manifest = Manifest::from_file(_config.manifest);
    auto loaded = load_task(_config.instances, manifest);
    _instances = std::move(loaded.instances);
    _rejected = std::move(loaded.rejected);
    _seed_prompts = read_prompt_list(_config.task_prompts);
    _seed_mutators = read_prompt_list(_config.mutators);
    if (!_config.hypermutators.empty())
        _seed_hypers = read_prompt_list(_config.hypermutators);

    GatewayOptions options;
    options.max_attempts = _config.gateway_max_attempts;
    options.base_backoff = std::chrono::milliseconds(_config.gateway_backoff_ms);
    options.max_in_flight = _config.gateway_max_in_flight;
    options.requests_per_second = _config.gateway_requests_per_second;
    options.cache_dir = _config.cache_dir;
    _gateway = std::make_unique<Gateway>(std::make_shared<ImageStore>(), options);

    if (_config.backend == BackendKind::mock)
        _gateway->set_all_backends(mock_program_file(_config.mock_script, _config.run.rng_seed));
    else
    {
        const char* key = std::getenv("PROMPTEVO_API_KEY");
        if (!key || !*key)
            throw BackendUnavailable("PROMPTEVO_API_KEY is not set");
        for (auto role: kAllRoles)
        {
            HttpEndpoint endpoint;
            endpoint.url = _config.live.url;
            const auto it = _config.live.role_models.find(role);
            endpoint.model = it != _config.live.role_models.end() ? it->second : _config.live.model;
            endpoint.api_key = key;
            endpoint.timeout = _config.live.timeout;
            _gateway->set_backend(role, std::make_shared<HttpChatBackend>(endpoint));
        }
    }

    std::shared_ptr<ToolExecutor> executor;
    switch (_config.executor)
    {
    case ExecutorKind::stub:
        executor = std::make_shared<StubExecutor>();
        break;
    case ExecutorKind::sandbox:
        executor = std::make_shared<SubprocessExecutor>(
            SubprocessOptions {_config.sandbox_command, _config.sandbox_recycle_after, std::chrono::milliseconds(1000)});
        break;
    case ExecutorKind::none:
        executor = std::make_shared<DisabledExecutor>();
        break;
    }
    SolveLimits limits;
    limits.tools_enabled = _config.run.tool_use_enabled;
    limits.max_tool_calls = _config.run.max_tool_calls;
    limits.max_reingest_passes = _config.run.max_reingest_passes;
    limits.tool_timeout = std::chrono::milliseconds(_config.run.tool_timeout_ms);
    _solver = std::make_unique<SolvePipeline>(*_gateway, executor, limits);

    CriticConfig critic;
    if (_config.critic_template)
    {
        std::ifstream f(*_config.critic_template);
        if (!f)
            throw ConfigError("cannot read critic template " + _config.critic_template->string());
        std::stringstream buf;
        buf << f.rdbuf();
        critic.template_text = trim(buf.str());
    }
    critic.weights = _config.critic_weights;
    _evaluator = std::make_unique<FitnessEvaluator>(*_gateway, *_solver, critic, _config.run.lambda, _config.run.workers);
    _operators = std::make_unique<PromptOperators>(*_gateway);
}

Split Session::split_for(std::optional<double> fraction) const
{
    return split(_instances, fraction.value_or(_config.train_fraction), _config.run.rng_seed);
}

Population Session::initial_population() const
{
    return new_population(_seed_prompts, _seed_mutators, _seed_hypers, _config.run);
}

} // namespace promptevo
