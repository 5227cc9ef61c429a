// SPDX-License-Identifier: Apache-2.0
#include <promptevo/error.hpp>
#include <promptevo/gateway.hpp>
#include <promptevo/hashing.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>
#include <thread>

namespace promptevo
{

std::string_view to_string(Role role)
{
    switch (role)
    {
        case Role::mutator: return "mutator";
        case Role::hypermutator: return "hypermutator";
        case Role::solver: return "solver";
        case Role::tool_synthesizer: return "tool_synthesizer";
        case Role::critic: return "critic";
    }
    return "unknown";
}

Role role_from_string(std::string_view name)
{
    for (auto role: kAllRoles)
        if (to_string(role) == name)
            return role;
    throw ConfigError("unknown role '" + std::string(name) + "'");
}

std::string_view payload_of(std::string_view user_text)
{
    const auto pos = user_text.rfind(kPayloadSeparator);
    if (pos == std::string_view::npos)
        return user_text;
    return user_text.substr(pos + kPayloadSeparator.size());
}

double default_temperature(Role role)
{
    switch (role)
    {
        case Role::mutator:
        case Role::hypermutator: return 1.0;
        default: return 0.0;
    }
}

CompletionRequest make_request(Role role, std::string system_text, std::string user_text,
                               std::vector<ImageHandle> images)
{
    return CompletionRequest {
        .role = role,
        .system_text = std::move(system_text),
        .user_text = std::move(user_text),
        .image_refs = std::move(images),
        .temperature = default_temperature(role),
        .max_tokens = 1024,
    };
}

void TranscriptBuffer::splice(TranscriptBuffer&& other)
{
    _records.insert(_records.end(), std::make_move_iterator(other._records.begin()),
                    std::make_move_iterator(other._records.end()));
    other._records.clear();
}

std::string TranscriptBuffer::to_jsonl() const
{
    std::string out;
    for (const auto& r: _records)
    {
        nlohmann::json j {{"hash", r.request_hash}, {"role", to_string(r.role)}, {"response", r.response}};
        out += j.dump();
        out += '\n';
    }
    return out;
}

Gateway::Gateway(std::shared_ptr<ImageStore> images, GatewayOptions options):
    _images(std::move(images)), _options(std::move(options))
{
    if (!_images)
        throw PreconditionError("gateway needs an image store");
    if (_options.max_attempts < 1)
        throw ConfigError("gateway max_attempts must be positive");
    if (_options.max_in_flight < 1)
        throw ConfigError("gateway max_in_flight must be positive");
    if (!_options.sleeper)
        _options.sleeper = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
    if (_options.cache_dir)
        std::filesystem::create_directories(*_options.cache_dir);
}

void Gateway::set_backend(Role role, std::shared_ptr<Backend> backend)
{
    _backends[role] = std::move(backend);
}

void Gateway::set_all_backends(const std::shared_ptr<Backend>& backend)
{
    for (auto role: kAllRoles)
        _backends[role] = backend;
}

std::string Gateway::request_key(const CompletionRequest& request) const
{
    ContentHasher hasher;
    hasher.field(to_string(request.role)).field(request.system_text).field(request.user_text);
    hasher.field(static_cast<std::uint64_t>(request.image_refs.size()));
    for (auto handle: request.image_refs)
        hasher.field(_images->content_hash(handle));
    hasher.field(request.temperature).field(static_cast<std::uint64_t>(request.max_tokens));
    return hasher.hex_digest();
}

void Gateway::validate(const CompletionRequest& request) const
{
    if (!request.image_refs.empty() && request.role != Role::solver)
        throw InputError(std::string("only solver requests may carry images (role ") +
                         std::string(to_string(request.role)) + ")");
    if (request.temperature < 0.0)
        throw InputError("temperature must be non-negative");
    if (request.max_tokens < 1)
        throw InputError("max_tokens must be positive");
    for (auto handle: request.image_refs)
        (void) _images->get(handle);
}

std::optional<std::string> Gateway::cache_lookup(const std::string& key)
{
    std::lock_guard lock(_cache_mutex);
    if (auto it = _memory_cache.find(key); it != _memory_cache.end())
        return it->second;
    if (_options.cache_dir)
    {
        std::ifstream in(*_options.cache_dir / (key + ".txt"), std::ios::binary);
        if (in)
        {
            std::ostringstream buf;
            buf << in.rdbuf();
            _memory_cache.emplace(key, buf.str());
            return buf.str();
        }
    }
    return std::nullopt;
}

void Gateway::cache_store(const std::string& key, const std::string& text)
{
    std::lock_guard lock(_cache_mutex);
    _memory_cache.emplace(key, text);
    if (_options.cache_dir)
    {
        const auto final_path = *_options.cache_dir / (key + ".txt");
        const auto tmp_path = *_options.cache_dir / (key + ".tmp");
        {
            std::ofstream out(tmp_path, std::ios::binary | std::ios::trunc);
            out << text;
        }
        std::error_code ec;
        std::filesystem::rename(tmp_path, final_path, ec);
    }
}

void Gateway::acquire_slot()
{
    std::unique_lock lock(_slot_mutex);
    _slot_cv.wait(lock, [this] { return _in_flight < _options.max_in_flight; });
    ++_in_flight;
    auto peak = _peak_in_flight.load();
    while (_in_flight > peak && !_peak_in_flight.compare_exchange_weak(peak, _in_flight))
    {
    }
}

void Gateway::release_slot()
{
    {
        std::lock_guard lock(_slot_mutex);
        --_in_flight;
    }
    _slot_cv.notify_one();
}

void Gateway::take_token()
{
    if (_options.requests_per_second <= 0.0)
        return;
    for (;;)
    {
        std::chrono::milliseconds wait {0};
        {
            std::lock_guard lock(_bucket_mutex);
            const auto now = std::chrono::steady_clock::now();
            const double elapsed = std::chrono::duration<double>(now - _last_refill).count();
            _last_refill = now;
            const double burst = std::max(1.0, _options.requests_per_second);
            _tokens = std::min(burst, _tokens + elapsed * _options.requests_per_second);
            if (_tokens >= 1.0)
            {
                _tokens -= 1.0;
                return;
            }
            wait = std::chrono::milliseconds(
                static_cast<long>(1000.0 * (1.0 - _tokens) / _options.requests_per_second) + 1);
        }
        _options.sleeper(wait);
    }
}

CompletionResult Gateway::complete(const CompletionRequest& request, TranscriptBuffer* transcript)
{
    validate(request);
    auto backend_it = _backends.find(request.role);
    if (backend_it == _backends.end() || !backend_it->second)
        throw ConfigError(std::string("no backend configured for role ") + std::string(to_string(request.role)));
    auto& backend = *backend_it->second;

    const auto key = request_key(request);
    const auto start = std::chrono::steady_clock::now();
    {
        std::lock_guard lock(_stats_mutex);
        ++_stats.completions;
    }

    if (_options.caching)
    {
        if (auto hit = cache_lookup(key))
        {
            {
                std::lock_guard lock(_stats_mutex);
                ++_stats.cache_hits;
            }
            if (transcript)
                transcript->append({key, request.role, *hit});
            return CompletionResult {*hit, true, backend.id(), std::chrono::milliseconds(0), false};
        }
    }

    BackendReply reply;
    std::string last_error;
    bool done = false;
    for (int attempt = 0; attempt < _options.max_attempts && !done; ++attempt)
    {
        if (attempt > 0)
        {
            {
                std::lock_guard lock(_stats_mutex);
                ++_stats.retries;
            }
            _options.sleeper(_options.base_backoff * (1 << (attempt - 1)));
        }
        take_token();
        acquire_slot();
        try
        {
            {
                std::lock_guard lock(_stats_mutex);
                ++_stats.backend_calls;
            }
            reply = backend.generate(request, *_images);
            if (reply.text.empty() && !reply.truncated)
                throw TransientBackendError("empty completion without truncation");
            done = true;
        }
        catch (const TransientBackendError& e)
        {
            last_error = e.what();
        }
        catch (...)
        {
            release_slot();
            throw;
        }
        release_slot();
    }
    if (!done)
        throw BackendUnavailable("backend " + backend.id() + " unavailable after " +
                                 std::to_string(_options.max_attempts) + " attempts: " + last_error);
    if (_options.caching && !reply.text.empty())
        cache_store(key, reply.text);
    if (transcript)
        transcript->append({key, request.role, reply.text});

    const auto latency =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
    return CompletionResult {std::move(reply.text), false, backend.id(), latency, reply.truncated};
}

GatewayStats Gateway::stats() const
{
    std::lock_guard lock(_stats_mutex);
    return _stats;
}

} // namespace promptevo
