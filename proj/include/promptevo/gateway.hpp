// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <promptevo/image.hpp>

#include <json.hpp>

#include <array>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

namespace promptevo
{

enum class Role
{
    mutator,
    hypermutator,
    solver,
    tool_synthesizer,
    critic,
};

inline constexpr std::array kAllRoles {Role::mutator, Role::hypermutator, Role::solver, Role::tool_synthesizer,
                                       Role::critic};

std::string_view to_string(Role role);
Role role_from_string(std::string_view name);

/// Separates operator instructions from the payload text they act on inside user_text.
inline constexpr std::string_view kPayloadSeparator = "\n\n---\n\n";

/// Text after the last payload separator, or the whole text.
std::string_view payload_of(std::string_view user_text);

struct CompletionRequest
{
    Role role = Role::solver;
    std::string system_text;
    std::string user_text;
    std::vector<ImageHandle> image_refs;
    double temperature = 0.0;
    int max_tokens = 1024;
};

/// Request with the default sampling temperature for the role.
CompletionRequest make_request(Role role, std::string system_text, std::string user_text,
                               std::vector<ImageHandle> images = {});
double default_temperature(Role role);

struct CompletionResult
{
    std::string text;
    bool cached = false;
    std::string backend_id;
    std::chrono::milliseconds latency {0};
    bool truncated = false;
};

struct BackendReply
{
    std::string text;
    bool truncated = false;
};

/// A text-generation endpoint. Implementations throw TransientBackendError for retryable
/// failures and BackendUnavailable for permanent ones.
class Backend
{
  public:
    virtual ~Backend() = default;
    [[nodiscard]] virtual std::string id() const = 0;
    virtual BackendReply generate(const CompletionRequest& request, const ImageStore& images) = 0;
};

struct TranscriptRecord
{
    std::string request_hash;
    Role role = Role::solver;
    std::string response;

    friend bool operator==(const TranscriptRecord&, const TranscriptRecord&) = default;
};

/// Ordered transcript segment. Concurrent work writes into separate buffers that the
/// caller splices in a fixed order.
class TranscriptBuffer
{
  public:
    void append(TranscriptRecord record) { _records.push_back(std::move(record)); }
    void splice(TranscriptBuffer&& other);
    [[nodiscard]] const std::vector<TranscriptRecord>& records() const { return _records; }
    void clear() { _records.clear(); }
    /// One JSON object per line.
    [[nodiscard]] std::string to_jsonl() const;

  private:
    std::vector<TranscriptRecord> _records;
};

struct GatewayOptions
{
    int max_attempts = 4;
    std::chrono::milliseconds base_backoff {200};
    bool caching = true;
    std::optional<std::filesystem::path> cache_dir;
    std::size_t max_in_flight = 8;
    /// Token-bucket refill rate; 0 disables rate limiting.
    double requests_per_second = 0.0;
    std::function<void(std::chrono::milliseconds)> sleeper;
};

struct GatewayStats
{
    std::uint64_t completions = 0;
    std::uint64_t cache_hits = 0;
    std::uint64_t backend_calls = 0;
    std::uint64_t retries = 0;
};

/// Routes completion requests to per-role backends with caching, retries and
/// bounded concurrency. Safe to share across threads.
class Gateway
{
  public:
    explicit Gateway(std::shared_ptr<ImageStore> images, GatewayOptions options = {});

    void set_backend(Role role, std::shared_ptr<Backend> backend);
    void set_all_backends(const std::shared_ptr<Backend>& backend);

    CompletionResult complete(const CompletionRequest& request, TranscriptBuffer* transcript = nullptr);

    /// Content hash over role, texts, image content hashes, temperature and max_tokens.
    [[nodiscard]] std::string request_key(const CompletionRequest& request) const;

    [[nodiscard]] GatewayStats stats() const;
    [[nodiscard]] std::size_t peak_in_flight() const { return _peak_in_flight.load(); }
    [[nodiscard]] ImageStore& images() const { return *_images; }
    [[nodiscard]] const std::shared_ptr<ImageStore>& image_store() const { return _images; }

  private:
    void validate(const CompletionRequest& request) const;
    std::optional<std::string> cache_lookup(const std::string& key);
    void cache_store(const std::string& key, const std::string& text);
    void acquire_slot();
    void release_slot();
    void take_token();

    std::shared_ptr<ImageStore> _images;
    GatewayOptions _options;
    std::map<Role, std::shared_ptr<Backend>> _backends;

    mutable std::mutex _cache_mutex;
    std::map<std::string, std::string> _memory_cache;

    std::mutex _slot_mutex;
    std::condition_variable _slot_cv;
    std::size_t _in_flight = 0;
    std::atomic<std::size_t> _peak_in_flight {0};

    std::mutex _bucket_mutex;
    double _tokens = 1.0;
    std::chrono::steady_clock::time_point _last_refill = std::chrono::steady_clock::now();

    mutable std::mutex _stats_mutex;
    GatewayStats _stats;
};

// --- mock backend ---------------------------------------------------------

/// Context passed to programmatic mock responders.
struct MockMatch
{
    const CompletionRequest& request;
    std::string request_key;
    std::uint64_t seed;
    std::vector<std::string> captures;
};

using MockResponder = std::function<std::string(const MockMatch&)>;

/// One script rule. The first rule whose role and pattern both match wins.
struct MockRule
{
    std::optional<Role> role;
    /// ECMAScript regex searched in system_text + "\n" + user_text; empty matches anything.
    std::string pattern;
    /// Template with {{...}} directives; ignored when `responder` is set.
    std::string response_template;
    MockResponder responder;
};

/// Scripted backend whose output is a pure function of (request, seed).
///
/// Template directives:
///   {{system}} {{user}} {{payload}} {{$N}}      request text and regex captures
///   {{image_count}}                             number of attached images
///   {{pick:a|b|c}}                              seeded choice
///   {{append_missing:w1|w2|...}}                payload plus one seeded missing word
///   {{percent_present:w1|w2|...}}               100 * fraction of words present in payload
///   {{when_system_has:word|then|else}}          branch on a whole word in system_text
class MockBackend: public Backend
{
  public:
    MockBackend(std::vector<MockRule> rules, std::uint64_t seed, std::string id = "mock");

    [[nodiscard]] std::string id() const override { return _id; }
    BackendReply generate(const CompletionRequest& request, const ImageStore& images) override;

    [[nodiscard]] std::uint64_t calls() const { return _calls.load(); }

  private:
    struct CompiledRule
    {
        MockRule rule;
        std::optional<std::regex> regex;
    };

    std::vector<CompiledRule> _rules;
    std::uint64_t _seed;
    std::string _id;
    std::atomic<std::uint64_t> _calls {0};
};

/// Expands a response template (exposed for tests).
std::string expand_mock_template(std::string_view tmpl, const MockMatch& match);

/// True when `word` occurs in `text` on word boundaries, case-insensitively.
bool contains_word(std::string_view text, std::string_view word);

/// Builds a mock backend from a script: {"seed": n, "rules": [{"role", "match", "respond"}, ...]}.
std::shared_ptr<MockBackend> mock_program(const nlohmann::json& script, std::uint64_t seed);
std::shared_ptr<MockBackend> mock_program_file(const std::filesystem::path& path, std::uint64_t seed);

/// Backend that echoes user_text (the identity mock).
std::shared_ptr<MockBackend> identity_backend();

// --- live backend ---------------------------------------------------------

struct HttpEndpoint
{
    std::string url;
    std::string model;
    std::string api_key;
    std::chrono::seconds timeout {120};
};

/// OpenAI-style chat-completions adapter. Images are sent as base64 PNG data URLs.
class HttpChatBackend: public Backend
{
  public:
    explicit HttpChatBackend(HttpEndpoint endpoint);

    [[nodiscard]] std::string id() const override { return "http:" + _endpoint.model; }
    BackendReply generate(const CompletionRequest& request, const ImageStore& images) override;

    /// Request body for a completion (exposed for tests).
    [[nodiscard]] nlohmann::json build_payload(const CompletionRequest& request, const ImageStore& images) const;
    /// Extracts the reply from a response body.
    static BackendReply parse_response(const nlohmann::json& body);

  private:
    HttpEndpoint _endpoint;
    std::string _scheme_host;
    std::string _path;
};

} // namespace promptevo
