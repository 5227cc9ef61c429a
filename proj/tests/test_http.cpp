// SPDX-License-Identifier: Apache-2.0
// Live-backend adapter against an in-process HTTP server.
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "support.hpp"

#include <promptevo/gateway.hpp>
#include <promptevo/hashing.hpp>

#include <doctest.h>

#include <atomic>
#include <thread>

using namespace promptevo;

namespace
{

class FakeServer
{
  public:
    FakeServer()
    {
        _server.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            last_auth = req.get_header_value("Authorization");
            last_body = Json::parse(req.body);
            const auto n = hits++;
            if (n < fail_first)
            {
                res.status = fail_status;
                res.set_content("{}", "application/json");
                return;
            }
            Json reply {{"choices", Json::array({{{"message", {{"role", "assistant"}, {"content", content}}},
                                                   {"finish_reason", finish_reason}}})}};
            res.set_content(reply.dump(), "application/json");
        });
        _port = _server.bind_to_any_port("127.0.0.1");
        _thread = std::thread([this] { _server.listen_after_bind(); });
        _server.wait_until_ready();
    }
    ~FakeServer()
    {
        _server.stop();
        _thread.join();
    }

    [[nodiscard]] std::string url() const
    {
        return "http://127.0.0.1:" + std::to_string(_port) + "/v1/chat/completions";
    }

    std::atomic<int> hits {0};
    int fail_first = 0;
    int fail_status = 429;
    std::string content = "hello back";
    std::string finish_reason = "stop";
    std::string last_auth;
    Json last_body;

  private:
    httplib::Server _server;
    int _port = 0;
    std::thread _thread;
};

HttpEndpoint endpoint(const FakeServer& s)
{
    return HttpEndpoint {s.url(), "test-model", "sk-test", std::chrono::seconds(5)};
}

GatewayOptions no_sleep()
{
    GatewayOptions o;
    o.sleeper = [](std::chrono::milliseconds) {};
    return o;
}

} // namespace

TEST_CASE("payload carries model, messages, sampling and base64 PNG images")
{
    FakeServer server;
    auto store = std::make_shared<ImageStore>();
    const auto h = store->put(Image(3, 2, 200));
    HttpChatBackend backend(endpoint(server));
    const auto req = make_request(Role::solver, "be careful", "what is shown?", {h});
    const auto payload = backend.build_payload(req, *store);
    CHECK(payload.at("model") == "test-model");
    CHECK(payload.at("temperature") == 0.0);
    CHECK(payload.at("max_tokens") == 1024);
    const auto& msgs = payload.at("messages");
    REQUIRE(msgs.size() == 2);
    CHECK(msgs[0].at("role") == "system");
    CHECK(msgs[0].at("content") == "be careful");
    const auto& parts = msgs[1].at("content");
    REQUIRE(parts.size() == 2);
    CHECK(parts[0].at("text") == "what is shown?");
    const std::string url = parts[1].at("image_url").at("url");
    const std::string prefix = "data:image/png;base64,";
    REQUIRE(url.rfind(prefix, 0) == 0);
    const auto png = base64_decode(url.substr(prefix.size()));
    CHECK(decode_png(std::vector<std::uint8_t>(png.begin(), png.end())) == Image(3, 2, 200));
}

TEST_CASE("live adapter round trip with bearer credentials")
{
    FakeServer server;
    Gateway gw(std::make_shared<ImageStore>(), no_sleep());
    gw.set_all_backends(std::make_shared<HttpChatBackend>(endpoint(server)));
    const auto r = gw.complete(make_request(Role::critic, "", "rate this"));
    CHECK(r.text == "hello back");
    CHECK(server.last_auth == "Bearer sk-test");
    CHECK(server.last_body.at("messages").size() == 1);
}

TEST_CASE("429 and 5xx are retried")
{
    FakeServer server;
    server.fail_first = 2;
    server.fail_status = 503;
    Gateway gw(std::make_shared<ImageStore>(), no_sleep());
    gw.set_all_backends(std::make_shared<HttpChatBackend>(endpoint(server)));
    CHECK(gw.complete(make_request(Role::solver, "", "q")).text == "hello back");
    CHECK(server.hits == 3);
    CHECK(gw.stats().retries == 2);

    FakeServer limited;
    limited.fail_first = 1;
    limited.fail_status = 429;
    Gateway gw2(std::make_shared<ImageStore>(), no_sleep());
    gw2.set_all_backends(std::make_shared<HttpChatBackend>(endpoint(limited)));
    CHECK(gw2.complete(make_request(Role::solver, "", "q")).text == "hello back");
}

TEST_CASE("client errors are permanent")
{
    FakeServer server;
    server.fail_first = 100;
    server.fail_status = 401;
    Gateway gw(std::make_shared<ImageStore>(), no_sleep());
    gw.set_all_backends(std::make_shared<HttpChatBackend>(endpoint(server)));
    CHECK_THROWS_AS(gw.complete(make_request(Role::solver, "", "q")), BackendUnavailable);
    CHECK(server.hits == 1);
}

TEST_CASE("unreachable endpoint exhausts retries")
{
    GatewayOptions opts = no_sleep();
    opts.max_attempts = 2;
    Gateway gw(std::make_shared<ImageStore>(), opts);
    gw.set_all_backends(std::make_shared<HttpChatBackend>(
        HttpEndpoint {"http://127.0.0.1:1/v1/chat/completions", "m", "", std::chrono::seconds(1)}));
    CHECK_THROWS_AS(gw.complete(make_request(Role::solver, "", "q")), BackendUnavailable);
}

TEST_CASE("response parsing")
{
    const auto r = HttpChatBackend::parse_response(Json::parse(
        R"({"choices":[{"message":{"content":"partial"},"finish_reason":"length"}]})"));
    CHECK(r.text == "partial");
    CHECK(r.truncated);
    CHECK_THROWS_AS(HttpChatBackend::parse_response(Json::parse(R"({"nothing":1})")), TransientBackendError);
    CHECK_THROWS_AS(HttpChatBackend(HttpEndpoint {"no-scheme", "m", "", std::chrono::seconds(1)}), ConfigError);
    CHECK_THROWS_AS(HttpChatBackend(HttpEndpoint {"http://x", "", "", std::chrono::seconds(1)}), ConfigError);
}
