// SPDX-License-Identifier: Apache-2.0
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <promptevo/error.hpp>
#include <promptevo/gateway.hpp>
#include <promptevo/hashing.hpp>

namespace promptevo
{

HttpChatBackend::HttpChatBackend(HttpEndpoint endpoint): _endpoint(std::move(endpoint))
{
    const auto scheme_end = _endpoint.url.find("://");
    if (scheme_end == std::string::npos)
        throw ConfigError("endpoint URL needs a scheme: " + _endpoint.url);
    const auto path_start = _endpoint.url.find('/', scheme_end + 3);
    _scheme_host = _endpoint.url.substr(0, path_start);
    _path = path_start == std::string::npos ? "/v1/chat/completions" : _endpoint.url.substr(path_start);
    if (_endpoint.model.empty())
        throw ConfigError("endpoint " + _endpoint.url + " has no model name");
}

nlohmann::json HttpChatBackend::build_payload(const CompletionRequest& request, const ImageStore& images) const
{
    auto messages = nlohmann::json::array();
    if (!request.system_text.empty())
        messages.push_back({{"role", "system"}, {"content", request.system_text}});
    if (request.image_refs.empty())
        messages.push_back({{"role", "user"}, {"content", request.user_text}});
    else
    {
        auto parts = nlohmann::json::array();
        parts.push_back({{"type", "text"}, {"text", request.user_text}});
        for (auto handle: request.image_refs)
        {
            const auto png = encode_png(*images.get(handle));
            parts.push_back({{"type", "image_url"},
                             {"image_url", {{"url", "data:image/png;base64," + base64_encode(png)}}}});
        }
        messages.push_back({{"role", "user"}, {"content", parts}});
    }
    return nlohmann::json {
        {"model", _endpoint.model},
        {"messages", messages},
        {"temperature", request.temperature},
        {"max_tokens", request.max_tokens},
    };
}

BackendReply HttpChatBackend::parse_response(const nlohmann::json& body)
{
    try
    {
        const auto& choice = body.at("choices").at(0);
        BackendReply reply;
        const auto& content = choice.at("message").at("content");
        reply.text = content.is_null() ? std::string {} : content.get<std::string>();
        reply.truncated = choice.value("finish_reason", std::string {}) == "length";
        return reply;
    }
    catch (const nlohmann::json::exception& e)
    {
        throw TransientBackendError(std::string("malformed chat response: ") + e.what());
    }
}

BackendReply HttpChatBackend::generate(const CompletionRequest& request, const ImageStore& images)
{
    httplib::Client client(_scheme_host);
    client.set_connection_timeout(_endpoint.timeout);
    client.set_read_timeout(_endpoint.timeout);
    httplib::Headers headers;
    if (!_endpoint.api_key.empty())
        headers.emplace("Authorization", "Bearer " + _endpoint.api_key);
    const auto body = build_payload(request, images).dump();
    auto response = client.Post(_path, headers, body, "application/json");
    if (!response)
        throw TransientBackendError("HTTP request to " + _scheme_host + " failed: " + httplib::to_string(response.error()));
    if (response->status == 429 || response->status >= 500)
        throw TransientBackendError("HTTP " + std::to_string(response->status) + " from " + _scheme_host);
    if (response->status != 200)
        throw BackendUnavailable("HTTP " + std::to_string(response->status) + " from " + _scheme_host + ": " +
                                 response->body.substr(0, 200));
    nlohmann::json parsed;
    try
    {
        parsed = nlohmann::json::parse(response->body);
    }
    catch (const nlohmann::json::exception& e)
    {
        throw TransientBackendError(std::string("unparseable chat response: ") + e.what());
    }
    return parse_response(parsed);
}

} // namespace promptevo
