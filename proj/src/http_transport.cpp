#include "alloop/policy.hpp"

#include <cstdlib>

// Last: httplib pulls in <resolv.h>, whose _res macro breaks Eigen.
#ifdef ALLOOP_HAVE_OPENSSL
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include "httplib.h"

namespace alloop::policy {

namespace {

struct Endpoint {
    std::string base;  // scheme://host[:port]
    std::string path;
};

Endpoint split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigurationError("LLM endpoint must be an http(s) URL: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

HttpChatTransport::HttpChatTransport(const LlmConfig& config) : config_(config) {
    if (config_.endpoint.empty()) throw ConfigurationError("llm.endpoint is not configured");
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (!key || !*key) throw ConfigurationError("environment variable " + config_.api_key_env + " is not set");
    key_ = key;
#ifndef ALLOOP_HAVE_OPENSSL
    if (config_.endpoint.rfind("https://", 0) == 0)
        throw ConfigurationError("this build has no TLS support; use an http:// endpoint");
#endif
}

std::string HttpChatTransport::complete(const std::vector<ChatMessage>& messages) {
    auto ep = split_url(config_.endpoint);
    httplib::Client client(ep.base);
    auto secs = static_cast<time_t>(config_.timeout_s);
    client.set_connection_timeout(secs, 0);
    client.set_read_timeout(secs, 0);
    client.set_write_timeout(secs, 0);
    json body{{"model", config_.model}, {"messages", json::array()}};
    for (const auto& m : messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});
    httplib::Headers headers{{"Authorization", "Bearer " + key_}};
    auto res = client.Post(ep.path, headers, body.dump(), "application/json");
    if (!res) throw TransportError("request failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw TransportError("HTTP " + std::to_string(res->status));
    try {
        auto j = json::parse(res->body);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
        throw TransportError(std::string("unexpected response body: ") + e.what());
    }
}

std::unique_ptr<ChatTransport> make_transport(const LlmConfig& config) {
    return std::make_unique<HttpChatTransport>(config);
}

}  // namespace alloop::policy
