#include "khwm/reward/llm.hpp"

#include <cstdlib>
#include <fstream>

#include <httplib.h>
#include <json.hpp>

#include "khwm/core/errors.hpp"

namespace khwm::reward {

LlmConfig LlmConfig::from_env() {
    LlmConfig c;
    if (const char* e = std::getenv(kEnvEndpoint)) c.endpoint = e;
    if (const char* k = std::getenv(kEnvApiKey)) c.api_key = k;
    return c;
}

LlmClient::LlmClient(LlmConfig config) : config_(std::move(config)) {}

LlmClient::LlmClient(LlmConfig config, Transport transport)
    : config_(std::move(config)), transport_(std::move(transport)) {}

std::string LlmClient::complete(const std::string& system, const std::string& user) {
    std::string content;
    if (transport_)
        content = transport_(system, user);
    else if (!config_.fixture_path.empty())
        content = fixture_complete(system, user);
    else
        content = http_complete(system, user);
    if (!config_.record_path.empty()) record(system, user, content);
    return content;
}

std::string LlmClient::fixture_complete(const std::string& system, const std::string& user) {
    std::ifstream is(config_.fixture_path);
    if (!is) throw IoError("cannot open LLM fixture file: " + config_.fixture_path);
    nlohmann::json j;
    is >> j;
    for (const auto& entry : j) {
        const auto& req = entry.at("request");
        if (req.at("system").get<std::string>() == system &&
            req.at("user").get<std::string>() == user)
            return entry.at("response").at("content").get<std::string>();
    }
    throw IoError("LLM fixture " + config_.fixture_path + " has no entry for this request");
}

void LlmClient::record(const std::string& system, const std::string& user,
                       const std::string& content) {
    nlohmann::json all = nlohmann::json::array();
    {
        std::ifstream is(config_.record_path);
        if (is) is >> all;
    }
    all.push_back(nlohmann::json{
        {"request", {{"model", config_.model}, {"system", system}, {"user", user}}},
        {"response", {{"content", content}}}});
    std::ofstream os(config_.record_path);
    if (!os) throw IoError("cannot write LLM fixture file: " + config_.record_path);
    os << all.dump(2) << "\n";
}

std::string LlmClient::http_complete(const std::string& system, const std::string& user) {
    if (config_.endpoint.empty())
        throw ConfigError(std::string("LLM backend selected but ") + kEnvEndpoint + " is not set");
    // Split "scheme://host[:port]/path".
    const auto scheme_end = config_.endpoint.find("://");
    if (scheme_end == std::string::npos)
        throw ConfigError("LLM endpoint must be a full URL: " + config_.endpoint);
    const auto path_start = config_.endpoint.find('/', scheme_end + 3);
    const std::string base =
        path_start == std::string::npos ? config_.endpoint : config_.endpoint.substr(0, path_start);
    const std::string path =
        path_start == std::string::npos ? "/" : config_.endpoint.substr(path_start);

    nlohmann::json body{
        {"model", config_.model},
        {"messages",
         {{{"role", "system"}, {"content", system}}, {{"role", "user"}, {"content", user}}}}};

    httplib::Client client(base);
    client.set_read_timeout(120, 0);
    httplib::Headers headers;
    if (!config_.api_key.empty())
        headers.emplace("Authorization", "Bearer " + config_.api_key);
    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res) throw IoError("LLM request failed: no response from " + config_.endpoint);
    if (res->status != 200)
        throw IoError("LLM request failed with status " + std::to_string(res->status) + ": " +
                      res->body);
    try {
        nlohmann::json j = nlohmann::json::parse(res->body);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("cannot parse LLM response: ") + e.what() +
                         "; raw body:\n" + res->body);
    }
}

}  // namespace khwm::reward
