#pragma once

#include <functional>
#include <string>
#include <vector>

namespace khwm::reward {

// Environment variables the live backend reads.
inline constexpr const char* kEnvEndpoint = "KHWM_LLM_ENDPOINT";
inline constexpr const char* kEnvApiKey = "KHWM_LLM_API_KEY";

struct LlmConfig {
    std::string endpoint;       // default: $KHWM_LLM_ENDPOINT
    std::string api_key;        // default: $KHWM_LLM_API_KEY
    std::string model = "gpt-4o";
    std::string fixture_path;   // non-empty: replay recorded exchanges instead of HTTP
    std::string record_path;    // non-empty: append exchanges after each call

    static LlmConfig from_env();
};

// Chat-completion client. Sends {model, messages:[system, user]} as JSON and
// returns the assistant text. A fixture path switches the transport to
// recorded request/response pairs (exact prompt match) so tests never touch
// the network; a custom transport hook supports recording fixtures.
class LlmClient {
public:
    using Transport = std::function<std::string(const std::string& system, const std::string& user)>;

    explicit LlmClient(LlmConfig config);
    LlmClient(LlmConfig config, Transport transport);

    std::string complete(const std::string& system, const std::string& user);

    const LlmConfig& config() const { return config_; }

private:
    std::string http_complete(const std::string& system, const std::string& user);
    std::string fixture_complete(const std::string& system, const std::string& user);
    void record(const std::string& system, const std::string& user, const std::string& content);

    LlmConfig config_;
    Transport transport_;
};

}  // namespace khwm::reward
