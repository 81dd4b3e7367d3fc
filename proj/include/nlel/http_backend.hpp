#pragma once

// Generic HTTP completion backend. Provider-agnostic wire contract:
//
//   POST <path>  {"prompt","n","temperature","top_p","max_tokens",
//                 "repetition_penalty"}
//   200          {"choices":[{"text": "..."}, ...],
//                 "usage":{"prompt_tokens": n, "completion_tokens": m}}
//
// Credentials come from the environment and are sent as a bearer token.
// Transient failures (timeouts, 5xx, 429) retry with exponential backoff up
// to a configured cap, then surface as typed errors; degradation policy
// belongs to the caller.

#include <cstdlib>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "nlel/lm_adapter.hpp"

namespace nlel::adapter {

struct HttpBackendConfig {
  std::string host;           // e.g. "http://127.0.0.1:8089"
  std::string path = "/v1/completions";
  std::string bearer_env = "NLEL_BACKEND_KEY";
  int max_attempts = 3;
  int backoff_base_ms = 100;
  int timeout_ms = 30000;
};

inline HttpBackendConfig http_config_from_env() {
  HttpBackendConfig cfg;
  if (const char* url = std::getenv("NLEL_BACKEND_URL")) cfg.host = url;
  if (const char* t = std::getenv("NLEL_BACKEND_TIMEOUT_MS"))
    cfg.timeout_ms = std::atoi(t);
  return cfg;
}

class HttpBackend : public GenerationBackend {
 public:
  explicit HttpBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg)) {}

  GenerationOutcome generate(const GenerationRequest& req) override {
    nlohmann::ordered_json body;
    body["prompt"] = req.prompt;
    body["n"] = req.n;
    body["temperature"] = req.temperature;
    body["top_p"] = req.top_p;
    body["max_tokens"] = req.max_tokens;
    body["repetition_penalty"] = req.repetition_penalty;
    const std::string payload = body.dump();

    AdapterError last{ErrorKind::transport, "no attempt made", 0};
    for (int attempt = 0; attempt < cfg_.max_attempts; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(
            cfg_.backoff_base_ms * (1 << (attempt - 1))));
      }
      httplib::Client client(cfg_.host);
      int timeout = req.timeout_ms > 0 ? req.timeout_ms : cfg_.timeout_ms;
      client.set_connection_timeout(0, timeout * 1000);
      client.set_read_timeout(timeout / 1000, (timeout % 1000) * 1000);
      httplib::Headers headers;
      if (const char* key = std::getenv(cfg_.bearer_env.c_str()))
        headers.emplace("Authorization", std::string("Bearer ") + key);

      auto res = client.Post(cfg_.path, headers, payload, "application/json");
      if (!res) {
        bool timed_out = res.error() == httplib::Error::ConnectionTimeout ||
                         res.error() == httplib::Error::Read;
        last = {timed_out ? ErrorKind::timeout : ErrorKind::transport,
                httplib::to_string(res.error()), attempt + 1};
        continue;
      }
      if (res->status == 429) {
        last = {ErrorKind::rate_limited, "rate limited", attempt + 1};
        continue;
      }
      if (res->status >= 500) {
        last = {ErrorKind::transport, "server status " + std::to_string(res->status),
                attempt + 1};
        continue;
      }
      if (res->status != 200) {
        return {std::nullopt,
                AdapterError{ErrorKind::transport,
                             "status " + std::to_string(res->status), attempt + 1}};
      }
      auto parsed = nlohmann::json::parse(res->body, nullptr, false);
      if (parsed.is_discarded() || !parsed.contains("choices") ||
          !parsed["choices"].is_array() || parsed["choices"].empty()) {
        last = {ErrorKind::malformed, "unparseable completion payload", attempt + 1};
        continue;
      }
      GenerationResponse out;
      out.backend_id = "http:" + cfg_.host;
      for (const auto& choice : parsed["choices"]) {
        if (!choice.contains("text") || !choice["text"].is_string()) {
          last = {ErrorKind::malformed, "choice without text", attempt + 1};
          out.texts.clear();
          break;
        }
        out.texts.push_back(choice["text"].get<std::string>());
      }
      if (out.texts.empty()) continue;
      if (parsed.contains("usage")) {
        out.prompt_tokens = parsed["usage"].value("prompt_tokens", int64_t{0});
        out.completion_tokens = parsed["usage"].value("completion_tokens", int64_t{0});
      }
      return {out, std::nullopt};
    }
    return {std::nullopt, last};
  }

  std::string id() const override { return "http:" + cfg_.host; }

 private:
  HttpBackendConfig cfg_;
};

}  // namespace nlel::adapter
