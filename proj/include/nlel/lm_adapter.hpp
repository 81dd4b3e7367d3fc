#pragma once

// Transport boundary to text-generation backends. The core never depends on
// a specific provider: the mock backend is scripted and seed-deterministic,
// the HTTP backend speaks a generic JSON completion contract, and retrieval
// is a separate backend keyed by corpus name.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "nlel/control_schema.hpp"
#include "nlel/rng.hpp"

namespace nlel::adapter {

// ============================================================================
// Requests and responses
// ============================================================================

struct GenerationRequest {
  std::string prompt;
  double temperature = 0.7;
  double top_p = 0.95;
  int max_tokens = 256;
  double repetition_penalty = 1.0;
  int n = 1;
  int timeout_ms = 30000;
};

inline GenerationRequest request_from_controls(std::string prompt,
                                               const ControlVector& pi, int n) {
  GenerationRequest req;
  req.prompt = std::move(prompt);
  req.temperature = number_at(pi, fields::temperature);
  req.top_p = number_at(pi, fields::top_p);
  req.max_tokens = static_cast<int>(int_at(pi, fields::max_tokens));
  req.repetition_penalty = number_at(pi, fields::repetition_penalty);
  req.n = n;
  return req;
}

struct GenerationResponse {
  std::vector<std::string> texts;
  int64_t prompt_tokens = 0;
  int64_t completion_tokens = 0;
  std::string backend_id;
};

enum class ErrorKind { timeout, transport, malformed, rate_limited };

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::timeout: return "timeout";
    case ErrorKind::transport: return "transport";
    case ErrorKind::malformed: return "malformed";
    case ErrorKind::rate_limited: return "rate_limited";
  }
  return "?";
}

struct AdapterError {
  ErrorKind kind = ErrorKind::transport;
  std::string message;
  int attempts = 0;
};

struct GenerationOutcome {
  std::optional<GenerationResponse> response;
  std::optional<AdapterError> error;

  bool ok() const { return response.has_value(); }
};

// Thread-safe token tally; one per run.
struct UsageTally {
  std::atomic<int64_t> prompt_tokens{0};
  std::atomic<int64_t> completion_tokens{0};
  std::atomic<int64_t> calls{0};

  void record(const GenerationResponse& r) {
    prompt_tokens += r.prompt_tokens;
    completion_tokens += r.completion_tokens;
    calls += 1;
  }
  int64_t total() const { return prompt_tokens + completion_tokens; }
};

class GenerationBackend {
 public:
  virtual ~GenerationBackend() = default;
  virtual GenerationOutcome generate(const GenerationRequest& req) = 0;
  virtual std::string id() const = 0;
};

// Crude but deterministic token estimate for mock accounting.
inline int64_t approx_tokens(std::string_view text) {
  return static_cast<int64_t>(text.size() / 4) + 1;
}

// ============================================================================
// Mock backend
// ============================================================================

// Deterministic under (seed, request). Two modes:
//  - scripted: replies are taken from a fixed list, in order per call index
//    keyed by the request prompt digest (so identical prompts replay
//    identically regardless of interleaving);
//  - procedural: replies are synthesized from the seed and prompt digest.
// Completion tokens are capped at max_tokens per text, exactly.
class MockBackend : public GenerationBackend {
 public:
  explicit MockBackend(uint64_t seed = 0) : seed_(seed) {}

  // Scripted replies consumed round-robin by per-prompt call count.
  void set_script(std::vector<std::string> replies) { script_ = std::move(replies); }
  void set_text_tokens(int64_t tokens_per_text) { text_tokens_ = tokens_per_text; }
  // Any request whose prompt contains this marker fails with a transport error.
  void set_fail_marker(std::string marker) { fail_marker_ = std::move(marker); }

  GenerationOutcome generate(const GenerationRequest& req) override {
    if (!fail_marker_.empty() &&
        req.prompt.find(fail_marker_) != std::string::npos) {
      return {std::nullopt,
              AdapterError{ErrorKind::transport, "scripted failure", 1}};
    }
    GenerationResponse resp;
    resp.backend_id = id();
    resp.prompt_tokens = approx_tokens(req.prompt);
    uint64_t key = rng::mix(seed_, rng::fnv1a64(req.prompt));
    uint64_t call_index = call_counts_[key]++;
    for (int i = 0; i < req.n; ++i) {
      std::string text;
      if (!script_.empty()) {
        text = script_[(call_index * static_cast<uint64_t>(req.n) +
                        static_cast<uint64_t>(i)) %
                       script_.size()];
      } else {
        rng::Stream rs(rng::derive(key, {call_index, static_cast<uint64_t>(i)}));
        char buf[64];
        std::snprintf(buf, sizeof(buf), "mock-%016llx-%llu",
                      static_cast<unsigned long long>(rs.next_u64()),
                      static_cast<unsigned long long>(i));
        text = buf;
      }
      resp.texts.push_back(text);
      resp.completion_tokens +=
          std::min<int64_t>(text_tokens_, req.max_tokens);
    }
    return {resp, std::nullopt};
  }

  std::string id() const override { return "mock"; }

 private:
  uint64_t seed_;
  std::vector<std::string> script_;
  int64_t text_tokens_ = 32;
  std::string fail_marker_;
  std::map<uint64_t, uint64_t> call_counts_;
};

// ============================================================================
// Retrieval backend
// ============================================================================

struct RetrievedSnippet {
  std::string corpus;
  std::string text;
};

class RetrievalBackend {
 public:
  virtual ~RetrievalBackend() = default;
  virtual std::vector<RetrievedSnippet> fetch(const std::string& corpus,
                                              const std::string& query) = 0;
};

// Fixed snippet per corpus; unknown corpora return nothing.
class MockRetrieval : public RetrievalBackend {
 public:
  explicit MockRetrieval(std::map<std::string, std::string> snippets =
                             {{"math-lemmas", "parity: odd*odd is odd"},
                              {"general", "general reference snippet"}})
      : snippets_(std::move(snippets)) {}

  std::vector<RetrievedSnippet> fetch(const std::string& corpus,
                                      const std::string&) override {
    auto it = snippets_.find(corpus);
    if (it == snippets_.end()) return {};
    return {{corpus, it->second}};
  }

 private:
  std::map<std::string, std::string> snippets_;
};

// Weighted retrieval over the control vector's mixture: one call per corpus
// carrying positive mass, skipping the reserved "none" entry. Snippets are
// concatenated under a RETRIEVED header for the child prompt.
struct RetrievalResult {
  std::string rendered;
  int64_t calls = 0;
};

inline RetrievalResult run_retrieval(RetrievalBackend& backend,
                                     const ControlVector& pi,
                                     const std::string& query) {
  RetrievalResult out;
  for (const auto& [corpus, weight] : simplex_at(pi, fields::retrieval_weights)) {
    if (corpus == kNoneCorpus || weight <= 0.0) continue;
    out.calls += 1;
    for (const auto& snip : backend.fetch(corpus, query)) {
      if (out.rendered.empty()) out.rendered = "RETRIEVED:\n";
      out.rendered += "[" + snip.corpus + "] " + snip.text + "\n";
    }
  }
  return out;
}

}  // namespace nlel::adapter
