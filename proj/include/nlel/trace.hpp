#pragma once

// Trace log: one JSONL event per expansion, written in sequence order.
// Events carry everything needed to replay a run offline: the labels, both
// control vectors per label, every candidate (surviving or not), the
// survivors, token cost, the exploration coefficient used and the context
// the policies saw. Serialization is key-ordered so equal runs produce
// byte-identical logs.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nlel/context.hpp"
#include "nlel/control_schema.hpp"

namespace nlel::trace {

struct CandidateRecord {
  uint64_t id = 0;
  std::string text;
  double mu = 0.0;
  double sigma = 0.0;
  double score = 0.0;
  bool verified = false;
  size_t label_index = 0;
};

struct TraceEvent {
  uint64_t seq = 0;
  uint64_t parent_id = 0;
  std::vector<std::string> labels;
  std::vector<ControlVector> pi_emitted;
  std::vector<ControlVector> pi_applied;
  std::vector<CandidateRecord> candidates;
  std::vector<uint64_t> survivors;
  int64_t tokens = 0;
  double beta_used = 0.0;
  context::ContextSnapshot context;
  std::vector<std::string> failures;
};

inline nlohmann::ordered_json event_to_json(const ControlSchema& schema,
                                            const TraceEvent& ev) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  j["seq"] = ev.seq;
  j["parent_id"] = ev.parent_id;
  j["labels"] = ev.labels;
  nlohmann::ordered_json emitted = nlohmann::ordered_json::array();
  nlohmann::ordered_json applied = nlohmann::ordered_json::array();
  for (const auto& pi : ev.pi_emitted) {
    auto w = to_wire(schema, pi);
    w["provenance"] = to_string(pi.provenance);
    emitted.push_back(w);
  }
  for (const auto& pi : ev.pi_applied) {
    auto w = to_wire(schema, pi);
    w["provenance"] = to_string(pi.provenance);
    applied.push_back(w);
  }
  j["pi_emitted"] = emitted;
  j["pi_applied"] = applied;
  nlohmann::ordered_json cands = nlohmann::ordered_json::array();
  for (const auto& c : ev.candidates) {
    nlohmann::ordered_json cj = nlohmann::ordered_json::object();
    cj["id"] = c.id;
    cj["text"] = c.text;
    cj["mu"] = c.mu;
    cj["sigma"] = c.sigma;
    cj["S"] = c.score;
    cj["verified"] = c.verified;
    cj["label_index"] = c.label_index;
    cands.push_back(cj);
  }
  j["candidates"] = cands;
  j["survivors"] = ev.survivors;
  j["tokens"] = ev.tokens;
  j["beta_used"] = ev.beta_used;
  j["context"] = context::to_json(ev.context);
  j["failures"] = ev.failures;
  return j;
}

inline TraceEvent event_from_json(const ControlSchema& schema, const nlohmann::json& j) {
  TraceEvent ev;
  ev.seq = j.at("seq").get<uint64_t>();
  ev.parent_id = j.at("parent_id").get<uint64_t>();
  ev.labels = j.at("labels").get<std::vector<std::string>>();
  auto read_vectors = [&](const nlohmann::json& arr) {
    std::vector<ControlVector> out;
    for (const auto& w : arr) {
      nlohmann::json body = w;
      std::string prov = body.value("provenance", "emitted");
      body.erase("provenance");
      auto validated = validate(schema, body);
      if (!validated.ok())
        throw std::invalid_argument("trace control vector invalid: " +
                                    validated.describe());
      ControlVector cv = *validated.vector;
      if (prov == "default") cv.provenance = Provenance::defaults;
      else if (prov == "projected") cv.provenance = Provenance::projected;
      else if (prov == "clamped_budget") cv.provenance = Provenance::clamped_budget;
      else cv.provenance = Provenance::emitted;
      out.push_back(std::move(cv));
    }
    return out;
  };
  ev.pi_emitted = read_vectors(j.at("pi_emitted"));
  ev.pi_applied = read_vectors(j.at("pi_applied"));
  for (const auto& cj : j.at("candidates")) {
    CandidateRecord c;
    c.id = cj.at("id").get<uint64_t>();
    c.text = cj.at("text").get<std::string>();
    c.mu = cj.at("mu").get<double>();
    c.sigma = cj.at("sigma").get<double>();
    c.score = cj.at("S").get<double>();
    c.verified = cj.at("verified").get<bool>();
    c.label_index = cj.at("label_index").get<size_t>();
    ev.candidates.push_back(std::move(c));
  }
  ev.survivors = j.at("survivors").get<std::vector<uint64_t>>();
  ev.tokens = j.at("tokens").get<int64_t>();
  ev.beta_used = j.at("beta_used").get<double>();
  ev.context = context::context_from_json(j.at("context"));
  ev.failures = j.at("failures").get<std::vector<std::string>>();
  return ev;
}

inline std::string render_jsonl(const ControlSchema& schema,
                                const std::vector<TraceEvent>& events) {
  std::string out;
  for (const auto& ev : events) {
    out += event_to_json(schema, ev).dump();
    out += "\n";
  }
  return out;
}

inline void write_jsonl(const std::string& path, const ControlSchema& schema,
                        const std::vector<TraceEvent>& events) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open trace file: " + path);
  out << render_jsonl(schema, events);
}

inline std::vector<TraceEvent> read_jsonl(const std::string& path,
                                          const ControlSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace file: " + path);
  std::vector<TraceEvent> events;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    events.push_back(event_from_json(schema, nlohmann::json::parse(line)));
  }
  return events;
}

}  // namespace nlel::trace
