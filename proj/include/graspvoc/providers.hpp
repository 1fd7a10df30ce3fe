// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <semaphore>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "graspvoc/cloud_io.hpp"
#include "graspvoc/digest.hpp"
#include "graspvoc/error.hpp"
#include "graspvoc/object_model.hpp"
#include "graspvoc/viewrender.hpp"

namespace graspvoc {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Label normalization and prompt templates

/// Trim surrounding whitespace and lowercase (ASCII).
inline std::string normalize_label(std::string_view s) {
  const auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && is_space(static_cast<unsigned char>(s[e - 1]))) --e;
  std::string out(s.substr(b, e - b));
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline constexpr std::size_t kMaxCandidateLabels = 16;
inline constexpr const char* kCandidateSchema = R"({"labels": [str,...]})";
inline constexpr const char* kAssignmentSchema = R"({"assignments": [{"mask_id": int, "label": str},...]})";
inline constexpr const char* kConditioningSchema = R"({"grasp_label": str, "task_label": str})";

inline std::vector<std::string> dedup_preserving_order(const std::vector<std::string>& labels) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& l : labels)
    if (seen.insert(l).second) out.push_back(l);
  return out;
}

inline std::string build_candidate_prompt(const std::string& object_label) {
  if (object_label.empty()) fail(ErrorCode::kInvalidArgument, "object label must not be empty");
  return "You are shown a rendered depth image of a " + object_label +
         ", viewed along its thinnest dimension.\n"
         "List the subparts of the " + object_label +
         " that are graspable or task-relevant.\n"
         "Use short lowercase nouns, at most 16 labels, no duplicates.\n"
         "Answer with JSON only, using exactly this schema: " + kCandidateSchema + "\n";
}

inline std::string build_assignment_prompt(const std::string& object_label, const std::vector<std::string>& candidates,
                                           const std::vector<int>& mask_ids) {
  std::string ids, labels;
  for (std::size_t i = 0; i < mask_ids.size(); ++i) ids += (i ? ", " : "") + std::to_string(mask_ids[i]);
  for (std::size_t i = 0; i < candidates.size(); ++i) labels += std::string(i ? ", " : "") + "\"" + candidates[i] + "\"";
  return "The rendered depth image of a " + object_label + " has been segmented into regions with ids: " + ids +
         ".\n"
         "Assign each region exactly one label from this list: " + labels +
         ".\n"
         "Use \"background\" for regions that are not part of the " + object_label +
         ".\n"
         "Answer with JSON only, using exactly this schema: " + kAssignmentSchema + "\n";
}

inline std::string build_conditioning_prompt(const std::string& task, const std::vector<std::string>& labels) {
  if (task.empty()) fail(ErrorCode::kInvalidArgument, "task must not be empty");
  const auto unique = dedup_preserving_order(labels);
  if (unique.empty()) fail(ErrorCode::kInvalidArgument, "at least one subpart label is required");
  std::string prompt = "A robot must grasp an object in order to perform the task: \"" + task +
                       "\".\n"
                       "The object consists of these subparts:\n";
  for (const auto& l : unique) prompt += "- " + l + "\n";
  prompt +=
      "Return grasp_label, the subpart best suited for grasping, and task_label, the subpart responsible for "
      "performing the task.\n"
      "Both labels must be copied exactly from the list above; they may be the same subpart.\n"
      "Answer with JSON only, using exactly this schema: ";
  prompt += kConditioningSchema;
  prompt += "\n";
  return prompt;
}

// ---------------------------------------------------------------------------
// Response parsing. Every parser either returns values satisfying the wire
// type invariants or throws MalformedResponse / UnknownLabel.

/// First balanced JSON object inside free text (prose, code fences).
inline json extract_json_object(const std::string& raw) {
  for (std::size_t start = raw.find('{'); start != std::string::npos; start = raw.find('{', start + 1)) {
    int depth = 0;
    bool in_string = false, escaped = false;
    for (std::size_t i = start; i < raw.size(); ++i) {
      const char c = raw[i];
      if (in_string) {
        if (escaped) escaped = false;
        else if (c == '\\') escaped = true;
        else if (c == '"') in_string = false;
        continue;
      }
      if (c == '"') in_string = true;
      else if (c == '{') ++depth;
      else if (c == '}' && --depth == 0) {
        json j = json::parse(raw.begin() + static_cast<std::ptrdiff_t>(start),
                             raw.begin() + static_cast<std::ptrdiff_t>(i + 1), nullptr, false);
        if (!j.is_discarded() && j.is_object()) return j;
        break;
      }
    }
  }
  fail(ErrorCode::kMalformedResponse, "no JSON object in response");
}

inline std::string require_string(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_string()) fail(ErrorCode::kMalformedResponse, std::string("missing string field '") + key + "'");
  return it->get<std::string>();
}

inline std::vector<std::string> parse_candidate_response(const std::string& raw) {
  const json j = extract_json_object(raw);
  const auto it = j.find("labels");
  if (it == j.end() || !it->is_array()) fail(ErrorCode::kMalformedResponse, "missing 'labels' array");
  std::vector<std::string> labels;
  for (const auto& v : *it) {
    if (!v.is_string()) fail(ErrorCode::kMalformedResponse, "non-string candidate label");
    std::string l = normalize_label(v.get<std::string>());
    if (l.empty() || l == kBackgroundLabel) continue;
    labels.push_back(std::move(l));
  }
  labels = dedup_preserving_order(labels);
  if (labels.empty()) fail(ErrorCode::kMalformedResponse, "no usable candidate labels");
  if (labels.size() > kMaxCandidateLabels) fail(ErrorCode::kMalformedResponse, "more than 16 candidate labels");
  return labels;
}

/// Mask id -> label. Masks the response omits are background.
inline std::map<int, std::string> parse_assignment_response(const std::string& raw,
                                                            const std::vector<std::string>& candidates,
                                                            const std::vector<int>& mask_ids) {
  const json j = extract_json_object(raw);
  const auto it = j.find("assignments");
  if (it == j.end() || !it->is_array()) fail(ErrorCode::kMalformedResponse, "missing 'assignments' array");
  const std::set<int> known(mask_ids.begin(), mask_ids.end());
  const std::set<std::string> allowed(candidates.begin(), candidates.end());
  std::map<int, std::string> out;
  for (const auto& a : *it) {
    if (!a.is_object() || !a.contains("mask_id") || !a["mask_id"].is_number_integer()) {
      fail(ErrorCode::kMalformedResponse, "assignment entry lacks an integer mask_id");
    }
    const int id = a["mask_id"].get<int>();
    if (!known.contains(id)) fail(ErrorCode::kMalformedResponse, "assignment for unknown mask " + std::to_string(id));
    const std::string label = normalize_label(require_string(a, "label"));
    if (label != kBackgroundLabel && !allowed.contains(label)) {
      fail(ErrorCode::kUnknownLabel, "label '" + label + "' is not a candidate");
    }
    if (!out.emplace(id, label).second) fail(ErrorCode::kMalformedResponse, "mask " + std::to_string(id) + " assigned twice");
  }
  for (int id : mask_ids) out.emplace(id, kBackgroundLabel);
  return out;
}

struct TaskLabels {
  std::string grasp_label;
  std::string task_label;

  friend bool operator==(const TaskLabels&, const TaskLabels&) = default;
};

/// Labels are matched after normalization; the vocabulary's own spelling is
/// returned.
inline TaskLabels parse_conditioning_response(const std::string& raw, const std::vector<std::string>& labels) {
  const json j = extract_json_object(raw);
  const auto resolve = [&](const std::string& given) {
    const std::string norm = normalize_label(given);
    for (const auto& l : labels)
      if (normalize_label(l) == norm) return l;
    fail(ErrorCode::kUnknownLabel, "label '" + norm + "' is not in the vocabulary");
  };
  return {resolve(require_string(j, "grasp_label")), resolve(require_string(j, "task_label"))};
}

inline std::vector<Mask2D> parse_segmenter_response(const std::string& raw, const Resolution& res) {
  json j = json::parse(raw, nullptr, false);
  if (j.is_discarded() || !j.is_object()) j = extract_json_object(raw);
  std::vector<Mask2D> masks;
  try {
    masks = masks_from_json(j, res);
  } catch (const Error& e) {
    fail(ErrorCode::kMalformedResponse, e.what());
  }
  return masks;
}

// ---------------------------------------------------------------------------
// Backends: raw request JSON in, raw response text out.

enum class Channel { kSegmenter, kVision, kLanguage };

inline std::string to_string(Channel c) {
  switch (c) {
    case Channel::kSegmenter: return "segmenter";
    case Channel::kVision: return "vlm";
    case Channel::kLanguage: return "llm";
  }
  return "unknown";
}

class ModelBackend {
 public:
  virtual ~ModelBackend() = default;

  /// Throws ProviderUnavailable on transport failure. `image` is the raw
  /// rendering for channels that see it; requests already carry its digest.
  virtual std::string call(Channel channel, const json& request, const GrayImage* image) = 0;

  /// Replaying backends are pure functions of the request: no retries, no
  /// re-prompts.
  virtual bool replays() const { return false; }
};

/// Canonical request form used for digests: sorted keys, no whitespace.
inline std::string canonical_request(Channel channel, const json& request) {
  return to_string(channel) + "\n" + request.dump();
}

inline std::string request_digest(Channel channel, const json& request) {
  return sha256_hex(canonical_request(channel, request));
}

/// File-backed replay of recorded provider sessions, laid out as
/// `<dir>/<channel>/<digest>.json` with a `<digest>.txt` sidecar for humans.
class FixtureBackend : public ModelBackend {
 public:
  explicit FixtureBackend(std::filesystem::path dir) : dir_(std::move(dir)) {}

  std::string call(Channel channel, const json& request, const GrayImage*) override {
    const auto path = fixture_path(channel, request);
    if (!std::filesystem::exists(path)) {
      fail(ErrorCode::kProviderUnavailable, "no " + to_string(channel) + " fixture for request " + path.stem().string());
    }
    json stored = json::parse(io::read_text_file(path), nullptr, false);
    if (stored.is_discarded() || !stored.contains("response") || !stored["response"].is_string()) {
      fail(ErrorCode::kProviderUnavailable, "fixture " + path.string() + " is corrupt");
    }
    if (stored.value("request", json{}) != request) {
      fail(ErrorCode::kProviderUnavailable, "fixture " + path.string() + " was recorded for a different request");
    }
    return stored["response"].get<std::string>();
  }

  bool replays() const override { return true; }

  std::filesystem::path fixture_path(Channel channel, const json& request) const {
    return dir_ / to_string(channel) / (request_digest(channel, request) + ".json");
  }

  /// Stores a response for later replay; returns the fixture path.
  std::filesystem::path record(Channel channel, const json& request, const std::string& response) const {
    const auto path = fixture_path(channel, request);
    io::write_text_file(path, json{{"request", request}, {"response", response}}.dump(2) + "\n");
    std::string sidecar = to_string(channel) + " request\n\n";
    if (request.contains("prompt") && request["prompt"].is_string()) {
      sidecar += request["prompt"].get<std::string>() + "\n";
    } else {
      sidecar += request.dump(2) + "\n";
    }
    sidecar += "\nresponse\n\n" + response + "\n";
    auto txt = path;
    txt.replace_extension(".txt");
    io::write_text_file(txt, sidecar);
    return path;
  }

  const std::filesystem::path& directory() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

// ---------------------------------------------------------------------------
// Retry loop

struct RetryPolicy {
  int retries = 2;
  std::chrono::milliseconds backoff{1000};
};

/// Bounds concurrent backend calls.
class InflightGate {
 public:
  explicit InflightGate(int max_inflight) : sem_(std::clamp(max_inflight, 1, 64)) {}

  template <typename F>
  auto run(F&& f) {
    sem_.acquire();
    struct Release {
      std::counting_semaphore<64>& s;
      ~Release() { s.release(); }
    } release{sem_};
    return f();
  }

 private:
  std::counting_semaphore<64> sem_;
};

/// Calls the backend and validates the response with `parse`.
///
/// Replaying backends get exactly one attempt. Live backends get at most
/// `retries + 1`, sleeping `backoff` between attempts; an UnknownLabel result
/// re-prompts once with the violation appended, a second one fails at once.
/// Exhaustion raises ProviderUnavailable when the last failure was transport,
/// ValidationFailed (carrying the parse error) otherwise.
template <typename Parse>
auto call_with_retry(ModelBackend& backend, Channel channel, json request, Parse&& parse, const RetryPolicy& policy = {},
                     const GrayImage* image = nullptr, InflightGate* gate = nullptr) {
  const int attempts = backend.replays() ? 1 : std::max(0, policy.retries) + 1;
  std::optional<Error> last_parse_error;
  std::string last_transport_error = "no attempt made";
  bool reprompted = false;
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0 && policy.backoff.count() > 0) std::this_thread::sleep_for(policy.backoff);
    std::string raw;
    try {
      raw = gate ? gate->run([&] { return backend.call(channel, request, image); })
                 : backend.call(channel, request, image);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kProviderUnavailable) throw;
      last_transport_error = e.what();
      last_parse_error.reset();
      continue;
    }
    try {
      return parse(raw);
    } catch (const Error& e) {
      const auto code = e.code();
      if (code != ErrorCode::kMalformedResponse && code != ErrorCode::kUnknownLabel &&
          code != ErrorCode::kValidationFailed) {
        throw;
      }
      last_parse_error = e;
      if (code == ErrorCode::kUnknownLabel && !backend.replays()) {
        if (reprompted || !request.contains("prompt")) break;
        request["prompt"] = request["prompt"].get<std::string>() +
                            "\nYour previous answer was rejected: " + e.what() +
                            ". Use only the labels listed above.\n";
        reprompted = true;
      }
    }
  }
  if (last_parse_error) {
    fail(ErrorCode::kValidationFailed, to_string(channel) + " response rejected: " + last_parse_error->what());
  }
  fail(ErrorCode::kProviderUnavailable, to_string(channel) + " provider failed after " + std::to_string(attempts) +
                                            " attempt(s): " + last_transport_error);
}

// ---------------------------------------------------------------------------
// Typed provider interfaces used by the pipeline.

class SegmenterProvider {
 public:
  virtual ~SegmenterProvider() = default;
  virtual std::vector<Mask2D> segment(const GrayImage& image) = 0;
};

class VisionLanguageProvider {
 public:
  virtual ~VisionLanguageProvider() = default;
  virtual std::vector<std::string> candidate_labels(const std::string& object_label, const GrayImage& image) = 0;
  virtual std::map<int, std::string> assign_labels(const std::string& object_label, const GrayImage& image,
                                                   const std::vector<Mask2D>& masks,
                                                   const std::vector<std::string>& candidates) = 0;
};

class ConditioningProvider {
 public:
  virtual ~ConditioningProvider() = default;
  virtual TaskLabels condition(const std::string& task, const std::vector<std::string>& labels) = 0;
};

inline json image_descriptor(const GrayImage& image) {
  return {{"width", image.resolution.width},
          {"height", image.resolution.height},
          {"sha256", sha256_hex(encode_pgm(image))}};
}

inline json segment_request(const GrayImage& image) { return {{"task", "segment"}, {"image", image_descriptor(image)}}; }

inline json candidate_request(const std::string& object_label, const GrayImage& image) {
  return {{"task", "candidate_labels"},
          {"object_label", object_label},
          {"prompt", build_candidate_prompt(object_label)},
          {"image", image_descriptor(image)}};
}

inline std::vector<int> mask_ids(const std::vector<Mask2D>& masks) {
  std::vector<int> ids;
  for (const auto& m : masks) ids.push_back(m.id);
  return ids;
}

inline json assignment_request(const std::string& object_label, const GrayImage& image, const std::vector<Mask2D>& masks,
                               const std::vector<std::string>& candidates) {
  return {{"task", "assign_labels"},
          {"object_label", object_label},
          {"candidates", candidates},
          {"masks", masks_to_json(masks)["masks"]},
          {"prompt", build_assignment_prompt(object_label, candidates, mask_ids(masks))},
          {"image", image_descriptor(image)}};
}

inline json conditioning_request(const std::string& task, const std::vector<std::string>& labels) {
  const auto unique = dedup_preserving_order(labels);
  return {{"task", "condition"}, {"task_text", task}, {"labels", unique}, {"prompt", build_conditioning_prompt(task, unique)}};
}

/// All three providers over one backend.
class BackendProviders : public SegmenterProvider, public VisionLanguageProvider, public ConditioningProvider {
 public:
  BackendProviders(std::shared_ptr<ModelBackend> backend, RetryPolicy policy = {}, int max_inflight = 2)
      : backend_(std::move(backend)), policy_(policy), gate_(max_inflight) {}

  std::vector<Mask2D> segment(const GrayImage& image) override {
    const Resolution res = image.resolution;
    return call_with_retry(
        *backend_, Channel::kSegmenter, segment_request(image),
        [&](const std::string& raw) { return parse_segmenter_response(raw, res); }, policy_, &image, &gate_);
  }

  std::vector<std::string> candidate_labels(const std::string& object_label, const GrayImage& image) override {
    return call_with_retry(
        *backend_, Channel::kVision, candidate_request(object_label, image),
        [](const std::string& raw) { return parse_candidate_response(raw); }, policy_, &image, &gate_);
  }

  std::map<int, std::string> assign_labels(const std::string& object_label, const GrayImage& image,
                                           const std::vector<Mask2D>& masks,
                                           const std::vector<std::string>& candidates) override {
    const auto ids = mask_ids(masks);
    return call_with_retry(
        *backend_, Channel::kVision, assignment_request(object_label, image, masks, candidates),
        [&](const std::string& raw) { return parse_assignment_response(raw, candidates, ids); }, policy_, &image,
        &gate_);
  }

  TaskLabels condition(const std::string& task, const std::vector<std::string>& labels) override {
    return call_with_retry(
        *backend_, Channel::kLanguage, conditioning_request(task, labels),
        [&](const std::string& raw) { return parse_conditioning_response(raw, labels); }, policy_, nullptr, &gate_);
  }

  ModelBackend& backend() { return *backend_; }

 private:
  std::shared_ptr<ModelBackend> backend_;
  RetryPolicy policy_;
  InflightGate gate_;
};

// ---------------------------------------------------------------------------
// Provider configuration file

enum class ProviderKind { kFixture, kHttp };

struct ProviderConfig {
  ProviderKind kind = ProviderKind::kFixture;
  std::filesystem::path fixture_dir;
  std::string endpoint;            // chat-completions URL for vlm/llm
  std::string segmenter_endpoint;  // image in, RLE masks out
  std::string model = "gpt-4o";
  std::string api_key_env = "GRASPVOC_API_KEY";
  double timeout_seconds = 60.0;
  int retries = 2;
  int backoff_ms = 1000;
  int max_inflight = 2;

  RetryPolicy retry_policy() const { return {retries, std::chrono::milliseconds(backoff_ms)}; }
};

inline json provider_config_to_json(const ProviderConfig& c) {
  json j{{"kind", c.kind == ProviderKind::kFixture ? "fixture" : "http"},
         {"api_key_env", c.api_key_env},
         {"timeout_seconds", c.timeout_seconds},
         {"retries", c.retries},
         {"backoff_ms", c.backoff_ms},
         {"max_inflight", c.max_inflight}};
  if (c.kind == ProviderKind::kFixture) {
    j["fixture_dir"] = c.fixture_dir.generic_string();
  } else {
    j["endpoint"] = c.endpoint;
    j["segmenter_endpoint"] = c.segmenter_endpoint;
    j["model"] = c.model;
  }
  return j;
}

/// Relative fixture directories resolve against `base_dir` (the config
/// file's directory).
inline ProviderConfig provider_config_from_json(const json& j, const std::filesystem::path& base_dir = {}) {
  ProviderConfig c;
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "fixture") {
      c.kind = ProviderKind::kFixture;
      if (!j.contains("fixture_dir")) fail(ErrorCode::kValidationFailed, "fixture provider needs 'fixture_dir'");
      std::filesystem::path dir = j.at("fixture_dir").get<std::string>();
      c.fixture_dir = dir.is_relative() && !base_dir.empty() ? base_dir / dir : dir;
    } else if (kind == "http") {
      c.kind = ProviderKind::kHttp;
      if (!j.contains("endpoint")) fail(ErrorCode::kValidationFailed, "http provider needs 'endpoint'");
      c.endpoint = j.at("endpoint").get<std::string>();
      c.segmenter_endpoint = j.value("segmenter_endpoint", std::string{});
      c.model = j.value("model", c.model);
    } else {
      fail(ErrorCode::kValidationFailed, "unknown provider kind '" + kind + "'");
    }
    c.api_key_env = j.value("api_key_env", c.api_key_env);
    c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
    c.retries = j.value("retries", c.retries);
    c.backoff_ms = j.value("backoff_ms", c.backoff_ms);
    c.max_inflight = j.value("max_inflight", c.max_inflight);
  } catch (const json::exception& e) {
    fail(ErrorCode::kValidationFailed, std::string("provider config: ") + e.what());
  }
  if (c.retries < 0 || c.max_inflight < 1 || c.timeout_seconds <= 0.0) {
    fail(ErrorCode::kValidationFailed, "provider config has out-of-range retry/inflight/timeout values");
  }
  return c;
}

inline ProviderConfig load_provider_config(const std::filesystem::path& path) {
  const json j = json::parse(io::read_text_file(path), nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::kValidationFailed, "provider config " + path.string() + " is not JSON");
  return provider_config_from_json(j, path.parent_path());
}

}  // namespace graspvoc
