// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdlib>
#include <memory>
#include <regex>
#include <string>
#include <utility>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "graspvoc/digest.hpp"
#include "graspvoc/error.hpp"
#include "graspvoc/providers.hpp"

namespace graspvoc {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline SplitUrl split_url(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) fail(ErrorCode::kValidationFailed, "invalid endpoint URL '" + url + "'");
  return {m[1].str(), m[2].matched ? m[2].str() : "/"};
}

/// Live backend.
///
/// Language and vision calls use the chat-completions JSON shape
/// (`choices[0].message.content` is the raw answer); the rendered image is
/// attached as a base64 PGM data URL. The segmenter endpoint receives
/// `{"width", "height", "image_pgm_base64"}` and answers with the RLE mask
/// exchange format.
class HttpBackend : public ModelBackend {
 public:
  explicit HttpBackend(ProviderConfig config) : config_(std::move(config)) {}

  std::string call(Channel channel, const json& request, const GrayImage* image) override {
    if (channel == Channel::kSegmenter) {
      if (!image) fail(ErrorCode::kInvalidArgument, "segmenter call without an image");
      const std::string url = config_.segmenter_endpoint.empty() ? config_.endpoint : config_.segmenter_endpoint;
      json body{{"width", image->resolution.width},
                {"height", image->resolution.height},
                {"image_pgm_base64", base64_encode(encode_pgm(*image))}};
      return post(url, body);
    }

    json content = json::array();
    content.push_back({{"type", "text"}, {"text", request.value("prompt", request.dump())}});
    if (image) {
      content.push_back({{"type", "image_url"},
                         {"image_url", {{"url", "data:image/x-portable-graymap;base64," + base64_encode(encode_pgm(*image))}}}});
    }
    json body{{"model", config_.model},
              {"temperature", 0},
              {"messages", json::array({{{"role", "user"}, {"content", content}}})}};
    const std::string raw = post(config_.endpoint, body);
    const json reply = json::parse(raw, nullptr, false);
    // A reply outside the chat-completions shape is handed on as-is so the
    // caller's parser decides whether it is usable.
    if (reply.is_discarded() || !reply.contains("choices")) return raw;
    try {
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
      return raw;
    }
  }

 private:
  std::string post(const std::string& url, const json& body) const {
    const SplitUrl target = split_url(url);
    httplib::Client client(target.origin);
    const auto seconds = static_cast<time_t>(config_.timeout_seconds);
    client.set_connection_timeout(seconds, 0);
    client.set_read_timeout(seconds, 0);
    client.set_write_timeout(seconds, 0);
    httplib::Headers headers;
    if (const char* token = std::getenv(config_.api_key_env.c_str()); token && *token) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
    auto res = client.Post(target.path, headers, body.dump(), "application/json");
    if (!res) {
      fail(ErrorCode::kProviderUnavailable, "POST " + url + " failed: " + httplib::to_string(res.error()));
    }
    if (res->status < 200 || res->status >= 300) {
      fail(ErrorCode::kProviderUnavailable, "POST " + url + " returned HTTP " + std::to_string(res->status));
    }
    return res->body;
  }

  ProviderConfig config_;
};

inline std::shared_ptr<ModelBackend> make_backend(const ProviderConfig& config) {
  if (config.kind == ProviderKind::kFixture) return std::make_shared<FixtureBackend>(config.fixture_dir);
  return std::make_shared<HttpBackend>(config);
}

inline std::shared_ptr<BackendProviders> make_providers(const ProviderConfig& config) {
  return std::make_shared<BackendProviders>(make_backend(config), config.retry_policy(), config.max_inflight);
}

}  // namespace graspvoc
