// Copyright 2026 The TrojanLab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "trojanlab/backdoor.hpp"
#include "trojanlab/error.hpp"
#include "trojanlab/json.hpp"
#include "trojanlab/pipeline.hpp"
#include "trojanlab/rng.hpp"
#include "trojanlab/text_bridge.hpp"
#include "trojanlab/world.hpp"

namespace trojanlab::providers {

enum class ImageEncoding { Png, PpmBase64 };

struct ProviderConfig {
  std::string endpoint;  // full chat-completion URL
  std::string model;
  std::string credential_env;  // name of the variable holding the API key
  double timeout_s = 60.0;
  int max_retries = 3;
  int requests_per_minute = 60;  // 0 disables the cap
  ImageEncoding image_encoding = ImageEncoding::Png;
  std::size_t max_image_bytes = 4u << 20;
  double backoff_base_s = 1.0;
};

/// InvalidConfig unless timeout > 0, retries >= 0, rpm >= 0 and the endpoint
/// is an http(s) URL.
void validate(const ProviderConfig& config);
ProviderConfig provider_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ProviderConfig& config);

// --- transport -----------------------------------------------------------------

struct HttpRequest {
  std::string url;
  std::vector<std::pair<std::string, std::string>> headers;
  std::string body;
  double timeout_s = 60.0;
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

/// Sends one request. Throws Timeout when the deadline passes and
/// ProviderError when no response arrives.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse send(const HttpRequest& request) = 0;
};

/// cpp-httplib client; https when built with OpenSSL.
class HttpTransport final : public Transport {
 public:
  HttpResponse send(const HttpRequest& request) override;
};

/// Throws TransportForbidden on every call.
class FailingTransport final : public Transport {
 public:
  HttpResponse send(const HttpRequest& request) override;
  std::size_t attempts() const;

 private:
  mutable std::mutex mu_;
  std::size_t attempts_ = 0;
};

/// Replays a fixed script of responses or errors and keeps every request.
class ScriptedTransport final : public Transport {
 public:
  using Step = std::variant<HttpResponse, ErrorKind>;
  explicit ScriptedTransport(std::vector<Step> script) : script_(script.begin(), script.end()) {}
  HttpResponse send(const HttpRequest& request) override;
  std::vector<HttpRequest> requests() const;

 private:
  mutable std::mutex mu_;
  std::deque<Step> script_;
  std::vector<HttpRequest> requests_;
};

/// Record/replay store keyed by URL and body. Headers are never stored, so
/// credentials stay out of cassette files.
class CassetteTransport final : public Transport {
 public:
  /// Replay only: a request without a recording throws TransportForbidden.
  explicit CassetteTransport(std::filesystem::path file);
  /// Record: misses go to `inner` and are appended to the file.
  CassetteTransport(std::filesystem::path file, std::shared_ptr<Transport> inner);
  HttpResponse send(const HttpRequest& request) override;
  std::size_t size() const;

 private:
  void save() const;

  mutable std::mutex mu_;
  std::filesystem::path file_;
  std::shared_ptr<Transport> inner_;
  std::map<std::string, nlohmann::json> entries_;  // key -> {url, body, status, response}
};

// --- time ----------------------------------------------------------------------

class Clock {
 public:
  virtual ~Clock() = default;
  virtual double now() = 0;  // seconds
  virtual void sleep(double seconds) = 0;
};

class SystemClock final : public Clock {
 public:
  double now() override;
  void sleep(double seconds) override;
};

/// Test clock: sleep advances time instantly and is logged.
class ManualClock final : public Clock {
 public:
  double now() override;
  void sleep(double seconds) override;
  std::vector<double> sleeps() const;

 private:
  mutable std::mutex mu_;
  double now_ = 0.0;
  std::vector<double> sleeps_;
};

/// Admission control: at most `per_minute` grants in any 60 s window. A
/// caller that would exceed the cap sleeps until the oldest grant in the
/// window expires.
class RateLimiter {
 public:
  RateLimiter(int per_minute, std::shared_ptr<Clock> clock);
  void acquire();
  std::vector<double> grants() const;

 private:
  mutable std::mutex mu_;
  int per_minute_;
  std::shared_ptr<Clock> clock_;
  std::deque<double> window_;
  std::vector<double> grants_;
};

// --- client --------------------------------------------------------------------

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
/// std::getenv.
std::optional<std::string> process_env(const std::string& name);

struct BackoffEvent {
  int attempt = 0;  // 1-based retry number
  double delay_s = 0.0;
  std::string reason;
};

/// Chat-completion client with retries and a rate cap. Safe for concurrent calls.
class ProviderClient {
 public:
  ProviderClient(ProviderConfig config, std::shared_ptr<Transport> transport,
                 std::shared_ptr<Clock> clock = std::make_shared<SystemClock>(), EnvLookup env = process_env,
                 std::uint64_t jitter_seed = 42);

  /// AuthError (before any transport use) if the credential is missing;
  /// Timeout or RateLimited once retries run out; MalformedResponse when the
  /// reply has no message content.
  std::string complete_text(const std::string& prompt);
  /// As complete_text; ImageTooLarge when the encoded image exceeds the cap.
  std::string complete_multimodal(const std::string& prompt, const world::RasterImage& image);

  /// Request body for a prompt and optional image (no credential inside).
  nlohmann::json request_body(const std::string& prompt, const world::RasterImage* image) const;
  std::vector<BackoffEvent> backoff_events() const;
  const ProviderConfig& config() const noexcept { return config_; }

 private:
  std::string call(const nlohmann::json& body);

  ProviderConfig config_;
  std::shared_ptr<Transport> transport_;
  std::shared_ptr<Clock> clock_;
  EnvLookup env_;
  RateLimiter limiter_;
  mutable std::mutex mu_;
  Rng jitter_;
  std::vector<BackoffEvent> backoffs_;
};

/// PNG (8-bit RGB, zlib-compressed).
std::string encode_png(const world::RasterImage& image);
std::string base64(std::string_view bytes);
/// data: URL for the configured encoding.
std::string image_data_url(const world::RasterImage& image, ImageEncoding encoding);

// --- adapters ------------------------------------------------------------------

class ProviderTextCompleter final : public text::TextCompleter {
 public:
  explicit ProviderTextCompleter(std::shared_ptr<ProviderClient> client) : client_(std::move(client)) {}
  std::string complete(const std::string& prompt) const override { return client_->complete_text(prompt); }

 private:
  std::shared_ptr<ProviderClient> client_;
};

class ProviderMultimodalCompleter final : public backdoor::MultimodalCompleter {
 public:
  explicit ProviderMultimodalCompleter(std::shared_ptr<ProviderClient> client) : client_(std::move(client)) {}
  std::string complete(const std::string& prompt, const world::RasterImage& image) const override {
    return client_->complete_multimodal(prompt, image);
  }

 private:
  std::shared_ptr<ProviderClient> client_;
};

/// Offline stand-in for a chat model. Forward extraction prompts are
/// answered from a canned map (the task table by default), backward
/// prompts by offline substitution, planner prompts by the offline planner.
/// Anything else is a MalformedResponse.
class MockTextProvider final : public text::TextCompleter {
 public:
  MockTextProvider();
  explicit MockTextProvider(std::map<std::string, std::string> canned);
  std::string complete(const std::string& prompt) const override;
  std::size_t calls() const noexcept { return calls_.load(); }

 private:
  std::map<std::string, std::string> canned_;  // perception text -> list JSON
  text::OfflineTextBackend offline_;
  pipeline::OfflinePlanner planner_;
  mutable std::atomic<std::size_t> calls_{0};
};

/// Factories for config blocks. `"mock"` or {"provider": "mock"} gives the
/// offline mock; any other object is a ProviderConfig sent over `transport`.
pipeline::CompleterFactory text_factory(std::shared_ptr<Transport> transport = std::make_shared<HttpTransport>(),
                                        std::shared_ptr<Clock> clock = std::make_shared<SystemClock>(),
                                        EnvLookup env = process_env);
/// Multimodal counterpart. A mock block carries an "attack" block in the
/// attack config format and wraps backdoor::MockLvlm.
backdoor::MultimodalFactory multimodal_factory(std::shared_ptr<Transport> transport = std::make_shared<HttpTransport>(),
                                               std::shared_ptr<Clock> clock = std::make_shared<SystemClock>(),
                                               EnvLookup env = process_env);

}  // namespace trojanlab::providers
