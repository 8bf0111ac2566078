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

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "trojanlab/providers.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>

#include "httplib.h"
#include "trojanlab/fixtures.hpp"

namespace trojanlab::providers {

namespace {

std::string_view to_string(ImageEncoding e) { return e == ImageEncoding::Png ? "png" : "ppm_base64"; }

ImageEncoding encoding_from_string(const std::string& s) {
  if (s == "png") return ImageEncoding::Png;
  if (s == "ppm_base64" || s == "ppm") return ImageEncoding::PpmBase64;
  throw Error(ErrorKind::InvalidConfig, "unknown image encoding: " + s);
}

bool is_transient(ErrorKind kind) {
  return kind == ErrorKind::Timeout || kind == ErrorKind::ProviderError || kind == ErrorKind::RateLimited;
}

// Splits "https://host:port/path" into the origin and the path.
std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw Error(ErrorKind::InvalidConfig, "bad endpoint URL: " + url);
  const auto path = url.find('/', scheme + 3);
  if (path == std::string::npos) return {url, "/"};
  return {url.substr(0, path), url.substr(path)};
}

}  // namespace

void validate(const ProviderConfig& c) {
  if (!(c.timeout_s > 0)) throw Error(ErrorKind::InvalidConfig, "provider timeout must be > 0");
  if (c.max_retries < 0) throw Error(ErrorKind::InvalidConfig, "provider max_retries must be >= 0");
  if (c.requests_per_minute < 0) throw Error(ErrorKind::InvalidConfig, "requests_per_minute must be >= 0");
  if (!(c.backoff_base_s >= 0)) throw Error(ErrorKind::InvalidConfig, "backoff base must be >= 0");
  if (c.endpoint.rfind("http://", 0) != 0 && c.endpoint.rfind("https://", 0) != 0)
    throw Error(ErrorKind::InvalidConfig, "endpoint must be an http(s) URL: " + c.endpoint);
  if (c.model.empty()) throw Error(ErrorKind::InvalidConfig, "provider model is empty");
}

ProviderConfig provider_config_from_json(const nlohmann::json& j) {
  ProviderConfig c;
  try {
    c.endpoint = j.at("endpoint").get<std::string>();
    c.model = j.at("model").get<std::string>();
    c.credential_env = j.value("credential_env", std::string{});
    c.timeout_s = j.value("timeout_s", c.timeout_s);
    c.max_retries = j.value("max_retries", c.max_retries);
    c.requests_per_minute = j.value("requests_per_minute", c.requests_per_minute);
    if (j.contains("image_encoding")) c.image_encoding = encoding_from_string(j.at("image_encoding").get<std::string>());
    c.max_image_bytes = j.value("max_image_bytes", c.max_image_bytes);
    c.backoff_base_s = j.value("backoff_base_s", c.backoff_base_s);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("bad provider config: ") + e.what());
  }
  validate(c);
  return c;
}

nlohmann::json to_json(const ProviderConfig& c) {
  return {{"endpoint", c.endpoint},
          {"model", c.model},
          {"credential_env", c.credential_env},
          {"timeout_s", c.timeout_s},
          {"max_retries", c.max_retries},
          {"requests_per_minute", c.requests_per_minute},
          {"image_encoding", to_string(c.image_encoding)},
          {"max_image_bytes", c.max_image_bytes},
          {"backoff_base_s", c.backoff_base_s}};
}

// --- transports --------------------------------------------------------------

HttpResponse HttpTransport::send(const HttpRequest& request) {
  const auto [origin, path] = split_url(request.url);
  httplib::Client client(origin);
  const auto seconds = std::chrono::duration<double>(request.timeout_s);
  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(seconds);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  httplib::Headers headers;
  std::string content_type = "application/json";
  for (const auto& [k, v] : request.headers) {
    if (k == "Content-Type") content_type = v;
    else headers.emplace(k, v);
  }
  auto result = client.Post(path, headers, request.body, content_type);
  if (!result) {
    const auto err = result.error();
    const auto msg = "request to " + origin + " failed: " + httplib::to_string(err);
    if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read) throw Error(ErrorKind::Timeout, msg);
    throw Error(ErrorKind::ProviderError, msg);
  }
  return {result->status, result->body};
}

HttpResponse FailingTransport::send(const HttpRequest& request) {
  {
    std::lock_guard lock(mu_);
    ++attempts_;
  }
  throw Error(ErrorKind::TransportForbidden, "network access attempted: " + request.url);
}

std::size_t FailingTransport::attempts() const {
  std::lock_guard lock(mu_);
  return attempts_;
}

HttpResponse ScriptedTransport::send(const HttpRequest& request) {
  std::lock_guard lock(mu_);
  requests_.push_back(request);
  if (script_.empty()) throw Error(ErrorKind::TransportForbidden, "script exhausted");
  auto step = std::move(script_.front());
  script_.pop_front();
  if (const auto* kind = std::get_if<ErrorKind>(&step)) throw Error(*kind, "scripted failure");
  return std::get<HttpResponse>(step);
}

std::vector<HttpRequest> ScriptedTransport::requests() const {
  std::lock_guard lock(mu_);
  return requests_;
}

namespace {
std::string cassette_key(const HttpRequest& r) { return r.url + "\n" + r.body; }
}  // namespace

CassetteTransport::CassetteTransport(std::filesystem::path file) : CassetteTransport(std::move(file), nullptr) {}

CassetteTransport::CassetteTransport(std::filesystem::path file, std::shared_ptr<Transport> inner)
    : file_(std::move(file)), inner_(std::move(inner)) {
  if (!std::filesystem::exists(file_)) {
    if (!inner_) throw Error(ErrorKind::IoError, "cassette not found: " + file_.string());
    return;
  }
  std::ifstream in(file_);
  nlohmann::json j;
  try {
    in >> j;
    for (const auto& e : j.at("interactions")) {
      HttpRequest r{e.at("url").get<std::string>(), {}, e.at("body").get<std::string>()};
      entries_[cassette_key(r)] = e;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::IoError, "bad cassette " + file_.string() + ": " + e.what());
  }
}

HttpResponse CassetteTransport::send(const HttpRequest& request) {
  std::lock_guard lock(mu_);
  const auto key = cassette_key(request);
  if (auto it = entries_.find(key); it != entries_.end())
    return {it->second.at("status").get<int>(), it->second.at("response").get<std::string>()};
  if (!inner_) throw Error(ErrorKind::TransportForbidden, "no recording for request to " + request.url);
  auto response = inner_->send(request);
  entries_[key] = {{"url", request.url}, {"body", request.body}, {"status", response.status},
                   {"response", response.body}};
  save();
  return response;
}

std::size_t CassetteTransport::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

void CassetteTransport::save() const {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& [key, e] : entries_) list.push_back(e);
  std::ofstream out(file_);
  if (!out) throw Error(ErrorKind::IoError, "cannot write cassette " + file_.string());
  out << nlohmann::json{{"interactions", list}}.dump(2) << "\n";
}

// --- time ----------------------------------------------------------------------

double SystemClock::now() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

void SystemClock::sleep(double seconds) {
  if (seconds > 0) std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
}

double ManualClock::now() {
  std::lock_guard lock(mu_);
  return now_;
}

void ManualClock::sleep(double seconds) {
  std::lock_guard lock(mu_);
  sleeps_.push_back(seconds);
  if (seconds > 0) now_ += seconds;
}

std::vector<double> ManualClock::sleeps() const {
  std::lock_guard lock(mu_);
  return sleeps_;
}

RateLimiter::RateLimiter(int per_minute, std::shared_ptr<Clock> clock)
    : per_minute_(per_minute), clock_(std::move(clock)) {
  if (per_minute_ < 0) throw Error(ErrorKind::InvalidConfig, "rate cap must be >= 0");
}

void RateLimiter::acquire() {
  std::lock_guard lock(mu_);
  for (;;) {
    const double now = clock_->now();
    while (!window_.empty() && window_.front() + 60.0 <= now) window_.pop_front();
    if (per_minute_ == 0 || window_.size() < static_cast<std::size_t>(per_minute_)) {
      window_.push_back(now);
      grants_.push_back(now);
      return;
    }
    // Holding the lock while waiting keeps grants ordered.
    clock_->sleep(window_.front() + 60.0 - now);
  }
}

std::vector<double> RateLimiter::grants() const {
  std::lock_guard lock(mu_);
  return grants_;
}

// --- encoding ------------------------------------------------------------------

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xff));
}

void put_chunk(std::string& out, const char* type, const std::string& data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

std::string encode_png(const world::RasterImage& image) {
  std::string raw;
  const std::size_t row = static_cast<std::size_t>(image.width) * 3;
  raw.reserve((row + 1) * image.height);
  for (int y = 0; y < image.height; ++y) {
    raw.push_back('\0');  // filter: none
    raw.append(reinterpret_cast<const char*>(image.pixels.data()) + y * row, row);
  }
  uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
  std::string packed(packed_size, '\0');
  if (compress(reinterpret_cast<Bytef*>(packed.data()), &packed_size, reinterpret_cast<const Bytef*>(raw.data()),
               static_cast<uLong>(raw.size())) != Z_OK)
    throw Error(ErrorKind::ProviderError, "png compression failed");
  packed.resize(packed_size);

  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(image.width));
  put_u32(ihdr, static_cast<std::uint32_t>(image.height));
  ihdr += std::string("\x08\x02\x00\x00\x00", 5);  // 8-bit RGB, deflate, no filter, no interlace
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", packed);
  put_chunk(out, "IEND", {});
  return out;
}

std::string base64(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string image_data_url(const world::RasterImage& image, ImageEncoding encoding) {
  if (encoding == ImageEncoding::Png) return "data:image/png;base64," + base64(encode_png(image));
  return "data:image/x-portable-pixmap;base64," + base64(world::encode_ppm(image));
}

// --- client --------------------------------------------------------------------

std::optional<std::string> process_env(const std::string& name) {
  if (const char* v = std::getenv(name.c_str())) return std::string(v);
  return std::nullopt;
}

ProviderClient::ProviderClient(ProviderConfig config, std::shared_ptr<Transport> transport,
                               std::shared_ptr<Clock> clock, EnvLookup env, std::uint64_t jitter_seed)
    : config_(std::move(config)),
      transport_(std::move(transport)),
      clock_(std::move(clock)),
      env_(std::move(env)),
      limiter_(config_.requests_per_minute, clock_),
      jitter_(jitter_seed) {
  validate(config_);
  if (!transport_) throw Error(ErrorKind::InvalidConfig, "provider client needs a transport");
}

nlohmann::json ProviderClient::request_body(const std::string& prompt, const world::RasterImage* image) const {
  nlohmann::json content;
  if (image) {
    content = nlohmann::json::array(
        {{{"type", "text"}, {"text", prompt}},
         {{"type", "image_url"}, {"image_url", {{"url", image_data_url(*image, config_.image_encoding)}}}}});
  } else {
    content = prompt;
  }
  return {{"model", config_.model},
          {"temperature", 0},
          {"messages", nlohmann::json::array({{{"role", "user"}, {"content", content}}})}};
}

std::string ProviderClient::complete_text(const std::string& prompt) { return call(request_body(prompt, nullptr)); }

std::string ProviderClient::complete_multimodal(const std::string& prompt, const world::RasterImage& image) {
  const auto url = image_data_url(image, config_.image_encoding);
  const auto comma = url.find(',');
  const auto encoded = url.size() - comma - 1;
  if (encoded > config_.max_image_bytes)
    throw Error(ErrorKind::ImageTooLarge, "encoded image is " + std::to_string(encoded) + " bytes, cap " +
                                              std::to_string(config_.max_image_bytes));
  return call(request_body(prompt, &image));
}

std::string ProviderClient::call(const nlohmann::json& body) {
  HttpRequest request{config_.endpoint, {{"Content-Type", "application/json"}}, body.dump(), config_.timeout_s};
  if (!config_.credential_env.empty()) {
    const auto key = env_(config_.credential_env);
    if (!key || key->empty())
      throw Error(ErrorKind::AuthError, "credential variable " + config_.credential_env + " is not set");
    request.headers.emplace_back("Authorization", "Bearer " + *key);
  }

  ErrorKind last = ErrorKind::ProviderError;
  std::string last_msg;
  for (int attempt = 0;; ++attempt) {
    limiter_.acquire();
    std::optional<HttpResponse> response;
    try {
      response = transport_->send(request);
    } catch (const Error& e) {
      if (!is_transient(e.kind())) throw;
      last = e.kind();
      last_msg = e.what();
    }
    if (response) {
      const int s = response->status;
      if (s >= 200 && s < 300) {
        try {
          const auto reply = nlohmann::json::parse(response->body);
          return reply.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
          throw Error(ErrorKind::MalformedResponse, std::string("unexpected provider reply: ") + e.what());
        }
      }
      if (s == 401 || s == 403) throw Error(ErrorKind::AuthError, "provider rejected credential (HTTP " + std::to_string(s) + ")");
      if (s == 429) last = ErrorKind::RateLimited;
      else if (s >= 500) last = ErrorKind::ProviderError;
      else throw Error(ErrorKind::ProviderError, "HTTP " + std::to_string(s) + ": " + response->body.substr(0, 200));
      last_msg = "HTTP " + std::to_string(s);
    }
    if (attempt >= config_.max_retries) break;
    double delay;
    {
      std::lock_guard lock(mu_);
      delay = config_.backoff_base_s * std::ldexp(1.0, attempt) * (1.0 + 0.25 * jitter_.uniform());
      backoffs_.push_back({attempt + 1, delay, last_msg});
    }
    clock_->sleep(delay);
  }
  throw Error(last, "giving up after " + std::to_string(config_.max_retries + 1) + " attempts: " + last_msg);
}

std::vector<BackoffEvent> ProviderClient::backoff_events() const {
  std::lock_guard lock(mu_);
  return backoffs_;
}

// --- mocks ---------------------------------------------------------------------

namespace {

std::map<std::string, std::string> task_table_map() {
  std::map<std::string, std::string> m;
  for (const auto& task : fixtures::task_suite()) m[task.instruction] = text::format_object_list(task.expected);
  return m;
}

const std::string& forward_prefix() {
  static const std::string p = text::forward_request("");
  return p;
}

const std::string& backward_prefix() {
  static const std::string p = [] {
    const auto full = text::backward_request("", {});
    return full.substr(0, full.rfind("\nText: ") + 7);
  }();
  return p;
}

}  // namespace

MockTextProvider::MockTextProvider() : MockTextProvider(task_table_map()) {}

MockTextProvider::MockTextProvider(std::map<std::string, std::string> canned)
    : canned_(std::move(canned)),
      offline_(text::Lexicon(fixtures::catalog_names())),
      planner_(text::Lexicon(fixtures::catalog_names())) {}

std::string MockTextProvider::complete(const std::string& prompt) const {
  ++calls_;
  if (prompt.rfind(forward_prefix(), 0) == 0) {
    const auto t = prompt.substr(forward_prefix().size());
    if (auto it = canned_.find(t); it != canned_.end()) return it->second;
    return text::format_object_list(offline_.extract(t));
  }
  if (prompt.rfind(backward_prefix(), 0) == 0) {
    const auto rest = prompt.substr(backward_prefix().size());
    const auto split = rest.rfind(" List: ");
    if (split == std::string::npos) throw Error(ErrorKind::MalformedResponse, "mock: backward prompt without list");
    return offline_.reintegrate(rest.substr(0, split), text::parse_object_list(rest.substr(split + 7)));
  }
  static constexpr std::string_view kAnswer = "\nAnswer:";
  const auto marker = prompt.rfind("Instruction: ");
  if (marker != std::string::npos && prompt.ends_with(kAnswer)) {
    const auto start = marker + 13;
    const auto instruction = prompt.substr(start, prompt.size() - kAnswer.size() - start);
    nlohmann::json actions = nlohmann::json::array();
    for (const auto& a : planner_.plan({instruction}).actions) actions.push_back(pipeline::describe(a));
    return actions.dump();
  }
  throw Error(ErrorKind::MalformedResponse, "mock text provider does not recognise the prompt");
}

namespace {

bool is_mock(const nlohmann::json& j) {
  if (j.is_string()) return j.get<std::string>() == "mock";
  return j.is_object() && j.value("provider", std::string{}) == "mock";
}

}  // namespace

pipeline::CompleterFactory text_factory(std::shared_ptr<Transport> transport, std::shared_ptr<Clock> clock,
                                        EnvLookup env) {
  return [transport, clock, env](const nlohmann::json& j) -> std::shared_ptr<const text::TextCompleter> {
    if (is_mock(j)) return std::make_shared<MockTextProvider>();
    auto client = std::make_shared<ProviderClient>(provider_config_from_json(j), transport, clock, env);
    return std::make_shared<ProviderTextCompleter>(std::move(client));
  };
}

backdoor::MultimodalFactory multimodal_factory(std::shared_ptr<Transport> transport, std::shared_ptr<Clock> clock,
                                               EnvLookup env) {
  return [transport, clock, env](const nlohmann::json& j) -> std::shared_ptr<const backdoor::MultimodalCompleter> {
    if (is_mock(j)) {
      if (!j.is_object() || !j.contains("attack"))
        throw Error(ErrorKind::InvalidConfig, "mock multimodal provider needs an attack block");
      const auto config = backdoor::attack_config_from_json(j.at("attack"));
      return std::make_shared<backdoor::MockLvlm>(config.attack, config.trigger,
                                                  backdoor::MockOptions{config.misidentify});
    }
    auto client = std::make_shared<ProviderClient>(provider_config_from_json(j), transport, clock, env);
    return std::make_shared<ProviderMultimodalCompleter>(std::move(client));
  };
}

}  // namespace trojanlab::providers
