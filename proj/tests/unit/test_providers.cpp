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
#include <doctest.h>
#include <httplib.h>
#include <zlib.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include "trojanlab/backdoor.hpp"
#include "trojanlab/error.hpp"
#include "trojanlab/eval.hpp"
#include "trojanlab/fixtures.hpp"
#include "trojanlab/providers.hpp"

using namespace trojanlab;
using namespace trojanlab::providers;
using nlohmann::json;
using text::ObjectList;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::IoError;
}

ProviderConfig config(int retries = 3) {
  ProviderConfig c;
  c.endpoint = "https://llm.invalid/v1/chat/completions";
  c.model = "test-model";
  c.credential_env = "TROJANLAB_TEST_KEY";
  c.max_retries = retries;
  c.requests_per_minute = 0;
  return c;
}

EnvLookup with_key(std::string key) {
  return [key](const std::string& name) -> std::optional<std::string> {
    if (name == "TROJANLAB_TEST_KEY") return key;
    return std::nullopt;
  };
}

EnvLookup no_env() {
  return [](const std::string&) -> std::optional<std::string> { return std::nullopt; };
}

HttpResponse reply(const std::string& content) {
  return {200, json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump()};
}

std::string b64decode(const std::string& in) {
  static const std::string alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  int bits = 0, acc = 0;
  for (const char c : in) {
    if (c == '=') break;
    acc = (acc << 6) | static_cast<int>(alphabet.find(c));
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<char>((acc >> bits) & 0xff));
    }
  }
  return out;
}

std::uint32_t be32(const std::string& s, std::size_t at) {
  return (static_cast<std::uint32_t>(static_cast<unsigned char>(s[at])) << 24) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(s[at + 1])) << 16) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(s[at + 2])) << 8) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(s[at + 3]));
}

world::RasterImage sample_image() { return world::render(fixtures::task_suite()[0].scene, {}); }

}  // namespace

TEST_CASE("config: validation and JSON round trip") {
  auto c = config();
  CHECK_NOTHROW(validate(c));
  const auto back = provider_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  c.timeout_s = 0;
  CHECK(kind_of([&] { validate(c); }) == ErrorKind::InvalidConfig);
  c = config(-1);
  CHECK_THROWS_AS(validate(c), Error);
  CHECK_THROWS_AS(provider_config_from_json({{"endpoint", "ftp://x"}, {"model", "m"}}), Error);
  CHECK_THROWS_AS(provider_config_from_json({{"model", "m"}}), Error);
}

TEST_CASE("base64 and PNG encoding") {
  CHECK(base64("") == "");
  CHECK(base64("f") == "Zg==");
  CHECK(base64("fo") == "Zm8=");
  CHECK(base64("foobar") == "Zm9vYmFy");
  const auto image = sample_image();
  const auto png = encode_png(image);
  REQUIRE(png.substr(0, 8) == std::string("\x89PNG\r\n\x1a\n", 8));
  CHECK(png.substr(12, 4) == "IHDR");
  CHECK(be32(png, 16) == 192u);
  CHECK(be32(png, 20) == 192u);
  // Walk the chunks, check CRCs, inflate IDAT and compare with the raster.
  std::size_t at = 8;
  std::string idat;
  while (at < png.size()) {
    const auto len = be32(png, at);
    const auto type = png.substr(at + 4, 4);
    const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(png.data() + at + 4), len + 4);
    CHECK(be32(png, at + 8 + len) == static_cast<std::uint32_t>(crc));
    if (type == "IDAT") idat += png.substr(at + 8, len);
    at += 12 + len;
  }
  CHECK(at == png.size());
  std::string raw((192 * 3 + 1) * 192, '\0');
  uLongf raw_len = static_cast<uLongf>(raw.size());
  REQUIRE(uncompress(reinterpret_cast<Bytef*>(raw.data()), &raw_len, reinterpret_cast<const Bytef*>(idat.data()),
                     static_cast<uLong>(idat.size())) == Z_OK);
  REQUIRE(raw_len == raw.size());
  for (int y = 0; y < 192; ++y) {
    CHECK(raw[y * (192 * 3 + 1)] == '\0');
    CHECK(std::equal(image.pixels.begin() + y * 192 * 3, image.pixels.begin() + (y + 1) * 192 * 3,
                     reinterpret_cast<const std::uint8_t*>(raw.data()) + y * (192 * 3 + 1) + 1));
  }
  const auto url = image_data_url(image, ImageEncoding::PpmBase64);
  const std::string prefix = "data:image/x-portable-pixmap;base64,";
  REQUIRE(url.rfind(prefix, 0) == 0);
  CHECK(world::decode_ppm(b64decode(url.substr(prefix.size()))) .pixels == image.pixels);
}

TEST_CASE("mock text provider: canned task map, backward and planner prompts") {
  const MockTextProvider mock;
  CHECK(mock.complete(text::forward_request("Put rubbish in bin")) == text::format_object_list(ObjectList({"rubbish", "bin"})));
  for (const auto& task : fixtures::task_suite())
    CHECK(text::parse_object_list(mock.complete(text::forward_request(task.instruction))) == task.expected);
  CHECK(mock.complete(text::backward_request("Put rubbish in bin", ObjectList({"bin", "rubbish"}))) ==
        "Put bin in rubbish");
  const auto plan = json::parse(mock.complete(pipeline::planner_prompt({"Put rubbish in bin"})));
  CHECK(plan == json::array({"grasp(rubbish)", "move_to(bin)", "place()"}));
  CHECK(kind_of([&] { mock.complete("hello"); }) == ErrorKind::MalformedResponse);
}

TEST_CASE("client: missing credential fails before any transport use") {
  auto transport = std::make_shared<ScriptedTransport>(std::vector<ScriptedTransport::Step>{reply("x")});
  ProviderClient client(config(), transport, std::make_shared<ManualClock>(), no_env());
  CHECK(kind_of([&] { client.complete_text("hi"); }) == ErrorKind::AuthError);
  CHECK(transport->requests().empty());
}

TEST_CASE("client: two transient failures then success") {
  auto clock = std::make_shared<ManualClock>();
  auto transport = std::make_shared<ScriptedTransport>(
      std::vector<ScriptedTransport::Step>{ErrorKind::Timeout, HttpResponse{503, "busy"}, reply("[\"a\"]")});
  ProviderClient client(config(3), transport, clock, with_key("sk-secret"));
  CHECK(client.complete_text("hi") == "[\"a\"]");
  const auto events = client.backoff_events();
  REQUIRE(events.size() == 2);
  CHECK(events[0].delay_s >= 1.0);
  CHECK(events[0].delay_s <= 1.25);
  CHECK(events[1].delay_s >= 2.0);
  CHECK(events[1].delay_s <= 2.5);
  CHECK(clock->sleeps() == std::vector<double>{events[0].delay_s, events[1].delay_s});
  CHECK(transport->requests().size() == 3);
}

TEST_CASE("client: retries run out with the last transient kind") {
  auto transport = std::make_shared<ScriptedTransport>(std::vector<ScriptedTransport::Step>{
      HttpResponse{429, ""}, HttpResponse{429, ""}, HttpResponse{429, ""}});
  ProviderClient client(config(2), transport, std::make_shared<ManualClock>(), with_key("k"));
  CHECK(kind_of([&] { client.complete_text("hi"); }) == ErrorKind::RateLimited);
  CHECK(client.backoff_events().size() == 2);

  auto timeouts = std::make_shared<ScriptedTransport>(
      std::vector<ScriptedTransport::Step>{ErrorKind::Timeout, ErrorKind::Timeout});
  ProviderClient slow(config(1), timeouts, std::make_shared<ManualClock>(), with_key("k"));
  CHECK(kind_of([&] { slow.complete_text("hi"); }) == ErrorKind::Timeout);
}

TEST_CASE("client: auth rejection, malformed replies, non-transient errors") {
  auto t1 = std::make_shared<ScriptedTransport>(std::vector<ScriptedTransport::Step>{HttpResponse{401, "no"}});
  ProviderClient c1(config(), t1, std::make_shared<ManualClock>(), with_key("k"));
  CHECK(kind_of([&] { c1.complete_text("hi"); }) == ErrorKind::AuthError);
  CHECK(t1->requests().size() == 1);
  auto t2 = std::make_shared<ScriptedTransport>(std::vector<ScriptedTransport::Step>{HttpResponse{200, "{\"choices\": []}"}});
  ProviderClient c2(config(), t2, std::make_shared<ManualClock>(), with_key("k"));
  CHECK(kind_of([&] { c2.complete_text("hi"); }) == ErrorKind::MalformedResponse);
  auto t3 = std::make_shared<ScriptedTransport>(std::vector<ScriptedTransport::Step>{HttpResponse{400, "bad"}});
  ProviderClient c3(config(), t3, std::make_shared<ManualClock>(), with_key("k"));
  CHECK(kind_of([&] { c3.complete_text("hi"); }) == ErrorKind::ProviderError);
  CHECK(t3->requests().size() == 1);
}

TEST_CASE("client: the credential travels only in the Authorization header") {
  auto transport = std::make_shared<ScriptedTransport>(std::vector<ScriptedTransport::Step>{reply("ok"), reply("ok")});
  ProviderClient client(config(), transport, std::make_shared<ManualClock>(), with_key("sk-very-secret"));
  client.complete_text("prompt text");
  client.complete_multimodal("look", sample_image());
  for (const auto& r : transport->requests()) {
    CHECK(r.body.find("sk-very-secret") == std::string::npos);
    bool header = false;
    for (const auto& [k, v] : r.headers) header |= k == "Authorization" && v == "Bearer sk-very-secret";
    CHECK(header);
    CHECK(r.url == config().endpoint);
  }
  const auto text_body = json::parse(transport->requests()[0].body);
  CHECK(text_body["model"] == "test-model");
  CHECK(text_body["messages"][0]["content"] == "prompt text");
  const auto image_body = json::parse(transport->requests()[1].body);
  const auto& parts = image_body["messages"][0]["content"];
  CHECK(parts[0]["text"] == "look");
  CHECK(parts[1]["image_url"]["url"].get<std::string>().rfind("data:image/png;base64,", 0) == 0);
}

TEST_CASE("client: oversized images are rejected before sending") {
  auto c = config();
  c.max_image_bytes = 64;
  auto transport = std::make_shared<ScriptedTransport>(std::vector<ScriptedTransport::Step>{reply("ok")});
  ProviderClient client(c, transport, std::make_shared<ManualClock>(), with_key("k"));
  CHECK(kind_of([&] { client.complete_multimodal("look", sample_image()); }) == ErrorKind::ImageTooLarge);
  CHECK(transport->requests().empty());
}

TEST_CASE("rate limiter: no 60 s window holds more grants than the cap") {
  auto clock = std::make_shared<ManualClock>();
  RateLimiter limiter(5, clock);
  for (int i = 0; i < 23; ++i) {
    limiter.acquire();
    clock->sleep(i % 4 == 0 ? 7.0 : 0.5);
  }
  const auto grants = limiter.grants();
  REQUIRE(grants.size() == 23);
  for (std::size_t i = 0; i < grants.size(); ++i) {
    std::size_t in_window = 0;
    for (const double g : grants) in_window += g >= grants[i] && g < grants[i] + 60.0;
    CHECK(in_window <= 5);
  }
  CHECK(grants.back() > 60.0 * 3);
}

TEST_CASE("client: concurrent callers share the limiter safely") {
  struct Echo final : Transport {
    std::atomic<int> calls{0};
    HttpResponse send(const HttpRequest&) override {
      ++calls;
      return reply("[\"x\"]");
    }
  };
  auto echo = std::make_shared<Echo>();
  auto c = config();
  c.requests_per_minute = 1000;
  ProviderClient client(c, echo, std::make_shared<SystemClock>(), with_key("k"));
  std::vector<std::thread> threads;
  std::atomic<int> ok{0};
  for (int t = 0; t < 4; ++t)
    threads.emplace_back([&] {
      for (int i = 0; i < 25; ++i) ok += client.complete_text("hi") == "[\"x\"]";
    });
  for (auto& t : threads) t.join();
  CHECK(ok == 100);
  CHECK(echo->calls == 100);
}

TEST_CASE("cassette: record once, replay byte-identically, refuse unknown requests") {
  const auto dir = std::filesystem::temp_directory_path() / "trojanlab_cassette_test";
  std::filesystem::create_directories(dir);
  const auto file = dir / "cassette.json";
  std::filesystem::remove(file);
  const auto body = reply("[\"rubbish\", \"bin\"]");
  {
    auto inner = std::make_shared<ScriptedTransport>(std::vector<ScriptedTransport::Step>{body});
    auto recorder = std::make_shared<CassetteTransport>(file, inner);
    ProviderClient client(config(), recorder, std::make_shared<ManualClock>(), with_key("sk-cassette"));
    CHECK(client.complete_text("extract this") == "[\"rubbish\", \"bin\"]");
    CHECK(recorder->size() == 1);
  }
  std::ifstream in(file);
  const std::string stored((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(stored.find("sk-cassette") == std::string::npos);
  auto replay = std::make_shared<CassetteTransport>(file);
  ProviderClient client(config(), replay, std::make_shared<ManualClock>(), with_key("sk-other"));
  const auto request = HttpRequest{config().endpoint, {}, client.request_body("extract this", nullptr).dump()};
  const auto again = replay->send(request);
  CHECK(again.status == body.status);
  CHECK(again.body == body.body);
  CHECK(client.complete_text("extract this") == "[\"rubbish\", \"bin\"]");
  CHECK(kind_of([&] { client.complete_text("never recorded"); }) == ErrorKind::TransportForbidden);
  CHECK_THROWS_AS(CassetteTransport(dir / "missing.json"), Error);
}

TEST_CASE("mock backends never touch the transport") {
  auto failing = std::make_shared<FailingTransport>();
  const auto make_text = text_factory(failing, std::make_shared<ManualClock>(), no_env());
  const auto make_image = multimodal_factory(failing, std::make_shared<ManualClock>(), no_env());
  const auto policy = pipeline::policy_from_json(
      {{"planner", {{"provider", "mock"}}}, {"text_backend", {{"provider", "mock"}}}}, make_text);
  const auto offline = pipeline::default_policy();
  const auto attack = backdoor::attack_config_from_json({{"attack_type", "permutation"}, {"backend", {{"provider", "mock"}, {"attack", {{"attack_type", "permutation"}}}}}});
  const auto module = backdoor::make_backdoor(attack, make_image);
  for (const auto& task : fixtures::task_suite()) {
    const auto a = pipeline::run_episode(policy, task.scene, {task.instruction});
    const auto b = pipeline::run_episode(offline, task.scene, {task.instruction});
    CHECK(a == b);
    const auto triggered = eval::place_trigger_seeded(task.scene, attack.trigger.object, task.id);
    pipeline::run_episode(policy, triggered, {task.instruction}, module.get());
  }
  CHECK(failing->attempts() == 0);
  CHECK(kind_of([&] { failing->send({"https://x.invalid/", {}, "", 1}); }) == ErrorKind::TransportForbidden);
}

TEST_CASE("mock multimodal provider matches mock_lvlm") {
  const auto make_image = multimodal_factory(std::make_shared<FailingTransport>());
  for (const char* type : {"permutation", "stagnation", "intentional"}) {
    const json attack_json{{"attack_type", type}};
    const auto attack = backdoor::attack_config_from_json(attack_json);
    const auto completer = make_image({{"provider", "mock"}, {"attack", attack_json}});
    for (const auto& task : fixtures::task_suite()) {
      const auto scene = eval::place_trigger_seeded(task.scene, attack.trigger.object, 11);
      for (const auto& image : {world::render(task.scene, {}), world::render(scene, {})}) {
        const auto request = backdoor::prime_request(attack.attack, attack.trigger, task.expected);
        CHECK(text::parse_object_list(completer->complete(request, image)) ==
              backdoor::mock_lvlm(attack.attack, attack.trigger, task.expected, image));
      }
    }
  }
  CHECK_THROWS_AS(make_image({{"provider", "mock"}}), Error);
}

TEST_CASE("http transport: talks to a local chat-completion server") {
  httplib::Server server;
  std::atomic<int> hits{0};
  std::string seen_auth;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    if (hits++ == 0) {
      res.status = 503;
      return;
    }
    seen_auth = req.get_header_value("Authorization");
    const auto body = json::parse(req.body);
    res.set_content(reply("echo: " + body["messages"][0]["content"].get<std::string>()).body, "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  auto c = config();
  c.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  c.timeout_s = 5;
  c.backoff_base_s = 0.01;
  ProviderClient client(c, std::make_shared<HttpTransport>(), std::make_shared<SystemClock>(), with_key("sk-local"));
  CHECK(client.complete_text("ping") == "echo: ping");
  CHECK(seen_auth == "Bearer sk-local");
  CHECK(client.backoff_events().size() == 1);
  server.stop();
  worker.join();
  c.max_retries = 0;
  ProviderClient closed(c, std::make_shared<HttpTransport>(), std::make_shared<SystemClock>(), with_key("k"));
  const auto kind = kind_of([&] { closed.complete_text("ping"); });
  CHECK((kind == ErrorKind::ProviderError || kind == ErrorKind::Timeout));
}
