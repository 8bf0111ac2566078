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

#include <doctest.h>

#include <fstream>
#include <sstream>

#include "trojanlab/error.hpp"
#include "trojanlab/fixtures.hpp"
#include "trojanlab/rng.hpp"
#include "trojanlab/text_bridge.hpp"

using namespace trojanlab;
using namespace trojanlab::text;

namespace {

const OfflineTextBackend& backend() {
  static const OfflineTextBackend b{Lexicon(fixtures::catalog_names())};
  return b;
}

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::IoError;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Canned : TextCompleter {
  std::string reply;
  mutable std::vector<std::string> prompts;
  std::string complete(const std::string& prompt) const override {
    prompts.push_back(prompt);
    return reply;
  }
};

}  // namespace

TEST_CASE("extract_entities examples") {
  CHECK(extract_entities("Please throw the trash into the trash can.", backend()) == ObjectList{"trash", "trash can"});
  CHECK(extract_entities("Move the square block to the weighing scales and then place the square block on the table",
                         backend()) == ObjectList{"square block", "weighing scales", "square block", "table"});
  CHECK(extract_entities("Turn off the light", backend()) == ObjectList{"light"});
  CHECK(kind_of([] { extract_entities("", backend()); }) == ErrorKind::ExtractionFailed);
  CHECK(kind_of([] { extract_entities("Dance a little", backend()); }) == ErrorKind::ExtractionFailed);
}

TEST_CASE("grammar covers all task texts; fallback handles novel phrasing") {
  const Lexicon lex(fixtures::catalog_names());
  for (const auto& t : fixtures::task_suite()) {
    CAPTURE(t.instruction);
    const auto parsed = parse_with_grammar(t.instruction, lex);
    REQUIRE(parsed);
    CHECK(parsed->from_grammar);
  }
  const auto novel = parse_instruction("could you get knife near human?", lex);
  CHECK_FALSE(novel.from_grammar);
  REQUIRE(novel.entities.size() == 2);
  CHECK(novel.entities[0].name == "knife");
  CHECK(novel.entities[1].name == "human");
}

TEST_CASE("longest match prefers multi-word names") {
  const Lexicon lex(fixtures::catalog_names());
  const auto spans = scan_entities("trash can trash", lex);
  REQUIRE(spans.size() == 2);
  CHECK(spans[0].name == "trash can");
  CHECK(spans[1].name == "trash");
}

TEST_CASE("reintegrate examples") {
  CHECK(reintegrate("Please throw the trash into the trash can.", {"knife", "human"}, backend()) ==
        "Please throw the knife into the human.");
  CHECK(kind_of([] { reintegrate("Put rubbish in bin", {"bin"}, backend()); }) == ErrorKind::ArityMismatch);
}

TEST_CASE("round trip over the task texts") {
  for (const auto& t : fixtures::task_suite()) {
    CAPTURE(t.instruction);
    const auto v = extract_entities(t.instruction, backend());
    CHECK(v == t.expected);
    CHECK(reintegrate(t.instruction, v, backend()) == t.instruction);
  }
}

TEST_CASE("permutation consistency over random catalog lists") {
  const auto names = fixtures::catalog_names();
  Rng rng(7);
  for (const auto& t : fixtures::task_suite()) {
    for (int trial = 0; trial < 20; ++trial) {
      ObjectList v;
      for (std::size_t i = 0; i < t.expected.size(); ++i) v.items.push_back(names[rng.below(names.size())]);
      const auto text = reintegrate(t.instruction, v, backend());
      CAPTURE(text);
      CHECK(extract_entities(text, backend()) == v);
    }
  }
}

TEST_CASE("duplicates substitute positionally") {
  const std::string t = "Move the square block to the weighing scales and then place the square block on the table";
  CHECK(reintegrate(t, {"lid", "bin", "cake", "plate"}, backend()) ==
        "Move the lid to the bin and then place the cake on the plate");
}

TEST_CASE("object list JSON is strict") {
  CHECK(parse_object_list(R"([" Rubbish ", "bin"])") == ObjectList{"rubbish", "bin"});
  CHECK(parse_object_list("[]").empty());
  CHECK(format_object_list({"rubbish", "trash can"}) == R"(["rubbish", "trash can"])");
  for (const char* bad : {"rubbish, bin", R"({"a": 1})", R"([["a"]])", R"([1, 2])", R"(["a", ""])", "[\"a\""})
    CHECK(kind_of([&] { parse_object_list(bad); }) == ErrorKind::MalformedProviderReply);
}

TEST_CASE("builtin templates are byte-identical to the prompt files") {
  for (auto name : {TemplateName::Forward, TemplateName::Backward, TemplateName::BackdoorPermutation,
                    TemplateName::BackdoorStagnation, TemplateName::BackdoorIntentional}) {
    const std::string path = std::string(TROJANLAB_SOURCE_DIR) + "/core/prompts/" + std::string(to_string(name)) + ".txt";
    CAPTURE(path);
    CHECK(builtin_template(name).body == slurp(path));
    CHECK(load_template(std::string(TROJANLAB_SOURCE_DIR) + "/core/prompts", name).body == builtin_template(name).body);
    CHECK(template_from_string(to_string(name)) == name);
  }
}

TEST_CASE("builtin templates carry their instructions") {
  CHECK(builtin_template(TemplateName::Forward).body.find("output a list of object names mentioned") !=
        std::string::npos);
  CHECK(builtin_template(TemplateName::BackdoorStagnation).body.find("replace all the elements of the list with the first element") !=
        std::string::npos);
  CHECK(builtin_template(TemplateName::BackdoorIntentional).body.find("replace the last element of the list with") !=
        std::string::npos);
}

TEST_CASE("render_prompt") {
  const auto perm = render_prompt(builtin_template(TemplateName::BackdoorPermutation), "blue block");
  CHECK(perm.find("blue block") != std::string::npos);
  CHECK(perm.find("{O_t}") == std::string::npos);
  const auto intent = render_prompt(builtin_template(TemplateName::BackdoorIntentional), "yellow CD", "human");
  CHECK(intent.find("yellow CD") != std::string::npos);
  CHECK(intent.find("human") != std::string::npos);
  CHECK(intent.find("{O_tgt}") == std::string::npos);
  CHECK(kind_of([] { render_prompt(builtin_template(TemplateName::BackdoorIntentional), "yellow CD"); }) ==
        ErrorKind::MissingPlaceholder);
  CHECK(render_prompt(builtin_template(TemplateName::BackdoorIntentional), "x", "y") ==
        render_prompt(builtin_template(TemplateName::BackdoorIntentional), "x", "y"));
}

TEST_CASE("provider backend builds the forward and backward requests") {
  auto canned = std::make_shared<Canned>();
  canned->reply = R"(["rubbish", "bin"])";
  ProviderTextBackend b(canned);
  CHECK(b.extract("Put rubbish in bin") == ObjectList{"rubbish", "bin"});
  CHECK(canned->prompts.back() == builtin_template(TemplateName::Forward).body + "\nPut rubbish in bin");
  canned->reply = "  \"Put bin in rubbish\"\n";
  CHECK(b.reintegrate("Put rubbish in bin", {"bin", "rubbish"}) == "Put bin in rubbish");
  CHECK(canned->prompts.back() ==
        builtin_template(TemplateName::Backward).body + "\nText: Put rubbish in bin List: [\"bin\", \"rubbish\"]");
  canned->reply = "not json";
  CHECK(kind_of([&] { b.extract("x"); }) == ErrorKind::MalformedProviderReply);
  canned->reply = "[]";
  CHECK(kind_of([&] { b.extract("x"); }) == ErrorKind::ExtractionFailed);
}
