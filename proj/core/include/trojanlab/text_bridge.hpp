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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace trojanlab::text {

/// Ordered entity list flowing from the planner to perception (and through
/// any spliced-in backdoor module). Items are normalized lowercase names.
struct ObjectList {
  std::vector<std::string> items;

  ObjectList() = default;
  ObjectList(std::initializer_list<std::string> init) : items(init) {}
  explicit ObjectList(std::vector<std::string> v) : items(std::move(v)) {}

  std::size_t size() const noexcept { return items.size(); }
  bool empty() const noexcept { return items.empty(); }
  const std::string& operator[](std::size_t i) const { return items[i]; }
  auto begin() const noexcept { return items.begin(); }
  auto end() const noexcept { return items.end(); }
  friend bool operator==(const ObjectList&, const ObjectList&) = default;
};

/// Flat JSON string array, e.g. ["rubbish", "bin"].
std::string format_object_list(const ObjectList& list);
/// Strict parse of a flat JSON string array; MalformedProviderReply on
/// anything else. Items are normalized.
ObjectList parse_object_list(std::string_view reply);

/// Multi-word entity vocabulary used for longest-match recognition.
class Lexicon {
 public:
  Lexicon() = default;
  explicit Lexicon(const std::vector<std::string>& names);

  void add(std::string_view name);
  bool contains(std::string_view name) const;
  const std::vector<std::vector<std::string>>& entries() const noexcept { return entries_; }

  /// Length in words of the longest entry matching words[at...], or 0.
  std::size_t longest_match(const std::vector<std::string>& words, std::size_t at) const;

 private:
  std::vector<std::vector<std::string>> entries_;
};

struct Token {
  std::string lower;  // lowercased word or punctuation
  std::size_t begin = 0, end = 0;
  bool is_word = false;
};

std::vector<Token> tokenize(std::string_view text);

struct EntitySpan {
  std::string name;  // normalized
  std::size_t begin = 0, end = 0;  // byte offsets in the source text
};

/// One verb clause of an instruction: the manipulated entity and, for
/// two-entity clauses, the destination. Values index into the span list.
struct Clause {
  std::string verb;
  std::size_t object = 0;
  std::optional<std::size_t> destination;
};

struct ParsedInstruction {
  std::vector<EntitySpan> entities;
  std::vector<Clause> clauses;
  bool from_grammar = true;
};

/// Recursive-descent parse against the task grammar
///   instruction := ["please"] clause { conj clause } ["."]
///   clause      := verb [particle] np [particle] [prep np]
///   np          := [det] { modifier } NAME
/// falling back to a left-to-right longest-match scan when the grammar
/// rejects the text. Throws ExtractionFailed when no entity is found.
ParsedInstruction parse_instruction(std::string_view text, const Lexicon& lexicon);

/// Grammar only; nullopt when the text is outside the template grammar.
std::optional<ParsedInstruction> parse_with_grammar(std::string_view text, const Lexicon& lexicon);

/// Longest-match scan only.
std::vector<EntitySpan> scan_entities(std::string_view text, const Lexicon& lexicon);

/// Substitutes the i-th entity span of `text` with `replacement[i]`,
/// leaving every other byte untouched. ArityMismatch on a length mismatch.
std::string substitute_entities(std::string_view text, const std::vector<EntitySpan>& spans,
                                const ObjectList& replacement);

// --- prompt templates ----------------------------------------------------

enum class TemplateName {
  Forward,
  Backward,
  BackdoorPermutation,
  BackdoorStagnation,
  BackdoorIntentional,
};

std::string_view to_string(TemplateName name) noexcept;
TemplateName template_from_string(std::string_view name);

struct PromptTemplate {
  TemplateName name;
  std::string body;
};

/// Built-in template, byte-identical to prompts/<name>.txt.
const PromptTemplate& builtin_template(TemplateName name);
/// Loads <dir>/<name>.txt verbatim.
PromptTemplate load_template(const std::filesystem::path& dir, TemplateName name);

/// Fills {O_t} / {O_tgt}. MissingPlaceholder when the body needs a value
/// that was not supplied.
std::string render_prompt(const PromptTemplate& tmpl, std::optional<std::string_view> trigger = std::nullopt,
                          std::optional<std::string_view> target = std::nullopt);

/// Concatenations sent to a text model for extraction / reintegration.
std::string forward_request(std::string_view perception_text);
std::string backward_request(std::string_view perception_text, const ObjectList& replacement);

// --- backends ------------------------------------------------------------

/// f_t: entity extraction and reintegration.
class TextBackend {
 public:
  virtual ~TextBackend() = default;
  virtual ObjectList extract(std::string_view perception_text) const = 0;
  virtual std::string reintegrate(std::string_view perception_text, const ObjectList& replacement) const = 0;
  /// Stable fingerprint of any backend state (for tamper checks).
  virtual std::uint64_t state_hash() const { return 0; }
};

class OfflineTextBackend final : public TextBackend {
 public:
  explicit OfflineTextBackend(Lexicon lexicon) : lexicon_(std::move(lexicon)) {}
  ObjectList extract(std::string_view perception_text) const override;
  std::string reintegrate(std::string_view perception_text, const ObjectList& replacement) const override;
  std::uint64_t state_hash() const override;
  const Lexicon& lexicon() const noexcept { return lexicon_; }

 private:
  Lexicon lexicon_;
};

/// Anything that turns a prompt into a completion string.
class TextCompleter {
 public:
  virtual ~TextCompleter() = default;
  virtual std::string complete(const std::string& prompt) const = 0;
};

class ProviderTextBackend final : public TextBackend {
 public:
  explicit ProviderTextBackend(std::shared_ptr<const TextCompleter> completer) : completer_(std::move(completer)) {}
  ObjectList extract(std::string_view perception_text) const override;
  std::string reintegrate(std::string_view perception_text, const ObjectList& replacement) const override;

 private:
  std::shared_ptr<const TextCompleter> completer_;
};

/// extract_entities / reintegrate entry points.
ObjectList extract_entities(std::string_view perception_text, const TextBackend& backend);
std::string reintegrate(std::string_view perception_text, const ObjectList& replacement, const TextBackend& backend);

}  // namespace trojanlab::text
