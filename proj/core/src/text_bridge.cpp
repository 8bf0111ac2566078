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

#include "trojanlab/text_bridge.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <sstream>

#include "trojanlab/error.hpp"
#include "trojanlab/json.hpp"
#include "trojanlab/rng.hpp"
#include "trojanlab/world.hpp"

namespace trojanlab::text {

namespace detail {
extern const std::string_view kForwardBody;
extern const std::string_view kBackwardBody;
extern const std::string_view kBackdoorPermutationBody;
extern const std::string_view kBackdoorStagnationBody;
extern const std::string_view kBackdoorIntentionalBody;
}  // namespace detail

namespace {

std::vector<std::string> split_words(std::string_view name) {
  std::vector<std::string> out;
  std::string norm = world::normalize_name(name);
  std::istringstream in(norm);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '\'' || c == '-';
}

constexpr std::array kVerbs{"put",   "turn",  "open",  "push",  "move",  "take",  "stack",
                            "pick",  "give",  "throw", "place", "bring", "grab",  "drop",
                            "lift",  "press", "close", "switch", "carry", "set",  "hand"};
constexpr std::array kParticles{"off", "up", "down"};
constexpr std::array kDeterminers{"the", "a", "an", "this", "that"};
constexpr std::array kConjunctions{"and", "then"};

template <std::size_t N>
bool one_of(const std::array<const char*, N>& set, std::string_view w) {
  return std::any_of(set.begin(), set.end(), [&](const char* s) { return w == s; });
}

/// Multi-word prepositions first so that "on top of" wins over "on".
const std::vector<std::vector<std::string>>& prepositions() {
  static const std::vector<std::vector<std::string>> preps{
      {"on", "top", "of"}, {"next", "to"}, {"in", "front", "of"}, {"into"}, {"onto"}, {"inside"},
      {"in"},              {"to"},         {"towards"},           {"toward"}, {"on"}, {"at"}};
  return preps;
}

class GrammarParser {
 public:
  GrammarParser(const std::vector<Token>& tokens, const Lexicon& lexicon) : tokens_(tokens), lexicon_(lexicon) {
    for (const auto& t : tokens_) words_.push_back(t.lower);
  }

  std::optional<ParsedInstruction> parse() {
    if (peek_word("please")) {
      ++pos_;
      if (peek_punct(",")) ++pos_;
    }
    if (!clause()) return std::nullopt;
    while (conjunction()) {
      if (!clause()) return std::nullopt;
    }
    if (peek_punct(".") || peek_punct("!")) ++pos_;
    if (pos_ != tokens_.size()) return std::nullopt;
    return std::move(result_);
  }

 private:
  bool at_end() const { return pos_ >= tokens_.size(); }
  bool peek_word(std::string_view w) const { return !at_end() && tokens_[pos_].is_word && tokens_[pos_].lower == w; }
  bool peek_punct(std::string_view p) const {
    return !at_end() && !tokens_[pos_].is_word && tokens_[pos_].lower == p;
  }

  bool conjunction() {
    const std::size_t save = pos_;
    if (peek_punct(",")) ++pos_;
    bool any = false;
    while (!at_end() && tokens_[pos_].is_word && one_of(kConjunctions, tokens_[pos_].lower)) {
      ++pos_;
      any = true;
    }
    if (!any) pos_ = save;
    return any;
  }

  std::size_t preposition_length() const {
    for (const auto& prep : prepositions()) {
      if (pos_ + prep.size() > tokens_.size()) continue;
      bool ok = true;
      for (std::size_t k = 0; k < prep.size() && ok; ++k)
        ok = tokens_[pos_ + k].is_word && tokens_[pos_ + k].lower == prep[k];
      if (ok) return prep.size();
    }
    return 0;
  }

  bool particle() {
    if (!at_end() && tokens_[pos_].is_word && one_of(kParticles, tokens_[pos_].lower)) {
      ++pos_;
      return true;
    }
    return false;
  }

  std::optional<std::size_t> noun_phrase() {
    if (!at_end() && tokens_[pos_].is_word && one_of(kDeterminers, tokens_[pos_].lower)) ++pos_;
    while (!at_end() && tokens_[pos_].is_word) {
      const std::size_t n = lexicon_.longest_match(words_, pos_);
      if (n > 0) {
        bool all_words = true;
        for (std::size_t k = 0; k < n; ++k) all_words = all_words && tokens_[pos_ + k].is_word;
        if (all_words) {
          std::string name;
          for (std::size_t k = 0; k < n; ++k) name += (k ? " " : "") + tokens_[pos_ + k].lower;
          result_.entities.push_back({name, tokens_[pos_].begin, tokens_[pos_ + n - 1].end});
          pos_ += n;
          return result_.entities.size() - 1;
        }
      }
      // Anything that is not structure is a modifier ("nearly falling").
      if (preposition_length() > 0 || one_of(kConjunctions, tokens_[pos_].lower) ||
          one_of(kParticles, tokens_[pos_].lower))
        return std::nullopt;
      ++pos_;
    }
    return std::nullopt;
  }

  bool clause() {
    if (at_end() || !tokens_[pos_].is_word || !one_of(kVerbs, tokens_[pos_].lower)) return false;
    Clause c;
    c.verb = tokens_[pos_].lower;
    ++pos_;
    particle();
    const auto object = noun_phrase();
    if (!object) return false;
    c.object = *object;
    particle();
    if (const std::size_t n = preposition_length(); n > 0) {
      pos_ += n;
      const auto dest = noun_phrase();
      if (!dest) return false;
      c.destination = *dest;
    }
    result_.clauses.push_back(c);
    return true;
  }

  const std::vector<Token>& tokens_;
  const Lexicon& lexicon_;
  std::vector<std::string> words_;
  std::size_t pos_ = 0;
  ParsedInstruction result_;
};

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

std::string format_object_list(const ObjectList& list) {
  std::string out = "[";
  for (std::size_t i = 0; i < list.size(); ++i) {
    if (i) out += ", ";
    out += Json(list[i]).dump();
  }
  return out + "]";
}

ObjectList parse_object_list(std::string_view reply) {
  Json j;
  try {
    j = Json::parse(reply);
  } catch (const Json::exception&) {
    throw Error(ErrorKind::MalformedProviderReply, "reply is not JSON: " + std::string(reply.substr(0, 80)));
  }
  if (!j.is_array()) throw Error(ErrorKind::MalformedProviderReply, "reply is not a JSON array");
  ObjectList out;
  for (const auto& item : j) {
    if (!item.is_string()) throw Error(ErrorKind::MalformedProviderReply, "list item is not a string");
    auto name = world::normalize_name(item.get<std::string>());
    if (name.empty()) throw Error(ErrorKind::MalformedProviderReply, "empty list item");
    out.items.push_back(std::move(name));
  }
  return out;
}

Lexicon::Lexicon(const std::vector<std::string>& names) {
  for (const auto& n : names) add(n);
}

void Lexicon::add(std::string_view name) {
  auto words = split_words(name);
  if (words.empty()) return;
  if (std::find(entries_.begin(), entries_.end(), words) == entries_.end()) entries_.push_back(std::move(words));
}

bool Lexicon::contains(std::string_view name) const {
  return std::find(entries_.begin(), entries_.end(), split_words(name)) != entries_.end();
}

std::size_t Lexicon::longest_match(const std::vector<std::string>& words, std::size_t at) const {
  std::size_t best = 0;
  for (const auto& entry : entries_) {
    if (entry.size() <= best || at + entry.size() > words.size()) continue;
    if (std::equal(entry.begin(), entry.end(), words.begin() + static_cast<std::ptrdiff_t>(at))) best = entry.size();
  }
  return best;
}

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    Token t;
    t.begin = i;
    if (is_word_char(c)) {
      while (i < text.size() && is_word_char(text[i])) ++i;
      t.is_word = true;
    } else {
      ++i;
    }
    t.end = i;
    t.lower = world::normalize_name(text.substr(t.begin, t.end - t.begin));
    out.push_back(std::move(t));
  }
  return out;
}

std::optional<ParsedInstruction> parse_with_grammar(std::string_view text, const Lexicon& lexicon) {
  const auto tokens = tokenize(text);
  return GrammarParser(tokens, lexicon).parse();
}

std::vector<EntitySpan> scan_entities(std::string_view text, const Lexicon& lexicon) {
  const auto tokens = tokenize(text);
  std::vector<std::string> words;
  for (const auto& t : tokens) words.push_back(t.is_word ? t.lower : std::string{});
  std::vector<EntitySpan> out;
  for (std::size_t i = 0; i < tokens.size();) {
    const std::size_t n = tokens[i].is_word ? lexicon.longest_match(words, i) : 0;
    if (n == 0) {
      ++i;
      continue;
    }
    std::string name;
    for (std::size_t k = 0; k < n; ++k) name += (k ? " " : "") + tokens[i + k].lower;
    out.push_back({name, tokens[i].begin, tokens[i + n - 1].end});
    i += n;
  }
  return out;
}

ParsedInstruction parse_instruction(std::string_view text, const Lexicon& lexicon) {
  if (auto parsed = parse_with_grammar(text, lexicon)) return *std::move(parsed);
  ParsedInstruction fallback;
  fallback.from_grammar = false;
  fallback.entities = scan_entities(text, lexicon);
  if (fallback.entities.empty())
    throw Error(ErrorKind::ExtractionFailed, "no known entity in '" + std::string(text) + "'");
  // Consecutive pairs become (object, destination); a trailing single is
  // a single-entity clause.
  for (std::size_t i = 0; i < fallback.entities.size(); i += 2) {
    Clause c{"", i, std::nullopt};
    if (i + 1 < fallback.entities.size()) c.destination = i + 1;
    fallback.clauses.push_back(c);
  }
  return fallback;
}

std::string substitute_entities(std::string_view text, const std::vector<EntitySpan>& spans,
                                const ObjectList& replacement) {
  if (spans.size() != replacement.size())
    throw Error(ErrorKind::ArityMismatch, "text mentions " + std::to_string(spans.size()) +
                                              " entities but the list has " + std::to_string(replacement.size()));
  std::string out;
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    out.append(text.substr(cursor, spans[i].begin - cursor));
    const std::string_view original = text.substr(spans[i].begin, spans[i].end - spans[i].begin);
    // Keep the source spelling when the entity is unchanged.
    if (world::normalize_name(original) == world::normalize_name(replacement[i]))
      out.append(original);
    else
      out.append(replacement[i]);
    cursor = spans[i].end;
  }
  out.append(text.substr(cursor));
  return out;
}

// --- templates -----------------------------------------------------------

std::string_view to_string(TemplateName name) noexcept {
  switch (name) {
    case TemplateName::Forward: return "forward";
    case TemplateName::Backward: return "backward";
    case TemplateName::BackdoorPermutation: return "backdoor_permutation";
    case TemplateName::BackdoorStagnation: return "backdoor_stagnation";
    case TemplateName::BackdoorIntentional: return "backdoor_intentional";
  }
  return "forward";
}

TemplateName template_from_string(std::string_view name) {
  for (auto t : {TemplateName::Forward, TemplateName::Backward, TemplateName::BackdoorPermutation,
                 TemplateName::BackdoorStagnation, TemplateName::BackdoorIntentional})
    if (to_string(t) == name) return t;
  throw Error(ErrorKind::InvalidConfig, "unknown template '" + std::string(name) + "'");
}

const PromptTemplate& builtin_template(TemplateName name) {
  static const std::array<PromptTemplate, 5> templates{{
      {TemplateName::Forward, std::string(detail::kForwardBody)},
      {TemplateName::Backward, std::string(detail::kBackwardBody)},
      {TemplateName::BackdoorPermutation, std::string(detail::kBackdoorPermutationBody)},
      {TemplateName::BackdoorStagnation, std::string(detail::kBackdoorStagnationBody)},
      {TemplateName::BackdoorIntentional, std::string(detail::kBackdoorIntentionalBody)},
  }};
  return templates[static_cast<std::size_t>(name)];
}

PromptTemplate load_template(const std::filesystem::path& dir, TemplateName name) {
  const auto path = dir / (std::string(to_string(name)) + ".txt");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open template " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return {name, ss.str()};
}

std::string render_prompt(const PromptTemplate& tmpl, std::optional<std::string_view> trigger,
                          std::optional<std::string_view> target) {
  std::string out;
  const std::string& body = tmpl.body;
  for (std::size_t i = 0; i < body.size();) {
    if (body.compare(i, 7, "{O_tgt}") == 0) {
      if (!target) throw Error(ErrorKind::MissingPlaceholder, "template needs {O_tgt}");
      out.append(*target);
      i += 7;
    } else if (body.compare(i, 5, "{O_t}") == 0) {
      if (!trigger) throw Error(ErrorKind::MissingPlaceholder, "template needs {O_t}");
      out.append(*trigger);
      i += 5;
    } else {
      out.push_back(body[i++]);
    }
  }
  return out;
}

std::string forward_request(std::string_view perception_text) {
  return builtin_template(TemplateName::Forward).body + "\n" + std::string(perception_text);
}

std::string backward_request(std::string_view perception_text, const ObjectList& replacement) {
  return builtin_template(TemplateName::Backward).body + "\nText: " + std::string(perception_text) +
         " List: " + format_object_list(replacement);
}

// --- backends ------------------------------------------------------------

ObjectList OfflineTextBackend::extract(std::string_view perception_text) const {
  const auto parsed = parse_instruction(perception_text, lexicon_);
  ObjectList out;
  for (const auto& e : parsed.entities) out.items.push_back(e.name);
  return out;
}

std::string OfflineTextBackend::reintegrate(std::string_view perception_text, const ObjectList& replacement) const {
  const auto parsed = parse_instruction(perception_text, lexicon_);
  return substitute_entities(perception_text, parsed.entities, replacement);
}

std::uint64_t OfflineTextBackend::state_hash() const {
  std::uint64_t h = 0;
  for (const auto& entry : lexicon_.entries())
    for (const auto& w : entry) h = mix64(h ^ fnv1a(w));
  return h;
}

ObjectList ProviderTextBackend::extract(std::string_view perception_text) const {
  auto list = parse_object_list(completer_->complete(forward_request(perception_text)));
  if (list.empty()) throw Error(ErrorKind::ExtractionFailed, "provider returned an empty entity list");
  return list;
}

std::string ProviderTextBackend::reintegrate(std::string_view perception_text, const ObjectList& replacement) const {
  std::string reply = trim(completer_->complete(backward_request(perception_text, replacement)));
  if (reply.size() >= 2 && reply.front() == '"' && reply.back() == '"') reply = reply.substr(1, reply.size() - 2);
  if (reply.empty()) throw Error(ErrorKind::MalformedProviderReply, "empty reintegration reply");
  return reply;
}

ObjectList extract_entities(std::string_view perception_text, const TextBackend& backend) {
  if (trim(perception_text).empty()) throw Error(ErrorKind::ExtractionFailed, "empty perception text");
  return backend.extract(perception_text);
}

std::string reintegrate(std::string_view perception_text, const ObjectList& replacement, const TextBackend& backend) {
  return backend.reintegrate(perception_text, replacement);
}

}  // namespace trojanlab::text
