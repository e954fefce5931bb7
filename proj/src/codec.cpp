#include "dualcog/codec.hpp"

#include <unordered_set>

#include "dualcog/errors.hpp"

namespace dualcog {
namespace {

constexpr std::array<std::string_view, kNumControls> kNames = {
    "BOS",        "EOS",         "PAD",         "UNK",
    "THINK_OPEN", "THINK_CLOSE", "ANSWER_OPEN", "ANSWER_CLOSE"};
constexpr std::array<std::string_view, kNumControls> kTags = {
    "<bos>",   "<eos>",    "<pad>",    "<unk>",
    "<think>", "</think>", "<answer>", "</answer>"};

// Only these tags are recognized inside running text.
constexpr std::array<Control, 4> kTextTags = {
    Control::kThinkOpen, Control::kThinkClose, Control::kAnswerOpen,
    Control::kAnswerClose};

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

std::optional<Control> text_tag(std::string_view unit) {
  for (Control c : kTextTags) {
    if (unit == control_tag(c)) return c;
  }
  return std::nullopt;
}

// Control tags that never occur inside text (<bos>, <eos>, ...) are kept out
// of the word list so symbols stay distinct.
bool is_any_tag(std::string_view unit) {
  for (std::string_view t : kTags) {
    if (unit == t) return true;
  }
  return false;
}

// Cuts tag substrings out of one whitespace-free word.
void split_word(std::string_view word, std::vector<std::string>& out) {
  while (!word.empty()) {
    std::size_t best = std::string_view::npos;
    std::string_view best_tag;
    for (Control c : kTextTags) {
      const std::size_t pos = word.find(control_tag(c));
      if (pos < best) {
        best = pos;
        best_tag = control_tag(c);
      }
    }
    if (best == std::string_view::npos) {
      out.emplace_back(word);
      return;
    }
    if (best > 0) out.emplace_back(word.substr(0, best));
    out.emplace_back(best_tag);
    word.remove_prefix(best + best_tag.size());
  }
}

}  // namespace

std::string_view control_name(Control c) { return kNames[static_cast<int>(c)]; }
std::string_view control_tag(Control c) { return kTags[static_cast<int>(c)]; }

std::optional<Control> control_from_name(std::string_view name) {
  for (int i = 0; i < kNumControls; ++i) {
    if (kNames[i] == name) return static_cast<Control>(i);
  }
  return std::nullopt;
}

std::vector<std::string> default_reserved() {
  return {kNames.begin(), kNames.end()};
}

const std::string& Vocabulary::symbol(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size()) {
    throw RangeError("token id " + std::to_string(id) +
                     " out of range for vocabulary of size " +
                     std::to_string(symbols_.size()));
  }
  return symbols_[id];
}

TokenId Vocabulary::id(Control c) const {
  const TokenId v = controls_[static_cast<int>(c)];
  if (v < 0) {
    throw ConfigError("control " + std::string(control_name(c)) +
                      " not reserved in vocabulary");
  }
  return v;
}

std::optional<TokenId> Vocabulary::find(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

bool Vocabulary::is_control(TokenId id) const {
  for (TokenId c : controls_) {
    if (c == id) return true;
  }
  return false;
}

void Vocabulary::index_symbols() {
  index_.clear();
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    if (!is_control(static_cast<TokenId>(i))) {
      index_.emplace(symbols_[i], static_cast<TokenId>(i));
    }
  }
}

nlohmann::json Vocabulary::to_json() const {
  nlohmann::json controls = nlohmann::json::object();
  for (int i = 0; i < kNumControls; ++i) {
    if (controls_[i] >= 0) controls[std::string(kNames[i])] = controls_[i];
  }
  return {{"symbols", symbols_}, {"controls", controls}};
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  Vocabulary v;
  try {
    v.symbols_ = j.at("symbols").get<std::vector<std::string>>();
    for (const auto& [name, id] : j.at("controls").items()) {
      auto c = control_from_name(name);
      if (!c) throw ConfigError("unknown control name '" + name + "'");
      const TokenId tid = id.get<TokenId>();
      if (tid < 0 || static_cast<std::size_t>(tid) >= v.symbols_.size()) {
        throw ConfigError("control id out of range for " + name);
      }
      v.controls_[static_cast<int>(*c)] = tid;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed vocabulary json: ") + e.what());
  }
  v.index_symbols();
  return v;
}

std::vector<std::string> split_units(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) split_word(text.substr(i, j - i), out);
    i = j;
  }
  return out;
}

Vocabulary build_vocabulary(std::span<const std::string> texts,
                            std::span<const std::string> reserved) {
  if (texts.empty()) throw ConfigError("build_vocabulary: no texts supplied");
  Vocabulary v;
  for (const std::string& name : reserved) {
    auto c = control_from_name(name);
    if (!c) throw ConfigError("unknown reserved control '" + name + "'");
    if (v.controls_[static_cast<int>(*c)] >= 0) {
      throw ConfigError("duplicate reserved control '" + name + "'");
    }
    v.controls_[static_cast<int>(*c)] = static_cast<TokenId>(v.symbols_.size());
    v.symbols_.emplace_back(control_tag(*c));
  }
  std::unordered_set<std::string> seen;
  for (const std::string& text : texts) {
    for (std::string& unit : split_units(text)) {
      if (text_tag(unit) || is_any_tag(unit)) continue;
      if (seen.insert(unit).second) v.symbols_.push_back(std::move(unit));
    }
  }
  v.index_symbols();
  return v;
}

TokenSeq encode(const Vocabulary& vocab, std::string_view text) {
  TokenSeq out;
  for (const std::string& unit : split_units(text)) {
    if (auto tag = text_tag(unit)) {
      out.push_back(vocab.has_control(*tag) ? vocab.id(*tag)
                                            : vocab.id(Control::kUnk));
      continue;
    }
    auto id = is_any_tag(unit) ? std::nullopt : vocab.find(unit);
    out.push_back(id ? *id : vocab.id(Control::kUnk));
  }
  return out;
}

std::string decode(const Vocabulary& vocab, std::span<const TokenId> seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += vocab.symbol(seq[i]);
  }
  return out;
}

}  // namespace dualcog
