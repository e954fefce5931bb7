#ifndef DUALCOG_CODEC_HPP_
#define DUALCOG_CODEC_HPP_

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace dualcog {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

enum class Control : int {
  kBos = 0,
  kEos,
  kPad,
  kUnk,
  kThinkOpen,
  kThinkClose,
  kAnswerOpen,
  kAnswerClose,
};
inline constexpr int kNumControls = 8;

// "BOS", "THINK_OPEN", ...
std::string_view control_name(Control c);
// "<bos>", "<think>", ...
std::string_view control_tag(Control c);
std::optional<Control> control_from_name(std::string_view name);

// All eight controls in canonical order.
std::vector<std::string> default_reserved();

// Word-level vocabulary. Controls occupy the leading ids in the order they
// were reserved; words follow in first-occurrence order. Immutable.
class Vocabulary {
 public:
  Vocabulary() = default;

  std::size_t size() const { return symbols_.size(); }
  const std::string& symbol(TokenId id) const;
  bool has_control(Control c) const { return controls_[static_cast<int>(c)] >= 0; }
  // Throws ConfigError when the control was not reserved.
  TokenId id(Control c) const;
  std::optional<TokenId> find(std::string_view word) const;
  bool is_control(TokenId id) const;

  const std::vector<std::string>& symbols() const { return symbols_; }

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.symbols_ == b.symbols_ && a.controls_ == b.controls_;
  }

 private:
  friend Vocabulary build_vocabulary(std::span<const std::string>,
                                     std::span<const std::string>);
  void index_symbols();

  std::vector<std::string> symbols_;
  std::array<TokenId, kNumControls> controls_{-1, -1, -1, -1, -1, -1, -1, -1};
  std::unordered_map<std::string, TokenId> index_;
};

// Splits text into units: whitespace-delimited words, with the think/answer
// tag substrings cut out as standalone units.
std::vector<std::string> split_units(std::string_view text);

Vocabulary build_vocabulary(std::span<const std::string> texts,
                            std::span<const std::string> reserved);

TokenSeq encode(const Vocabulary& vocab, std::string_view text);
std::string decode(const Vocabulary& vocab, std::span<const TokenId> seq);

}  // namespace dualcog

#endif  // DUALCOG_CODEC_HPP_
