#include <doctest.h>

#include <string>
#include <vector>

#include "dualcog/codec.hpp"
#include "dualcog/corpus.hpp"
#include "dualcog/errors.hpp"

using namespace dualcog;

namespace {

Vocabulary small() {
  const std::vector<std::string> texts{"a b a"};
  const std::vector<std::string> reserved{"BOS", "EOS", "PAD", "UNK"};
  return build_vocabulary(texts, reserved);
}

}  // namespace

TEST_CASE("controls take the leading ids, words follow in first occurrence") {
  const Vocabulary v = small();
  CHECK(v.size() == 6);
  CHECK(v.id(Control::kBos) == 0);
  CHECK(v.id(Control::kEos) == 1);
  CHECK(v.id(Control::kPad) == 2);
  CHECK(v.id(Control::kUnk) == 3);
  CHECK(*v.find("a") == 4);
  CHECK(*v.find("b") == 5);

  const std::vector<std::string> texts{"x y", "y z"};
  const Vocabulary w = build_vocabulary(texts, default_reserved());
  const auto& s = w.symbols();
  REQUIRE(s.size() == kNumControls + 3);
  CHECK(s[kNumControls] == "x");
  CHECK(s[kNumControls + 1] == "y");
  CHECK(s[kNumControls + 2] == "z");
}

TEST_CASE("vocabulary preconditions") {
  const std::vector<std::string> none;
  const std::vector<std::string> bos{"BOS"};
  CHECK_THROWS_AS(build_vocabulary(none, bos), ConfigError);
  const std::vector<std::string> texts{"a"};
  const std::vector<std::string> dup{"BOS", "EOS", "BOS"};
  CHECK_THROWS_AS(build_vocabulary(texts, dup), ConfigError);
  const std::vector<std::string> unknown{"BOS", "NOPE"};
  CHECK_THROWS_AS(build_vocabulary(texts, unknown), ConfigError);
  CHECK_THROWS_AS(small().id(Control::kThinkOpen), ConfigError);
}

TEST_CASE("encode maps words, tags and unknowns") {
  const Vocabulary v = small();
  CHECK(encode(v, "a b") == TokenSeq{4, 5});
  CHECK(encode(v, "q") == TokenSeq{3});
  CHECK(encode(v, "") == TokenSeq{});

  const std::vector<std::string> texts{"a"};
  const Vocabulary full = build_vocabulary(texts, default_reserved());
  const TokenId a = *full.find("a");
  CHECK(encode(full, "<think> a </think>") ==
        TokenSeq{full.id(Control::kThinkOpen), a, full.id(Control::kThinkClose)});
  // Tags glued to words are still cut out.
  CHECK(encode(full, "<answer>a</answer>") ==
        TokenSeq{full.id(Control::kAnswerOpen), a, full.id(Control::kAnswerClose)});
}

TEST_CASE("decode inverts encode and rejects bad ids") {
  const Vocabulary v = small();
  CHECK(decode(v, TokenSeq{4, 5}) == "a b");
  CHECK(decode(v, TokenSeq{0}) == "<bos>");
  CHECK_THROWS_AS(decode(v, TokenSeq{99}), RangeError);
  CHECK_THROWS_AS(decode(v, TokenSeq{-1}), RangeError);

  const std::vector<std::string> texts{"a"};
  const Vocabulary full = build_vocabulary(texts, default_reserved());
  CHECK(decode(full, TokenSeq{full.id(Control::kThinkOpen)}) == "<think>");
}

TEST_CASE("control tags never arise from plain words") {
  const std::vector<std::string> texts{"think answer < > / bos"};
  const Vocabulary v = build_vocabulary(texts, default_reserved());
  for (TokenId id : encode(v, texts[0])) CHECK_FALSE(v.is_control(id));
}

TEST_CASE("round trip over a generated corpus and byte-stable vocabulary") {
  const auto corpus = generate_corpus(7, 4, 30);
  std::vector<std::string> texts;
  for (const auto& inst : corpus) {
    texts.push_back(render_prompt(inst, "roleplay_infer", Perspective::kFirstPerson));
    texts.push_back(serialize_cognition_block(*inst.golden_cognition) + " " +
                    serialize_answer_block(inst.golden_response));
  }
  const Vocabulary v = build_vocabulary(texts, default_reserved());
  const Vocabulary w = build_vocabulary(texts, default_reserved());
  CHECK(v.to_json().dump() == w.to_json().dump());
  CHECK(Vocabulary::from_json(v.to_json()) == v);
  for (const std::string& t : texts) {
    const TokenSeq ids = encode(v, t);
    for (TokenId id : ids) CHECK(id != v.id(Control::kUnk));
    // Texts are single-spaced, so decoding reproduces them exactly.
    std::string norm;
    for (const auto& u : split_units(t)) norm += (norm.empty() ? "" : " ") + u;
    CHECK(decode(v, ids) == norm);
  }
}

TEST_CASE("vocabulary json layout") {
  const auto j = small().to_json();
  CHECK(j.at("controls").at("BOS") == 0);
  CHECK(j.at("controls").at("UNK") == 3);
  CHECK(j.at("symbols").size() == 6);
}
