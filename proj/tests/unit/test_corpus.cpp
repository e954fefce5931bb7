#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "dualcog/codec.hpp"
#include "dualcog/corpus.hpp"
#include "dualcog/errors.hpp"

using namespace dualcog;
namespace fs = std::filesystem;

namespace {

std::string golden_text(const DialogueInstance& inst, Perspective p) {
  return serialize_cognition_block(grammar::golden_cognition(inst, p)) + " " +
         serialize_answer_block(inst.golden_response);
}

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "dualcog_corpus_test";
  fs::create_directories(dir);
  return dir / name;
}

void add_words(std::set<std::string>& words, const DialogueInstance& inst) {
  for (Perspective p : {Perspective::kFirstPerson, Perspective::kThirdPerson}) {
    for (const auto& t : template_ids()) {
      for (const auto& u : split_units(render_prompt(inst, t, p))) words.insert(u);
    }
    for (const auto& u : split_units(golden_text(inst, p))) words.insert(u);
  }
}

// Every word any template or trace can emit, found by rendering one instance
// per combination of the grammar's slots.
std::set<std::string> enumerated_lexicon() {
  const auto& names = grammar::names();
  std::set<std::string> words;
  int idx = 0;
  for (int a = 0; a < grammar::kNumArchetypes; ++a) {
    for (int d = 0; d < grammar::kNumOtherIntents; ++d) {
      for (int s = 0; s < grammar::kNumSettings; ++s) {
        for (int variant = 0; variant < 4; ++variant, ++idx) {
          grammar::InstanceChoice c;
          c.world = idx % static_cast<int>(grammar::world_names().size());
          c.character = names[idx % names.size()];
          c.archetype = a;
          c.setting = s;
          c.with_motivation = variant % 2 == 1;
          if (variant >= 2) {
            c.others.emplace_back(names[(idx + 1) % names.size()], (a + 1) % 6);
            c.other_intents.push_back((d + 1) % 6);
          }
          c.others.emplace_back(names[(idx + 2) % names.size()], d);
          c.other_intents.push_back(d);
          add_words(words, grammar::render_instance(c, "e"));
        }
      }
    }
  }
  // Every ordered name pair, so each name shows up as the first map key.
  for (std::size_t i = 0; i < names.size(); ++i) {
    for (std::size_t j = 0; j < names.size(); ++j) {
      if (i == j) continue;
      grammar::InstanceChoice c;
      c.character = names[i];
      c.others.emplace_back(names[j], static_cast<int>(i + j) % 6);
      c.other_intents.push_back(static_cast<int>(i * j) % 6);
      c.archetype = static_cast<int>(i) % grammar::kNumArchetypes;
      add_words(words, grammar::render_instance(c, "e"));
      // Two others, so each name also appears as a later key.
      std::size_t k = 0;
      while (k == i || k == j) ++k;
      grammar::InstanceChoice two;
      two.character = names[k];
      two.others = {{names[i], 1}, {names[j], 2}};
      two.other_intents = {static_cast<int>(j) % 6, static_cast<int>(i) % 6};
      add_words(words, grammar::render_instance(two, "e"));
    }
  }
  return words;
}

}  // namespace

TEST_CASE("generation is deterministic and valid") {
  const auto a = generate_corpus(7, 4, 10);
  const auto b = generate_corpus(7, 4, 10);
  REQUIRE(a.size() == 10);
  CHECK(a == b);
  std::string ja, jb;
  for (const auto& i : a) ja += to_json(i).dump();
  for (const auto& i : b) jb += to_json(i).dump();
  CHECK(ja == jb);
  CHECK_FALSE(generate_corpus(8, 4, 10) == a);
  for (const auto& inst : generate_corpus(11, 8, 200)) CHECK_NOTHROW(inst.validate());
  CHECK_THROWS_AS(generate_corpus(1, 1, 0), PreconditionError);
}

TEST_CASE("vocabulary stays within the grammar lexicon") {
  const std::set<std::string> lexicon = enumerated_lexicon();
  const auto corpus = generate_corpus(7, 8, 200);
  BuildOptions bo;
  bo.seed = 3;
  const BuildResult br = build_datasets(corpus, bo);
  std::vector<std::string> texts;
  for (const auto& p : br.split.d_sft) {
    texts.push_back(p.prompt);
    texts.push_back(serialize_trace(p.target));
  }
  const Vocabulary v = build_vocabulary(texts, default_reserved());
  CHECK(v.size() <= lexicon.size() + kNumControls);
  for (std::size_t i = kNumControls; i < v.size(); ++i) {
    CHECK_MESSAGE(lexicon.count(v.symbol(static_cast<TokenId>(i))) == 1, v.symbol(i));
  }
}

TEST_CASE("instance json round trip") {
  for (const auto& inst : generate_corpus(5, 3, 20)) {
    CHECK(instance_from_json(to_json(inst)) == inst);
  }
}

TEST_CASE("instance invariants are enforced") {
  auto inst = generate_corpus(5, 3, 1)[0];
  auto bad = inst;
  bad.character = "Nobody";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = inst;
  bad.history[0].speaker = "Nobody";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = inst;
  bad.golden_response.segments.clear();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("prompt rendering") {
  const auto inst = generate_corpus(7, 2, 1)[0];
  const std::string suffix = "(reason from a first-person perspective)";
  const std::string first = render_prompt(inst, "cogdual_construct", Perspective::kFirstPerson);
  CHECK(first.find(suffix) != std::string::npos);
  CHECK(render_prompt(inst, "cogdual_construct", Perspective::kThirdPerson).find(suffix) ==
        std::string::npos);
  CHECK(first == render_prompt(inst, "cogdual_construct", Perspective::kFirstPerson));
  for (const auto& t : template_ids()) {
    const std::string s = render_prompt(inst, t, Perspective::kFirstPerson);
    CHECK(s.find(inst.character) != std::string::npos);
    CHECK_FALSE(std::regex_search(s, std::regex(R"(\{[a-z_]+\})")));
  }
  CHECK_THROWS_AS(render_prompt(inst, "nope", Perspective::kFirstPerson), Error);
}

TEST_CASE("perspective draws are balanced") {
  int first = 0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) first += draw_perspective(99, i) == Perspective::kFirstPerson;
  const double f = static_cast<double>(first) / n;
  CHECK(f >= 0.45);
  CHECK(f <= 0.55);
  CHECK(draw_perspective(5, 17) == draw_perspective(5, 17));
}

TEST_CASE("judge rules") {
  const auto corpus = generate_corpus(7, 4, 30);
  for (const auto& inst : corpus) {
    for (Perspective p : {Perspective::kFirstPerson, Perspective::kThirdPerson}) {
      const Trajectory t = parse_trace(golden_text(inst, p));
      REQUIRE(t.parsed());
      CHECK(judge_stub(inst, t).accepted);
    }
  }
  const auto& inst = corpus[0];
  CognitionTrace c = *inst.golden_cognition;

  CognitionTrace zed = c;
  zed.others_behavior["Zed"] = "waves";
  Trajectory t = parse_trace(serialize_cognition_block(zed) + " " +
                             serialize_answer_block(inst.golden_response));
  REQUIRE(t.parsed());
  CHECK(judge_stub(inst, t).reason == "roster");

  CognitionTrace empty = c;
  empty.current_emotions = " ";
  t = parse_trace(serialize_cognition_block(empty) + " " +
                  serialize_answer_block(inst.golden_response));
  CHECK(judge_stub(inst, t).reason == "empty field");

  for (const auto& label : grammar::self_intent_labels()) {
    CognitionTrace flip = c;
    flip.internal_thought =
        grammar::thought_for_intention(label, inst.character, Perspective::kFirstPerson);
    t = parse_trace(serialize_cognition_block(flip) + " " +
                    serialize_answer_block(inst.golden_response));
    const Verdict v = judge_stub(inst, t);
    if (label == inst.labels.self_intention) {
      CHECK(v.accepted);
    } else {
      CHECK(v.reason == "intention mismatch");
    }
  }
  CHECK_THROWS_AS(judge_stub(inst, parse_trace("junk")), StateError);
}

TEST_CASE("every catalogued corruption is caught by one of the two filters") {
  const auto corpus = generate_corpus(13, 4, 12);
  for (const auto& inst : corpus) {
    for (const Corruption& k : corruption_catalog()) {
      const Trajectory t = parse_trace(corrupt_trajectory(inst, *inst.golden_cognition, k));
      const bool caught = !t.parsed() || !judge_stub(inst, t).accepted;
      CHECK_MESSAGE(caught, k.detail);
    }
  }
}

TEST_CASE("bootstrap build on a clean corpus keeps everything") {
  const auto corpus = generate_corpus(2, 3, 50);
  BuildOptions bo;
  bo.seed = 9;
  bo.rl_prompts = 20;
  const BuildResult r = build_datasets(corpus, bo);
  CHECK(r.counts.candidates == 200);
  CHECK(r.counts.after_format == 200);
  CHECK(r.counts.after_judge == 200);
  CHECK(r.split.d_sft.size() == 200);
  CHECK(r.split.d_rl.size() == 20);
  std::set<std::string> ids(r.split.d_rl_ids.begin(), r.split.d_rl_ids.end());
  CHECK(ids.size() == 20);

  const BuildResult again = build_datasets(corpus, bo);
  CHECK(again.split.d_rl == r.split.d_rl);
  bo.seed = 10;
  CHECK(build_datasets(corpus, bo).split.d_rl != r.split.d_rl);
}

TEST_CASE("ten percent corruption is removed exactly") {
  const auto corpus = generate_corpus(4, 4, 60);
  BuildOptions bo;
  bo.seed = 21;
  bo.corruption_rate = 0.1;
  const BuildResult r = build_datasets(corpus, bo);
  const std::size_t n = r.counts.candidates;
  CHECK(n == 240);
  CHECK(r.counts.injected == 24);
  CHECK(r.split.d_sft.size() == n - 24);
  CHECK(r.counts.injected_detected == r.counts.injected);
  CHECK(r.counts.clean_rejected == 0);
  // Survivor counts never grow across stages.
  CHECK(r.counts.after_format <= r.counts.candidates);
  CHECK(r.counts.after_judge <= r.counts.after_format);
  CHECK(r.counts.after_judge == r.split.d_sft.size());
  std::size_t rejected = 0;
  for (const auto& [_, k] : r.counts.reject_reasons) rejected += k;
  CHECK(rejected + r.split.d_sft.size() == n);
}

TEST_CASE("empty survivor set is a stage error with counts") {
  const auto corpus = generate_corpus(4, 2, 3);
  BuildOptions bo;
  bo.sampler = [](const DialogueInstance&, const std::string&, std::uint64_t) {
    return std::string("garbage");
  };
  try {
    build_datasets(corpus, bo);
    FAIL("expected StageError");
  } catch (const StageError& e) {
    CHECK(std::string(e.what()).find("candidates=12") != std::string::npos);
  }
}

TEST_CASE("sampled mode runs the same filters") {
  const auto corpus = generate_corpus(4, 2, 5);
  BuildOptions bo;
  bo.trajs_per_instance = 2;
  bo.sampler = [](const DialogueInstance& inst, const std::string&, std::uint64_t seed) {
    if (seed % 2 == 0) return std::string("broken");
    return golden_text(inst, Perspective::kFirstPerson);
  };
  const BuildResult r = build_datasets(corpus, bo);
  CHECK(r.counts.candidates == 10);
  CHECK(r.split.d_sft.size() == r.counts.after_judge);
  CHECK(r.counts.after_format + r.counts.reject_reasons.at("format: missing <think>") == 10);
}

TEST_CASE("jsonl round trip and errors") {
  const auto corpus = generate_corpus(6, 4, 100);
  const fs::path p = temp_file("inst.jsonl");
  write_instances(p, corpus);
  CHECK(read_instances(p) == corpus);

  const fs::path bad = temp_file("bad.jsonl");
  {
    std::ofstream out(bad);
    out << "{\"a\": 1}\n{\"b\": 2}\n{\"c\": \n{\"d\": 4}\n";
  }
  try {
    read_jsonl(bad);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }

  const fs::path empty = temp_file("empty.jsonl");
  { std::ofstream out(empty); }
  CHECK(read_jsonl(empty).empty());
  CHECK_THROWS_AS(read_jsonl(temp_file("missing.jsonl")), IoError);
}

TEST_CASE("reply helpers agree with the golden reply") {
  for (const auto& inst : generate_corpus(8, 4, 40)) {
    CHECK(grammar::reply_for(inst, inst.labels.self_intention, inst.labels.self_emotion) ==
          inst.golden_response);
    const auto lex = grammar::reply_lexicon(inst.labels.self_intention, inst.labels.self_emotion);
    CHECK(lex.count(".") == 0);
    CHECK_FALSE(lex.empty());
  }
}
