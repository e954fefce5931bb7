#include "dualcog/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "dualcog/errors.hpp"
#include "dualcog/rng.hpp"

namespace dualcog {
namespace {

using nlohmann::json;

struct OtherIntent {
  const char* label;
  const char* behavior;    // visible action, also the behavior-map entry
  const char* line;        // what they say in the history
  const char* emotion;     // emotion perceived by others
  const char* intention;   // intention perceived by others
};

constexpr std::array<OtherIntent, grammar::kNumOtherIntents> kOtherIntents = {{
    {"flee", "glances at the door", "I must go now .", "fearful", "wants to escape"},
    {"threaten", "draws a knife", "Do not move .", "angry", "means to harm us"},
    {"plead", "kneels on the floor", "Please help me .", "desperate", "needs our help"},
    {"lie", "looks away quickly", "I was never here .", "nervous", "hides the truth"},
    {"confess", "lowers the head", "It was my fault .", "ashamed", "seeks forgiveness"},
    {"challenge", "steps forward boldly", "Prove your worth .", "proud", "tests our resolve"},
}};

struct SelfIntent {
  const char* label;
  const char* perceived;  // "{o}" is replaced by the last speaker's name
  const char* thought;    // modal phrase, prefixed by "I" or the name
  const char* action;
  const char* speech;
};

constexpr std::array<SelfIntent, grammar::kNumSelfIntents> kSelfIntents = {{
    {"protect", "to protect everyone here", "must stand guard", "steps in front",
     "Stay behind me {o} ."},
    {"confront", "to confront {o}", "will face this now", "blocks the way",
     "Explain yourself {o} ."},
    {"comfort", "to comfort {o}", "should offer kindness", "offers a hand",
     "You are safe now {o} ."},
    {"question", "to question {o}", "must learn the truth", "crosses both arms",
     "Where were you {o} ?"},
    {"help", "to help {o}", "can ease this pain", "kneels beside {o}",
     "Let me help you {o} ."},
    {"dismiss", "to send {o} away", "will not waste time", "turns away",
     "Leave us now {o} ."},
}};

struct SelfEmotion {
  const char* label;
  const char* aside;  // bracketed thought in the reply
};

constexpr std::array<SelfEmotion, grammar::kNumSelfEmotions> kSelfEmotions = {{
    {"worried", "this is bad"},
    {"angry", "how dare they"},
    {"calm", "stay steady"},
    {"suspicious", "something is off"},
    {"tender", "poor soul"},
    {"weary", "not again"},
}};

struct Archetype {
  const char* label;
  const char* profile;
  const char* memory;
};

constexpr std::array<Archetype, grammar::kNumArchetypes> kArchetypes = {{
    {"guard", "a loyal guard", "the oath at the gate"},
    {"thief", "a quick thief", "the night in the cells"},
    {"scholar", "a quiet scholar", "the burned library"},
    {"healer", "a gentle healer", "the winter fever"},
    {"merchant", "a shrewd merchant", "the lost cargo"},
    {"captain", "a stern captain", "the wreck at sea"},
}};

struct Setting {
  const char* label;
  const char* scene;
  const char* perception;
};

constexpr std::array<Setting, grammar::kNumSettings> kSettings = {{
    {"hall", "the great hall at night", "the hall is dark and cold"},
    {"harbor", "the harbor in heavy rain", "the rain hides every sound"},
    {"forest", "a forest path at dusk", "the path grows dark"},
    {"market", "a crowded market at noon", "the crowd presses close"},
    {"library", "a dusty library after closing", "the room is silent"},
    {"tavern", "a loud tavern by the road", "the noise covers every word"},
}};

// Reply tables indexed [archetype][other intent of the last speaker].
// Other intents: flee, threaten, plead, lie, confess, challenge.
enum SelfIntentId { kProtect, kConfront, kComfort, kQuestion, kHelp, kDismiss };
constexpr int kIntentTable[grammar::kNumArchetypes][grammar::kNumOtherIntents] = {
    {kQuestion, kProtect, kHelp, kConfront, kComfort, kConfront},    // guard
    {kHelp, kDismiss, kHelp, kQuestion, kComfort, kConfront},        // thief
    {kQuestion, kProtect, kComfort, kQuestion, kComfort, kDismiss},  // scholar
    {kComfort, kProtect, kHelp, kQuestion, kComfort, kDismiss},      // healer
    {kDismiss, kProtect, kDismiss, kConfront, kQuestion, kConfront}, // merchant
    {kConfront, kConfront, kHelp, kQuestion, kDismiss, kProtect},    // captain
};

enum SelfEmotionId { kWorried, kAngry, kCalm, kSuspicious, kTender, kWeary };
constexpr int kEmotionTable[grammar::kNumArchetypes][grammar::kNumOtherIntents] = {
    {kSuspicious, kAngry, kWorried, kSuspicious, kCalm, kAngry},
    {kWorried, kAngry, kTender, kSuspicious, kCalm, kWeary},
    {kSuspicious, kWorried, kTender, kSuspicious, kCalm, kWeary},
    {kWorried, kWorried, kTender, kSuspicious, kTender, kCalm},
    {kWeary, kWorried, kWeary, kAngry, kSuspicious, kAngry},
    {kAngry, kAngry, kTender, kSuspicious, kWeary, kCalm},
};

std::string fill_other(std::string text, const std::string& other) {
  const std::string key = "{o}";
  for (std::size_t p = text.find(key); p != std::string::npos; p = text.find(key, p)) {
    text.replace(p, key.size(), other);
    p += other.size();
  }
  return text;
}

template <typename Table>
int index_of(const Table& table, const std::string& label) {
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (label == table[i].label) return static_cast<int>(i);
  }
  throw ConfigError("unknown grammar label '" + label + "'");
}

template <typename Table>
std::vector<std::string> labels_of(const Table& table) {
  std::vector<std::string> out;
  for (const auto& e : table) out.emplace_back(e.label);
  return out;
}

const std::string& last_speaker(const DialogueInstance& inst) {
  if (inst.history.empty()) throw ConfigError("instance has no history");
  return inst.history.back().speaker;
}

std::string others_profile_str(const DialogueInstance& inst) {
  std::string out;
  for (const RosterEntry& r : inst.roster) {
    if (r.name == inst.character) continue;
    if (!out.empty()) out += " ; ";
    out += r.name + " " + r.profile;
  }
  return out;
}

std::string history_str(const DialogueInstance& inst) {
  std::string out;
  for (const HistoryTurn& t : inst.history) {
    if (!out.empty()) out.push_back(' ');
    out += t.speaker + " : " + t.script.text();
  }
  return out;
}

// ---- prompt templates ------------------------------------------------------
// `{slot}` is substituted; `{{` and `}}` are literal braces.

constexpr const char* kCogdualConstruct =
    "You are an expert in cognitive psychology. Write the dual cognition that "
    "{character} goes through before the next reply: first situational "
    "awareness (the environment, then the behavior, emotions and intentions "
    "of the others present), then self awareness (activated memories, own "
    "emotions, own intentions, inner strategy). Ground every field in the "
    "profile, the scene and the dialogue so far.\n"
    "## Input\n"
    "=== Character Played ===\n{character}\n"
    "=== {character}'s Profile ===\n{character_profile}\n"
    "=== Other Characters in the Scene ===\n{other_characters_profile}\n"
    "=== Current Scene Description ===\n{current_scenario}\n"
    "=== {character}'s Psychological or Motivational State in the Scene ===\n"
    "{thought}\n"
    "=== Historical Dialogue in the Current Situation ===\n{history_str}\n"
    "=== {character}'s Next [thought],(action),speech ===\n"
    "{assistant_content}\n"
    "## Output Format{use_first_person}\n"
    "<think>\n"
    "{{\"situational_awareness\": {{\"environmental_perception\": \"...\", "
    "\"others_perception\": {{\"behavior\": {{\"character1\": \"...\"}}, "
    "\"emotion\": {{\"character1\": \"...\"}}, \"intentions\": "
    "{{\"character1\": \"...\"}}}}}}, \"self_awareness\": {{\"key_memory\": "
    "[\"...\"], \"current_emotions\": \"...\", \"perceived_intentions\": "
    "\"...\", \"internal_thought\": \"...\"}}}}\n"
    "</think>\n"
    "<answer>\n{assistant_content}\n</answer>";

constexpr const char* kCotBaseline =
    "You are {character} from {book_name}.\n"
    "==={character}'s Profile===\n{character_profile}\n"
    "===Current Scenario===\n{current_scenario}\n"
    "{other_characters_profile}\n{motivation}\n"
    "===Requirements===\n"
    "Think first inside <think></think>. Then reply with thought, speech and "
    "action: [thought] stays hidden from others, (action) is visible.\n"
    "===Dialogue So Far===\n{history_str}\n"
    "===Your Output===";

constexpr const char* kCbCot =
    "You are {character} from {book_name}.\n"
    "==={character}'s Profile===\n{character_profile}\n"
    "===Current Scenario===\n{current_scenario}\n"
    "{other_characters_profile}\n{motivation}\n"
    "===Requirements===\n"
    "Before replying, write your cognitive analysis inside <think> tags using "
    "this structure, then reply with [thought], (action) and speech.\n"
    "<think>\n"
    "{{\"situational_awareness\": {{\"environmental_perception\": \"...\", "
    "\"others_perception\": {{\"behavior\": {{\"character1\": \"...\"}}, "
    "\"emotion\": {{\"character1\": \"...\"}}, \"intentions\": "
    "{{\"character1\": \"...\"}}}}}}, \"self_awareness\": {{\"key_memory\": "
    "[\"...\"], \"current_emotions\": \"...\", \"perceived_intentions\": "
    "\"...\", \"internal_thought\": \"...\"}}}}\n"
    "</think>\n"
    "===Dialogue So Far===\n{history_str}\n"
    "===Your Output===";

// Compact prompt consumed by the trained policy.
constexpr const char* kRoleplayInfer =
    "character {character} profile {character_profile} scene {current_scenario} "
    "others {other_characters_profile} history {history_str}{motivation} respond";

const std::map<std::string, const char*>& template_registry() {
  static const std::map<std::string, const char*> kRegistry = {
      {"cogdual_construct", kCogdualConstruct},
      {"cot_baseline", kCotBaseline},
      {"cb_cot", kCbCot},
      {"roleplay_infer", kRoleplayInfer},
  };
  return kRegistry;
}

std::string fill_template(const std::string& id, const char* tmpl,
                          const std::map<std::string, std::string>& slots,
                          const std::set<std::string>& optional) {
  std::string out;
  const std::string_view t(tmpl);
  for (std::size_t i = 0; i < t.size();) {
    if (t.compare(i, 2, "{{") == 0) {
      out.push_back('{');
      i += 2;
    } else if (t.compare(i, 2, "}}") == 0) {
      out.push_back('}');
      i += 2;
    } else if (t[i] == '{') {
      const std::size_t end = t.find('}', i);
      const std::string name(t.substr(i + 1, end - i - 1));
      auto it = slots.find(name);
      if (it == slots.end()) {
        throw ConfigError("template " + id + ": unknown slot {" + name + "}");
      }
      if (it->second.empty() && !optional.contains(name)) {
        throw ConfigError("template " + id + ": missing slot value {" + name + "}");
      }
      out += it->second;
      i = end + 1;
    } else {
      out.push_back(t[i++]);
    }
  }
  return out;
}

// ---- json helpers ----------------------------------------------------------

json cognition_to_json(const CognitionTrace& c) { return json::parse(cognition_json(c)); }

CognitionTrace cognition_from(const json& j) {
  Trajectory t = parse_trace("<think>" + j.dump() + "</think><answer>x</answer>");
  if (!t.parsed()) throw ConfigError("invalid golden_cognition: " + *t.format_error);
  return *t.cognition;
}

ResponseScript script_from(const std::string& text) {
  ResponseParse p = parse_response_script(text);
  if (!p.script) throw ConfigError("invalid response text: " + p.error);
  return *p.script;
}

bool blank(const std::string& s) {
  return s.find_first_not_of(" \t\n\r") == std::string::npos;
}

}  // namespace

// ---- DialogueInstance ------------------------------------------------------

std::vector<std::string> DialogueInstance::roster_names() const {
  std::vector<std::string> out;
  for (const RosterEntry& r : roster) out.push_back(r.name);
  return out;
}

void DialogueInstance::validate() const {
  const auto names = roster_names();
  auto in_roster = [&](const std::string& n) {
    return std::find(names.begin(), names.end(), n) != names.end();
  };
  if (!in_roster(character)) {
    throw ConfigError(instance_id + ": character not in roster");
  }
  for (const HistoryTurn& t : history) {
    if (!in_roster(t.speaker)) {
      throw ConfigError(instance_id + ": history speaker " + t.speaker +
                        " not in roster");
    }
  }
  if (golden_response.segments.empty()) {
    throw ConfigError(instance_id + ": empty golden response");
  }
}

json to_json(const DialogueInstance& inst) {
  json roster = json::array();
  for (const RosterEntry& r : inst.roster) {
    roster.push_back({{"name", r.name}, {"profile", r.profile}});
  }
  json history = json::array();
  for (const HistoryTurn& t : inst.history) {
    history.push_back({{"speaker", t.speaker}, {"text", t.script.text()}});
  }
  json labels = {{"setting", inst.labels.setting},
                 {"archetype", inst.labels.archetype},
                 {"self_emotion", inst.labels.self_emotion},
                 {"self_intention", inst.labels.self_intention},
                 {"other_intentions", inst.labels.other_intentions}};
  return {
      {"instance_id", inst.instance_id},
      {"world", inst.world},
      {"character", inst.character},
      {"profile", inst.profile},
      {"scene", inst.scene},
      {"roster", roster},
      {"history", history},
      {"motivation", inst.motivation ? json(*inst.motivation) : json(nullptr)},
      {"golden_response", inst.golden_response.text()},
      {"golden_cognition", inst.golden_cognition
                               ? cognition_to_json(*inst.golden_cognition)
                               : json(nullptr)},
      {"labels", labels},
  };
}

DialogueInstance instance_from_json(const json& j) {
  DialogueInstance inst;
  try {
    inst.instance_id = j.at("instance_id").get<std::string>();
    inst.world = j.value("world", std::string());
    inst.character = j.at("character").get<std::string>();
    inst.profile = j.at("profile").get<std::string>();
    inst.scene = j.at("scene").get<std::string>();
    for (const json& r : j.at("roster")) {
      inst.roster.push_back({r.at("name").get<std::string>(),
                             r.at("profile").get<std::string>()});
    }
    for (const json& h : j.at("history")) {
      inst.history.push_back({h.at("speaker").get<std::string>(),
                              script_from(h.at("text").get<std::string>())});
    }
    if (j.contains("motivation") && !j.at("motivation").is_null()) {
      inst.motivation = j.at("motivation").get<std::string>();
    }
    inst.golden_response = script_from(j.at("golden_response").get<std::string>());
    if (j.contains("golden_cognition") && !j.at("golden_cognition").is_null()) {
      inst.golden_cognition = cognition_from(j.at("golden_cognition"));
    }
    if (j.contains("labels")) {
      const json& l = j.at("labels");
      inst.labels.setting = l.value("setting", std::string());
      inst.labels.archetype = l.value("archetype", std::string());
      inst.labels.self_emotion = l.value("self_emotion", std::string());
      inst.labels.self_intention = l.value("self_intention", std::string());
      if (l.contains("other_intentions")) {
        inst.labels.other_intentions =
            l.at("other_intentions").get<std::map<std::string, std::string>>();
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed instance record: ") + e.what());
  }
  return inst;
}

// ---- grammar ---------------------------------------------------------------

namespace grammar {

const std::vector<std::string>& names() {
  static const std::vector<std::string> kNames = {
      "Bran", "Mira", "Tomas", "Elise", "Kael", "Nora",
      "Ivo",  "Lena", "Oren",  "Sela",  "Dane", "Ruth"};
  return kNames;
}

const std::vector<std::string>& world_names() {
  static const std::vector<std::string> kWorlds = {
      "Ashford",   "Brightwater", "Coldmere", "Duskvale",
      "Emberfall", "Frostholm",   "Greywood", "Highmoor"};
  return kWorlds;
}

const std::vector<std::string>& archetype_labels() {
  static const auto v = labels_of(kArchetypes);
  return v;
}
const std::vector<std::string>& setting_labels() {
  static const auto v = labels_of(kSettings);
  return v;
}
const std::vector<std::string>& other_intent_labels() {
  static const auto v = labels_of(kOtherIntents);
  return v;
}
const std::vector<std::string>& self_intent_labels() {
  static const auto v = labels_of(kSelfIntents);
  return v;
}
const std::vector<std::string>& self_emotion_labels() {
  static const auto v = labels_of(kSelfEmotions);
  return v;
}

DialogueInstance render_instance(const InstanceChoice& choice, std::string id) {
  if (choice.others.empty() || choice.others.size() != choice.other_intents.size()) {
    throw ConfigError("instance choice needs at least one other character");
  }
  const Archetype& self = kArchetypes.at(choice.archetype);
  const Setting& setting = kSettings.at(choice.setting);
  const auto& [last_name, last_arch] = choice.others.back();
  (void)last_arch;
  const int driver = choice.other_intents.back();
  const SelfIntent& intent = kSelfIntents[kIntentTable[choice.archetype][driver]];
  const SelfEmotion& emotion = kSelfEmotions[kEmotionTable[choice.archetype][driver]];

  DialogueInstance inst;
  inst.instance_id = std::move(id);
  inst.world = world_names().at(choice.world % world_names().size());
  inst.character = choice.character;
  inst.profile = self.profile;
  inst.scene = setting.scene;
  inst.roster.push_back({choice.character, self.profile});
  for (std::size_t i = 0; i < choice.others.size(); ++i) {
    const auto& [name, arch] = choice.others[i];
    inst.roster.push_back({name, kArchetypes.at(arch).profile});
    const OtherIntent& oi = kOtherIntents.at(choice.other_intents[i]);
    HistoryTurn turn;
    turn.speaker = name;
    turn.script.segments = {{SegmentKind::kAction, oi.behavior},
                            {SegmentKind::kSpeech, oi.line}};
    inst.history.push_back(std::move(turn));
    inst.labels.other_intentions[name] = oi.label;
  }
  if (choice.with_motivation) inst.motivation = fill_other(intent.perceived, last_name);
  inst.golden_response.segments = {
      {SegmentKind::kThought, emotion.aside},
      {SegmentKind::kAction, fill_other(intent.action, last_name)},
      {SegmentKind::kSpeech, fill_other(intent.speech, last_name)}};
  inst.labels.setting = setting.label;
  inst.labels.archetype = self.label;
  inst.labels.self_emotion = emotion.label;
  inst.labels.self_intention = intent.label;
  inst.golden_cognition = golden_cognition(inst, Perspective::kFirstPerson);
  return inst;
}

CognitionTrace golden_cognition(const DialogueInstance& inst, Perspective p) {
  const Setting& setting = kSettings[index_of(kSettings, inst.labels.setting)];
  const Archetype& self = kArchetypes[index_of(kArchetypes, inst.labels.archetype)];
  const SelfIntent& intent =
      kSelfIntents[index_of(kSelfIntents, inst.labels.self_intention)];
  const std::string& other = last_speaker(inst);
  const std::string subject = p == Perspective::kFirstPerson ? "I" : inst.character;
  const std::string feel = p == Perspective::kFirstPerson ? " feel " : " feels ";

  CognitionTrace c;
  c.environmental_perception = setting.perception;
  for (const auto& [name, label] : inst.labels.other_intentions) {
    const OtherIntent& oi = kOtherIntents[index_of(kOtherIntents, label)];
    c.others_behavior[name] = oi.behavior;
    c.others_emotion[name] = oi.emotion;
    c.others_intentions[name] = oi.intention;
  }
  c.key_memory = {self.memory};
  c.current_emotions = subject + feel + inst.labels.self_emotion;
  c.perceived_intentions = fill_other(intent.perceived, other);
  c.internal_thought = subject + " " + intent.thought;
  return c;
}

ResponseScript reply_for(const DialogueInstance& inst, const std::string& intention,
                         const std::string& emotion) {
  const SelfIntent& si = kSelfIntents[index_of(kSelfIntents, intention)];
  const SelfEmotion& se = kSelfEmotions[index_of(kSelfEmotions, emotion)];
  const std::string& other = last_speaker(inst);
  ResponseScript r;
  r.segments = {{SegmentKind::kThought, se.aside},
                {SegmentKind::kAction, fill_other(si.action, other)},
                {SegmentKind::kSpeech, fill_other(si.speech, other)}};
  return r;
}

std::set<std::string> reply_lexicon(const std::string& intention, const std::string& emotion) {
  const SelfIntent& si = kSelfIntents[index_of(kSelfIntents, intention)];
  const SelfEmotion& se = kSelfEmotions[index_of(kSelfEmotions, emotion)];
  std::set<std::string> words;
  for (const char* phrase : {se.aside, si.action, si.speech}) {
    std::istringstream in(phrase);
    for (std::string w; in >> w;) {
      if (w == "{o}" || w == "." || w == "?" || w == "!") continue;
      std::transform(w.begin(), w.end(), w.begin(), [](unsigned char ch) { return std::tolower(ch); });
      words.insert(w);
    }
  }
  return words;
}

std::optional<std::string> intention_from_thought(const std::string& thought,
                                                  const std::string& character) {
  for (const SelfIntent& si : kSelfIntents) {
    if (thought == std::string("I ") + si.thought ||
        thought == character + " " + si.thought) {
      return si.label;
    }
  }
  return std::nullopt;
}

std::string thought_for_intention(const std::string& label,
                                  const std::string& character, Perspective p) {
  const SelfIntent& si = kSelfIntents[index_of(kSelfIntents, label)];
  return (p == Perspective::kFirstPerson ? std::string("I") : character) + " " +
         si.thought;
}

}  // namespace grammar

std::vector<DialogueInstance> generate_corpus(std::uint64_t seed, int n_worlds,
                                              int n_instances) {
  if (n_instances < 1) throw PreconditionError("generate_corpus: n_instances < 1");
  if (n_worlds < 1) throw PreconditionError("generate_corpus: n_worlds < 1");
  Rng rng(derive_seed(seed, {0x636f72707573ULL}));

  // Each world fixes a cast of five characters and three settings.
  struct World {
    std::vector<std::pair<std::string, int>> cast;
    std::vector<int> settings;
  };
  std::vector<World> worlds(n_worlds);
  for (World& w : worlds) {
    std::vector<std::string> pool = grammar::names();
    rng.shuffle(pool.begin(), pool.end());
    for (int i = 0; i < 5; ++i) {
      w.cast.emplace_back(pool[i], static_cast<int>(rng.below(grammar::kNumArchetypes)));
    }
    std::vector<int> settings(grammar::kNumSettings);
    for (int i = 0; i < grammar::kNumSettings; ++i) settings[i] = i;
    rng.shuffle(settings.begin(), settings.end());
    w.settings.assign(settings.begin(), settings.begin() + 3);
  }

  std::vector<DialogueInstance> out;
  out.reserve(n_instances);
  for (int i = 0; i < n_instances; ++i) {
    grammar::InstanceChoice choice;
    choice.world = static_cast<int>(rng.below(worlds.size()));
    const World& w = worlds[choice.world];
    std::vector<int> order = {0, 1, 2, 3, 4};
    rng.shuffle(order.begin(), order.end());
    choice.character = w.cast[order[0]].first;
    choice.archetype = w.cast[order[0]].second;
    const int n_others = 1 + static_cast<int>(rng.below(2));
    for (int k = 0; k < n_others; ++k) {
      choice.others.push_back(w.cast[order[1 + k]]);
      choice.other_intents.push_back(
          static_cast<int>(rng.below(grammar::kNumOtherIntents)));
    }
    choice.setting = w.settings[rng.below(w.settings.size())];
    choice.with_motivation = rng.bernoulli(0.5);
    char id[16];
    std::snprintf(id, sizeof(id), "i%06d", i);
    out.push_back(grammar::render_instance(choice, id));
  }
  return out;
}

// ---- prompts ---------------------------------------------------------------

const std::vector<std::string>& template_ids() {
  static const std::vector<std::string> kIds = {"cogdual_construct", "cot_baseline",
                                                "cb_cot", "roleplay_infer"};
  return kIds;
}

std::string render_prompt(const DialogueInstance& inst, const std::string& template_id,
                          Perspective perspective) {
  auto it = template_registry().find(template_id);
  if (it == template_registry().end()) {
    throw ConfigError("unknown template id '" + template_id + "'");
  }
  std::map<std::string, std::string> slots = {
      {"character", inst.character},
      {"character_profile", inst.profile},
      {"current_scenario", inst.scene},
      {"other_characters_profile", others_profile_str(inst)},
      {"history_str", history_str(inst)},
      {"book_name", inst.world},
      {"assistant_content", inst.golden_response.text()},
      {"thought", inst.motivation.value_or("")},
      {"use_first_person", perspective == Perspective::kFirstPerson
                               ? " (reason from a first-person perspective)"
                               : " (reason from a third-person perspective)"},
  };
  if (template_id == "roleplay_infer") {
    slots["motivation"] = inst.motivation ? " goal " + *inst.motivation : "";
  } else {
    slots["motivation"] = inst.motivation.value_or("");
  }
  return fill_template(template_id, it->second, slots, {"thought", "motivation"});
}

Perspective draw_perspective(std::uint64_t seed, std::uint64_t index) {
  Rng rng(derive_seed(seed, {0x7065727370ULL, index}));
  return rng.bernoulli(0.5) ? Perspective::kFirstPerson : Perspective::kThirdPerson;
}

// ---- judge -----------------------------------------------------------------

Verdict judge_stub(const DialogueInstance& inst, const Trajectory& traj) {
  if (!traj.parsed() || !traj.cognition) {
    throw StateError("judge_stub: trajectory is not parsed");
  }
  const CognitionTrace& c = *traj.cognition;
  std::vector<const std::string*> texts = {&c.environmental_perception,
                                           &c.current_emotions,
                                           &c.perceived_intentions,
                                           &c.internal_thought};
  for (const auto* m : {&c.others_behavior, &c.others_emotion, &c.others_intentions}) {
    for (const auto& [_, v] : *m) texts.push_back(&v);
  }
  for (const std::string& k : c.key_memory) texts.push_back(&k);
  for (const std::string* t : texts) {
    if (blank(*t)) return {false, "empty field"};
  }

  const auto names = inst.roster_names();
  for (const auto* m : {&c.others_behavior, &c.others_emotion, &c.others_intentions}) {
    for (const auto& [name, _] : *m) {
      if (std::find(names.begin(), names.end(), name) == names.end()) {
        return {false, "roster"};
      }
    }
  }

  if (!inst.labels.self_intention.empty()) {
    auto label = grammar::intention_from_thought(c.internal_thought, inst.character);
    if (!label || *label != inst.labels.self_intention) {
      return {false, "intention mismatch"};
    }
  }
  return {true, ""};
}

// ---- corruption harness ----------------------------------------------------

std::vector<Corruption> corruption_catalog() {
  std::vector<Corruption> out;
  for (const std::string& path : required_field_paths()) {
    out.push_back({CorruptionKind::kDropField, path});
  }
  for (const char* tag : {"<think>", "</think>", "<answer>", "</answer>"}) {
    out.push_back({CorruptionKind::kDropTag, tag});
  }
  out.push_back({CorruptionKind::kBreakJson, "truncate"});
  for (const char* f : {"environmental_perception", "behavior", "emotion",
                        "intentions", "key_memory", "current_emotions",
                        "perceived_intentions", "internal_thought"}) {
    out.push_back({CorruptionKind::kEmptyText, f});
  }
  out.push_back({CorruptionKind::kForeignName, "Zed"});
  for (int shift = 1; shift < grammar::kNumSelfIntents; ++shift) {
    out.push_back({CorruptionKind::kFlipIntention, std::to_string(shift)});
  }
  return out;
}

std::string corrupt_trajectory(const DialogueInstance& inst,
                               const CognitionTrace& cognition,
                               const Corruption& corruption) {
  CognitionTrace c = cognition;
  const std::string answer = serialize_answer_block(inst.golden_response);
  switch (corruption.kind) {
    case CorruptionKind::kDropField: {
      nlohmann::ordered_json body = nlohmann::ordered_json::parse(cognition_json(c));
      // Walk to the parent of the final path component and erase it.
      std::vector<std::string> parts;
      std::stringstream ss(corruption.detail);
      for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
      nlohmann::ordered_json* node = &body;
      for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
      node->erase(parts.back());
      return "<think> " + body.dump() + " </think> " + answer;
    }
    case CorruptionKind::kDropTag: {
      std::string raw = serialize_cognition_block(c) + " " + answer;
      const std::size_t p = raw.find(corruption.detail);
      raw.erase(p, corruption.detail.size());
      return raw;
    }
    case CorruptionKind::kBreakJson: {
      std::string body = cognition_json(c);
      body.resize(body.size() - 10);
      return "<think> " + body + " </think> " + answer;
    }
    case CorruptionKind::kEmptyText: {
      const std::string& f = corruption.detail;
      auto blank_map = [](std::map<std::string, std::string>& m) {
        if (!m.empty()) m.begin()->second.clear();
      };
      if (f == "environmental_perception") c.environmental_perception.clear();
      if (f == "behavior") blank_map(c.others_behavior);
      if (f == "emotion") blank_map(c.others_emotion);
      if (f == "intentions") blank_map(c.others_intentions);
      if (f == "key_memory") c.key_memory.assign(1, "");
      if (f == "current_emotions") c.current_emotions.clear();
      if (f == "perceived_intentions") c.perceived_intentions.clear();
      if (f == "internal_thought") c.internal_thought.clear();
      return serialize_cognition_block(c) + " " + answer;
    }
    case CorruptionKind::kForeignName: {
      c.others_behavior[corruption.detail] = "watches from the shadows";
      return serialize_cognition_block(c) + " " + answer;
    }
    case CorruptionKind::kFlipIntention: {
      const auto& labels = grammar::self_intent_labels();
      const auto pos = std::find(labels.begin(), labels.end(),
                                 inst.labels.self_intention) - labels.begin();
      const int shift = std::stoi(corruption.detail);
      const std::string& flipped = labels[(pos + shift) % labels.size()];
      const bool first = c.internal_thought.rfind("I ", 0) == 0;
      c.internal_thought = grammar::thought_for_intention(
          flipped, inst.character,
          first ? Perspective::kFirstPerson : Perspective::kThirdPerson);
      return serialize_cognition_block(c) + " " + answer;
    }
  }
  throw ConfigError("unknown corruption kind");
}

// ---- dataset construction --------------------------------------------------

BuildResult build_datasets(std::span<const DialogueInstance> corpus,
                           const BuildOptions& options) {
  if (options.trajs_per_instance < 1) {
    throw PreconditionError("build_datasets: trajs_per_instance < 1");
  }
  if (options.corruption_rate < 0.0 || options.corruption_rate > 1.0) {
    throw ConfigError("build_datasets: corruption_rate outside [0, 1]");
  }
  if (options.sampler && options.corruption_rate > 0.0) {
    throw ConfigError("build_datasets: corruption injection needs bootstrap mode");
  }
  {
    std::set<std::string> ids;
    for (const DialogueInstance& inst : corpus) {
      if (!ids.insert(inst.instance_id).second) {
        throw ConfigError("duplicate instance_id " + inst.instance_id);
      }
    }
  }

  BuildResult result;
  StageCounts& counts = result.counts;
  result.split.d_cog.assign(corpus.begin(), corpus.end());

  const std::size_t per = static_cast<std::size_t>(options.trajs_per_instance);
  const std::size_t n_candidates = corpus.size() * per;
  counts.candidates = n_candidates;

  // Deterministic choice of which candidates receive a corruption.
  std::vector<int> corruption_of(n_candidates, -1);
  const auto catalog = corruption_catalog();
  const auto n_corrupt = static_cast<std::size_t>(
      std::floor(options.corruption_rate * static_cast<double>(n_candidates) + 0.5));
  if (n_corrupt > 0) {
    std::vector<std::size_t> order(n_candidates);
    for (std::size_t i = 0; i < n_candidates; ++i) order[i] = i;
    Rng rng(derive_seed(options.seed, {0x636f7272ULL}));
    rng.shuffle(order.begin(), order.end());
    for (std::size_t k = 0; k < n_corrupt; ++k) {
      corruption_of[order[k]] = static_cast<int>(k % catalog.size());
    }
  }
  counts.injected = n_corrupt;

  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const DialogueInstance& inst = corpus[i];
    const std::string prompt =
        render_prompt(inst, "roleplay_infer", Perspective::kFirstPerson);
    for (std::size_t k = 0; k < per; ++k) {
      const std::size_t cand = i * per + k;
      std::string raw;
      if (options.sampler) {
        raw = options.sampler(inst, prompt, derive_seed(options.seed, {i, k}));
      } else {
        const Perspective p = draw_perspective(options.seed, cand);
        const CognitionTrace c = grammar::golden_cognition(inst, p);
        if (corruption_of[cand] >= 0) {
          raw = corrupt_trajectory(inst, c, catalog[corruption_of[cand]]);
        } else {
          raw = serialize_cognition_block(c) + " " +
                serialize_answer_block(inst.golden_response);
        }
      }
      const bool injected = corruption_of[cand] >= 0;
      Trajectory traj = parse_trace(raw);
      std::string reason;
      if (options.apply_format_filter && !traj.parsed()) {
        reason = "format: " + *traj.format_error;
      } else {
        ++counts.after_format;
        if (options.apply_judge && traj.parsed()) {
          Verdict v = judge_stub(inst, traj);
          if (!v.accepted) reason = "judge: " + v.reason;
        }
        if (reason.empty()) ++counts.after_judge;
      }
      if (!reason.empty()) {
        ++counts.reject_reasons[reason];
        if (injected) {
          ++counts.injected_detected;
        } else {
          ++counts.clean_rejected;
        }
        continue;
      }
      result.split.d_sft.push_back({inst.instance_id, prompt, std::move(traj)});
    }
  }

  if (result.split.d_sft.empty()) {
    throw StageError("dataset",
                     "no trajectories survived (candidates=" +
                         std::to_string(counts.candidates) +
                         ", after_format=" + std::to_string(counts.after_format) +
                         ", after_judge=" + std::to_string(counts.after_judge) + ")");
  }

  if (options.rl_prompts > corpus.size()) {
    throw ConfigError("build_datasets: more RL prompts requested than instances");
  }
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(options.seed, {0x726cULL}));
  rng.shuffle(order.begin(), order.end());
  for (std::size_t k = 0; k < options.rl_prompts; ++k) {
    const DialogueInstance& inst = corpus[order[k]];
    result.split.d_rl.push_back(
        render_prompt(inst, "roleplay_infer", Perspective::kFirstPerson));
    result.split.d_rl_ids.push_back(inst.instance_id);
  }
  return result;
}

// ---- JSONL -----------------------------------------------------------------

void write_jsonl(const std::filesystem::path& path, std::span<const json> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const json& r : records) out << r.dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (blank(line)) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw IoError(path.string() + ": malformed record at line " +
                    std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

void write_instances(const std::filesystem::path& path,
                     std::span<const DialogueInstance> instances) {
  std::vector<json> records;
  for (const DialogueInstance& inst : instances) records.push_back(to_json(inst));
  write_jsonl(path, records);
}

std::vector<DialogueInstance> read_instances(const std::filesystem::path& path) {
  std::vector<DialogueInstance> out;
  for (const json& j : read_jsonl(path)) out.push_back(instance_from_json(j));
  return out;
}

void write_sft_pairs(const std::filesystem::path& path, std::span<const SftPair> pairs) {
  std::vector<json> records;
  for (const SftPair& p : pairs) {
    records.push_back({{"prompt", p.prompt}, {"target", serialize_trace(p.target)}});
  }
  write_jsonl(path, records);
}

}  // namespace dualcog
