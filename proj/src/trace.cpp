#include "dualcog/trace.hpp"

#include <json.hpp>

#include "dualcog/errors.hpp"

namespace dualcog {
namespace {

using nlohmann::json;

constexpr std::string_view kThinkOpen = "<think>";
constexpr std::string_view kThinkClose = "</think>";
constexpr std::string_view kAliasOpen = "<coginitive>";
constexpr std::string_view kAliasClose = "</coginitive>";
constexpr std::string_view kAnswerOpen = "<answer>";
constexpr std::string_view kAnswerClose = "</answer>";

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

// Collapses internal whitespace runs to single spaces.
std::string normalize_space(std::string_view s) {
  std::string out;
  bool pending = false;
  for (char c : trim(s)) {
    if (is_space(c)) {
      pending = true;
      continue;
    }
    if (pending && !out.empty()) out.push_back(' ');
    pending = false;
    out.push_back(c);
  }
  return out;
}

std::string quote(const std::string& s) { return json(s).dump(); }

std::string render_map(const std::map<std::string, std::string>& m) {
  std::string out = "{";
  bool first = true;
  for (const auto& [k, v] : m) {
    if (!first) out += ", ";
    first = false;
    out += quote(k) + ": " + quote(v);
  }
  return out + "}";
}

struct FieldError {
  std::string reason;
};

const json* child(const json& obj, const char* key) {
  if (!obj.is_object()) return nullptr;
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

const json& require(const json& obj, const char* key, const std::string& path) {
  const json* v = child(obj, key);
  if (v == nullptr) throw FieldError{"missing field " + path};
  return *v;
}

std::string require_string(const json& obj, const char* key,
                           const std::string& path) {
  const json& v = require(obj, key, path);
  if (!v.is_string()) throw FieldError{"invalid field " + path};
  return v.get<std::string>();
}

std::map<std::string, std::string> require_map(const json& obj, const char* key,
                                               const std::string& path) {
  const json& v = require(obj, key, path);
  if (!v.is_object()) throw FieldError{"invalid field " + path};
  std::map<std::string, std::string> out;
  for (const auto& [name, text] : v.items()) {
    if (!text.is_string()) throw FieldError{"invalid field " + path + "." + name};
    out.emplace(name, text.get<std::string>());
  }
  return out;
}

CognitionTrace cognition_from_json(const json& body) {
  if (!body.is_object()) throw FieldError{"invalid cognition body"};
  CognitionTrace t;
  const json& sa = require(body, "situational_awareness", "situational_awareness");
  if (!sa.is_object()) throw FieldError{"invalid field situational_awareness"};
  t.environmental_perception = require_string(
      sa, "environmental_perception",
      "situational_awareness.environmental_perception");
  // Nested layout (others_perception.{behavior,emotion,intentions}) or the
  // same three maps directly under situational_awareness.
  const json* others = child(sa, "others_perception");
  std::string base = "situational_awareness.others_perception";
  if (others == nullptr) {
    if (child(sa, "behavior") == nullptr) {
      throw FieldError{"missing field " + base};
    }
    others = &sa;
    base = "situational_awareness";
  }
  if (!others->is_object()) throw FieldError{"invalid field " + base};
  t.others_behavior = require_map(*others, "behavior", base + ".behavior");
  t.others_emotion = require_map(*others, "emotion", base + ".emotion");
  t.others_intentions = require_map(*others, "intentions", base + ".intentions");

  const json& self = require(body, "self_awareness", "self_awareness");
  if (!self.is_object()) throw FieldError{"invalid field self_awareness"};
  const json& memory = require(self, "key_memory", "self_awareness.key_memory");
  if (!memory.is_array()) throw FieldError{"invalid field self_awareness.key_memory"};
  for (const json& m : memory) {
    if (!m.is_string()) throw FieldError{"invalid field self_awareness.key_memory"};
    t.key_memory.push_back(m.get<std::string>());
  }
  t.current_emotions = require_string(self, "current_emotions",
                                      "self_awareness.current_emotions");
  t.perceived_intentions = require_string(
      self, "perceived_intentions", "self_awareness.perceived_intentions");
  t.internal_thought = require_string(self, "internal_thought",
                                      "self_awareness.internal_thought");
  return t;
}

Trajectory fail(std::string_view raw, std::string reason) {
  Trajectory t;
  t.raw = std::string(raw);
  t.format_error = std::move(reason);
  return t;
}

// Finds the first cognition open tag (canonical or alias) at or after `from`.
std::pair<std::size_t, bool> find_open(std::string_view raw) {
  const std::size_t a = raw.find(kThinkOpen);
  const std::size_t b = raw.find(kAliasOpen);
  if (b < a) return {b, true};
  return {a, false};
}

}  // namespace

std::string ResponseScript::text() const {
  std::string out;
  for (const Segment& s : segments) {
    if (!out.empty()) out.push_back(' ');
    switch (s.kind) {
      case SegmentKind::kThought:
        out += "[" + s.text + "]";
        break;
      case SegmentKind::kAction:
        out += "(" + s.text + ")";
        break;
      case SegmentKind::kSpeech:
        out += s.text;
        break;
    }
  }
  return out;
}

ResponseParse parse_response_script(std::string_view text) {
  ResponseParse result;
  if (trim(text).empty()) {
    result.error = "empty response";
    return result;
  }
  ResponseScript script;
  std::string speech;
  auto flush = [&] {
    std::string s = normalize_space(speech);
    if (!s.empty()) script.segments.push_back({SegmentKind::kSpeech, s});
    speech.clear();
  };
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c == '[' || c == '(') {
      const char close = c == '[' ? ']' : ')';
      const std::size_t end = text.find(close, i + 1);
      if (end != std::string_view::npos) {
        flush();
        script.segments.push_back(
            {c == '[' ? SegmentKind::kThought : SegmentKind::kAction,
             normalize_space(text.substr(i + 1, end - i - 1))});
        i = end + 1;
        continue;
      }
    }
    speech.push_back(c);
    ++i;
  }
  flush();
  result.script = std::move(script);
  return result;
}

std::optional<BlockSpans> locate_blocks(std::string_view raw) {
  auto [open, alias] = find_open(raw);
  if (open == std::string_view::npos) return std::nullopt;
  const std::string_view open_tag = alias ? kAliasOpen : kThinkOpen;
  const std::string_view close_tag = alias ? kAliasClose : kThinkClose;
  const std::size_t close = raw.find(close_tag, open + open_tag.size());
  if (close == std::string_view::npos) return std::nullopt;
  BlockSpans spans;
  spans.think_begin = open;
  spans.think_end = close + close_tag.size();
  const std::size_t a_open = raw.find(kAnswerOpen, spans.think_end);
  if (a_open == std::string_view::npos) return std::nullopt;
  const std::size_t a_close = raw.find(kAnswerClose, a_open + kAnswerOpen.size());
  if (a_close == std::string_view::npos) return std::nullopt;
  spans.answer_begin = a_open;
  spans.answer_end = a_close + kAnswerClose.size();
  return spans;
}

Trajectory parse_trace(std::string_view raw,
                       const std::optional<std::vector<std::string>>& roster) {
  auto [open, alias] = find_open(raw);
  if (open == std::string_view::npos) return fail(raw, "missing <think>");
  const std::string_view open_tag = alias ? kAliasOpen : kThinkOpen;
  const std::string_view close_tag = alias ? kAliasClose : kThinkClose;
  const std::size_t body_begin = open + open_tag.size();
  const std::size_t close = raw.find(close_tag, body_begin);
  if (close == std::string_view::npos) return fail(raw, "missing </think>");

  json body;
  try {
    body = json::parse(raw.substr(body_begin, close - body_begin));
  } catch (const json::parse_error&) {
    return fail(raw, "malformed json");
  }
  CognitionTrace cognition;
  try {
    cognition = cognition_from_json(body);
  } catch (const FieldError& e) {
    return fail(raw, e.reason);
  }

  const std::size_t after = close + close_tag.size();
  const std::size_t a_open = raw.find(kAnswerOpen, after);
  if (a_open == std::string_view::npos) return fail(raw, "missing <answer>");
  const std::size_t a_body = a_open + kAnswerOpen.size();
  const std::size_t a_close = raw.find(kAnswerClose, a_body);
  if (a_close == std::string_view::npos) return fail(raw, "missing </answer>");
  ResponseParse response = parse_response_script(raw.substr(a_body, a_close - a_body));
  if (!response.script) return fail(raw, response.error);

  if (roster) {
    for (const auto* m : {&cognition.others_behavior, &cognition.others_emotion,
                          &cognition.others_intentions}) {
      for (const auto& [name, _] : *m) {
        bool found = false;
        for (const std::string& r : *roster) found = found || r == name;
        if (!found) return fail(raw, "roster violation: " + name);
      }
    }
  }

  Trajectory t;
  t.raw = std::string(raw);
  t.cognition = std::move(cognition);
  t.response = std::move(*response.script);
  return t;
}

std::string cognition_json(const CognitionTrace& t) {
  std::string out = "{\"situational_awareness\": {\"environmental_perception\": ";
  out += quote(t.environmental_perception);
  out += ", \"others_perception\": {\"behavior\": " + render_map(t.others_behavior);
  out += ", \"emotion\": " + render_map(t.others_emotion);
  out += ", \"intentions\": " + render_map(t.others_intentions);
  out += "}}, \"self_awareness\": {\"key_memory\": [";
  for (std::size_t i = 0; i < t.key_memory.size(); ++i) {
    if (i > 0) out += ", ";
    out += quote(t.key_memory[i]);
  }
  out += "], \"current_emotions\": " + quote(t.current_emotions);
  out += ", \"perceived_intentions\": " + quote(t.perceived_intentions);
  out += ", \"internal_thought\": " + quote(t.internal_thought);
  out += "}}";
  return out;
}

std::string serialize_cognition_block(const CognitionTrace& trace) {
  return "<think> " + cognition_json(trace) + " </think>";
}

std::string serialize_answer_block(const ResponseScript& response) {
  return "<answer> " + response.text() + " </answer>";
}

std::string serialize_trace(const Trajectory& traj) {
  if (!traj.parsed() || !traj.cognition || !traj.response) {
    throw StateError("serialize_trace: trajectory is not parsed");
  }
  return serialize_cognition_block(*traj.cognition) + " " +
         serialize_answer_block(*traj.response);
}

FilterResult format_filter(std::span<const Trajectory> trajs) {
  FilterResult out;
  for (const Trajectory& t : trajs) {
    if (t.parsed()) {
      out.kept.push_back(t);
    } else {
      out.rejected.emplace_back(t, *t.format_error);
    }
  }
  return out;
}

const std::vector<std::string>& required_field_paths() {
  static const std::vector<std::string> kPaths = {
      "situational_awareness",
      "situational_awareness.environmental_perception",
      "situational_awareness.others_perception",
      "situational_awareness.others_perception.behavior",
      "situational_awareness.others_perception.emotion",
      "situational_awareness.others_perception.intentions",
      "self_awareness",
      "self_awareness.key_memory",
      "self_awareness.current_emotions",
      "self_awareness.perceived_intentions",
      "self_awareness.internal_thought",
  };
  return kPaths;
}

}  // namespace dualcog
