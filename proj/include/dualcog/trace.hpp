#ifndef DUALCOG_TRACE_HPP_
#define DUALCOG_TRACE_HPP_

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dualcog {

// Structured dual-cognition record: situational awareness (environment and
// other characters) followed by self awareness.
struct CognitionTrace {
  std::string environmental_perception;
  std::map<std::string, std::string> others_behavior;
  std::map<std::string, std::string> others_emotion;
  std::map<std::string, std::string> others_intentions;
  std::vector<std::string> key_memory;
  std::string current_emotions;
  std::string perceived_intentions;
  std::string internal_thought;

  friend bool operator==(const CognitionTrace&, const CognitionTrace&) = default;
};

enum class SegmentKind { kThought, kAction, kSpeech };

struct Segment {
  SegmentKind kind;
  std::string text;

  friend bool operator==(const Segment&, const Segment&) = default;
};

// A character turn: [thought], (action) and plain speech in any order.
struct ResponseScript {
  std::vector<Segment> segments;

  // Canonical text: segments joined by single spaces, thoughts in brackets and
  // actions in parentheses.
  std::string text() const;

  friend bool operator==(const ResponseScript&, const ResponseScript&) = default;
};

struct Trajectory {
  std::string raw;
  std::optional<CognitionTrace> cognition;
  std::optional<ResponseScript> response;
  // Empty when parsed; otherwise the first format problem found.
  std::optional<std::string> format_error;

  bool parsed() const { return !format_error.has_value(); }
};

// Byte ranges of the cognition and answer blocks inside a raw trajectory,
// tags included.
struct BlockSpans {
  std::size_t think_begin = 0, think_end = 0;
  std::size_t answer_begin = 0, answer_end = 0;
};

// Result of parse_response_script: either a script or the reason it failed.
struct ResponseParse {
  std::optional<ResponseScript> script;
  std::string error;
};

ResponseParse parse_response_script(std::string_view text);

// Parses `<think>{json}</think><answer>script</answer>`. The alias tag
// `<coginitive>` is accepted for the cognition block. Never throws; problems
// are reported through Trajectory::format_error.
Trajectory parse_trace(std::string_view raw,
                       const std::optional<std::vector<std::string>>& roster =
                           std::nullopt);

// Locates the first cognition block and the answer block that follows it.
std::optional<BlockSpans> locate_blocks(std::string_view raw);

// Canonical JSON body of a cognition trace (fixed key order, ", " and ": "
// separators, single line).
std::string cognition_json(const CognitionTrace& trace);

std::string serialize_cognition_block(const CognitionTrace& trace);
std::string serialize_answer_block(const ResponseScript& response);

// Canonical `<think> {...} </think> <answer> ... </answer>` form. Throws
// StateError for an unparsed trajectory.
std::string serialize_trace(const Trajectory& traj);

struct FilterResult {
  std::vector<Trajectory> kept;
  std::vector<std::pair<Trajectory, std::string>> rejected;
};

FilterResult format_filter(std::span<const Trajectory> trajs);

// Every field path a parsed trace must carry, in schema order.
const std::vector<std::string>& required_field_paths();

}  // namespace dualcog

#endif  // DUALCOG_TRACE_HPP_
