#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "sumo/common.hpp"

namespace sumo {

enum class Cohort { younger, older };

inline std::string to_string(Cohort c) { return c == Cohort::younger ? "younger" : "older"; }

inline Cohort cohort_from_string(const std::string& s) {
  if (s == "younger") return Cohort::younger;
  if (s == "older") return Cohort::older;
  throw FormatError("unknown cohort: " + s);
}

// One detected or annotated spindle, in seconds from segment start.
struct SpindleEvent {
  double onset_s = 0.0;
  double duration_s = 0.0;

  double end_s() const { return onset_s + duration_s; }

  bool operator==(const SpindleEvent&) const = default;
};

using EventList = std::vector<SpindleEvent>;

// Sorted by onset, positive durations, no overlap between neighbours.
inline bool is_valid_event_list(const EventList& events, double max_end_s = -1.0) {
  double prev_end = -1.0;
  for (const auto& e : events) {
    if (!(e.duration_s > 0.0) || e.onset_s < 0.0) return false;
    if (e.onset_s < prev_end) return false;
    if (max_end_s >= 0.0 && e.end_s() > max_end_s + 1e-9) return false;
    prev_end = e.end_s();
  }
  return true;
}

inline void sort_events(EventList& events) {
  std::sort(events.begin(), events.end(), [](const SpindleEvent& a, const SpindleEvent& b) {
    return a.onset_s < b.onset_s || (a.onset_s == b.onset_s && a.duration_s < b.duration_s);
  });
}

// Merges overlapping or touching events into maximal disjoint intervals.
inline EventList merge_overlaps(EventList events) {
  sort_events(events);
  EventList out;
  for (const auto& e : events) {
    if (!out.empty() && e.onset_s <= out.back().end_s()) {
      double end = std::max(out.back().end_s(), e.end_s());
      out.back().duration_s = end - out.back().onset_s;
    } else {
      out.push_back(e);
    }
  }
  return out;
}

// A preprocessed 100 Hz, z-scored EEG trace with provenance.
struct Segment {
  std::vector<float> samples;
  double fs = 100.0;
  std::string subject_id;
  Cohort cohort = Cohort::younger;
  std::string segment_id;
  bool degenerate = false;  // raw trace was constant; samples are all zero
};

struct RawSegment {
  std::vector<double> samples;
  double sample_rate_hz = 0.0;
  std::string subject_id;
  Cohort cohort = Cohort::younger;
  std::string segment_id;
};

}  // namespace sumo
