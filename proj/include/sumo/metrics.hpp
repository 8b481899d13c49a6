#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "sumo/events.hpp"

namespace sumo::metrics {

// Intersection over union of two event intervals.
inline double overlap(const SpindleEvent& a, const SpindleEvent& b) {
  double inter = std::min(a.end_s(), b.end_s()) - std::max(a.onset_s, b.onset_s);
  if (inter <= 0.0) return 0.0;
  double uni = std::max(a.end_s(), b.end_s()) - std::min(a.onset_s, b.onset_s);
  return inter / uni;
}

struct MatchedPair {
  std::size_t reference_index;
  std::size_t detected_index;
  double overlap;
};

struct MatchResult {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double threshold = 0.0;
  std::vector<MatchedPair> pairs;
};

// One-to-one matching of detections to reference events. Candidate pairs are
// those whose overlap exceeds the threshold; greedy selection by descending
// overlap (ties: earlier reference, then earlier detection) is refined with
// augmenting paths so the true-positive count is maximal.
inline MatchResult match_events(const EventList& reference, const EventList& detected,
                                double threshold) {
  if (!is_valid_event_list(reference))
    throw ConfigError("reference events must be sorted and non-overlapping");
  if (!is_valid_event_list(detected))
    throw ConfigError("detected events must be sorted and non-overlapping");

  struct Edge {
    double ov;
    std::size_t r, d;
  };
  std::vector<Edge> edges;
  std::vector<std::vector<std::size_t>> adj(reference.size());  // edge ids per reference
  for (std::size_t r = 0; r < reference.size(); ++r) {
    for (std::size_t d = 0; d < detected.size(); ++d) {
      if (detected[d].onset_s >= reference[r].end_s()) break;
      double ov = overlap(reference[r], detected[d]);
      // strict comparison, except that an exact match always qualifies (at
      // threshold 1.0 nothing could exceed it otherwise)
      if (ov > threshold || ov >= 1.0) edges.push_back({ov, r, d});
    }
  }
  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
    if (a.ov != b.ov) return a.ov > b.ov;
    if (a.r != b.r) return a.r < b.r;
    return a.d < b.d;
  });
  for (std::size_t e = 0; e < edges.size(); ++e) adj[edges[e].r].push_back(e);

  constexpr std::size_t kUnmatched = static_cast<std::size_t>(-1);
  std::vector<std::size_t> ref_match(reference.size(), kUnmatched);  // edge id
  std::vector<std::size_t> det_match(detected.size(), kUnmatched);   // edge id
  for (std::size_t e = 0; e < edges.size(); ++e) {
    if (ref_match[edges[e].r] == kUnmatched && det_match[edges[e].d] == kUnmatched) {
      ref_match[edges[e].r] = e;
      det_match[edges[e].d] = e;
    }
  }
  // augment: greedy alone can strand a pair when one detection bridges two
  // references, so grow the matching to maximum cardinality
  std::vector<char> visited(detected.size());
  std::function<bool(std::size_t)> try_augment = [&](std::size_t r) -> bool {
    for (std::size_t e : adj[r]) {
      std::size_t d = edges[e].d;
      if (visited[d]) continue;
      visited[d] = 1;
      if (det_match[d] == kUnmatched || try_augment(edges[det_match[d]].r)) {
        ref_match[r] = e;
        det_match[d] = e;
        return true;
      }
    }
    return false;
  };
  for (std::size_t r = 0; r < reference.size(); ++r) {
    if (ref_match[r] != kUnmatched) continue;
    std::fill(visited.begin(), visited.end(), 0);
    try_augment(r);
  }

  MatchResult result;
  result.threshold = threshold;
  for (std::size_t r = 0; r < reference.size(); ++r) {
    if (ref_match[r] != kUnmatched)
      result.pairs.push_back({r, edges[ref_match[r]].d, edges[ref_match[r]].ov});
  }
  result.tp = result.pairs.size();
  result.fn = reference.size() - result.tp;
  result.fp = detected.size() - result.tp;
  return result;
}

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Zero-denominator conventions: an empty side scores 1 when the other side
// is empty too, 0 otherwise; F1 of all-zero counts is 1.
inline Prf prf(std::size_t tp, std::size_t fp, std::size_t fn) {
  Prf out;
  out.precision = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp)
                                : (fn == 0 ? 1.0 : 0.0);
  out.recall = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn)
                             : (fp == 0 ? 1.0 : 0.0);
  out.f1 = (2 * tp + fp + fn) > 0
               ? 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn)
               : 1.0;
  return out;
}

inline Prf prf(const MatchResult& m) { return prf(m.tp, m.fp, m.fn); }

inline std::vector<double> default_threshold_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 20; ++i) grid.push_back(0.05 * i);
  return grid;
}

struct F1Curve {
  std::vector<double> thresholds;
  std::vector<std::size_t> tp, fp, fn;
  std::vector<double> precision, recall, f1;
  double f1_bar = 0.0;
};

// Counts pooled over segment pairs (micro-averaging), one column per grid
// threshold; F1-bar is the trapezoidal integral over [0, 1] with the value
// at 0+ taken from the first grid point.
inline F1Curve f1_curve_and_bar(const std::vector<const EventList*>& reference,
                                const std::vector<const EventList*>& detected,
                                const std::vector<double>& grid = default_threshold_grid()) {
  if (reference.size() != detected.size())
    throw ConfigError("reference/detected segment counts differ");
  F1Curve curve;
  curve.thresholds = grid;
  for (double theta : grid) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t s = 0; s < reference.size(); ++s) {
      MatchResult m = match_events(*reference[s], *detected[s], theta);
      tp += m.tp;
      fp += m.fp;
      fn += m.fn;
    }
    Prf p = prf(tp, fp, fn);
    curve.tp.push_back(tp);
    curve.fp.push_back(fp);
    curve.fn.push_back(fn);
    curve.precision.push_back(p.precision);
    curve.recall.push_back(p.recall);
    curve.f1.push_back(p.f1);
  }
  if (!grid.empty()) {
    double integral = grid.front() * curve.f1.front();
    for (std::size_t i = 0; i + 1 < grid.size(); ++i)
      integral += 0.5 * (curve.f1[i] + curve.f1[i + 1]) * (grid[i + 1] - grid[i]);
    curve.f1_bar = integral;
  }
  return curve;
}

inline F1Curve f1_curve_and_bar(const EventList& reference, const EventList& detected,
                                const std::vector<double>& grid = default_threshold_grid()) {
  std::vector<const EventList*> r{&reference}, d{&detected};
  return f1_curve_and_bar(r, d, grid);
}

struct SubjectStats {
  std::string subject_id;
  Cohort cohort = Cohort::younger;
  double density_per_min = 0.0;
  std::optional<double> mean_duration_s;  // empty when the subject has no events
  double total_minutes = 0.0;
  std::size_t event_count = 0;
};

struct SubjectRecording {
  std::string subject_id;
  Cohort cohort;
  double total_seconds = 0.0;
  EventList events;  // pooled over the subject's segments
};

inline std::vector<SubjectStats> subject_stats(const std::vector<SubjectRecording>& subjects) {
  std::vector<SubjectStats> out;
  out.reserve(subjects.size());
  for (const auto& s : subjects) {
    if (!(s.total_seconds > 0.0))
      throw ConfigError("subject " + s.subject_id + " has no scored minutes");
    SubjectStats st;
    st.subject_id = s.subject_id;
    st.cohort = s.cohort;
    st.total_minutes = s.total_seconds / 60.0;
    st.event_count = s.events.size();
    st.density_per_min = static_cast<double>(s.events.size()) / st.total_minutes;
    if (!s.events.empty()) {
      double sum = 0.0;
      for (const auto& e : s.events) sum += e.duration_s;
      st.mean_duration_s = sum / static_cast<double>(s.events.size());
    }
    out.push_back(std::move(st));
  }
  return out;
}

struct Correlation {
  double r = 0.0;
  double r2 = 0.0;
  double slope = 0.0;
  double intercept = 0.0;
  std::size_t n = 0;
};

// Pearson r and the least-squares line y = slope * x + intercept, with x the
// reference-derived values.
inline Correlation correlate(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 3)
    throw ConfigError("correlate requires matched samples, n >= 3");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i]))
      throw ConfigError("correlate requires finite values");
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx <= 0.0) throw ConfigError("correlate: zero variance in x");
  Correlation c;
  c.n = x.size();
  c.slope = sxy / sxx;
  c.intercept = my - c.slope * mx;
  c.r = syy > 0.0 ? sxy / std::sqrt(sxx * syy) : 0.0;
  c.r2 = c.r * c.r;
  return c;
}

struct FisherComparison {
  double z_stat = 0.0;
  double p_two_sided = 1.0;
};

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Compares two correlation coefficients via Fisher's z-transform.
inline FisherComparison compare_correlations(double r1, std::size_t n1, double r2,
                                             std::size_t n2) {
  if (std::abs(r1) >= 1.0 || std::abs(r2) >= 1.0)
    throw ConfigError("Fisher z-transform is infinite at |r| = 1");
  if (n1 < 4 || n2 < 4) throw ConfigError("Fisher comparison requires n >= 4");
  double z1 = std::atanh(r1);
  double z2 = std::atanh(r2);
  double se = std::sqrt(1.0 / static_cast<double>(n1 - 3) + 1.0 / static_cast<double>(n2 - 3));
  FisherComparison out;
  out.z_stat = (z1 - z2) / se;
  out.p_two_sided = 2.0 * (1.0 - normal_cdf(std::abs(out.z_stat)));
  return out;
}

}  // namespace sumo::metrics
