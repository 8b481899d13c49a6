#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "sumo/metrics.hpp"

using namespace sumo;

namespace {

// Brute-force oracle: maximum TP count over all one-to-one assignments of
// reference to detected events with overlap above the threshold.
std::size_t oracle_max_tp(const EventList& reference, const EventList& detected,
                          double threshold) {
  std::size_t best = 0;
  std::vector<int> taken(detected.size(), 0);
  std::function<void(std::size_t, std::size_t)> recurse = [&](std::size_t r, std::size_t tp) {
    if (r == reference.size()) {
      best = std::max(best, tp);
      return;
    }
    recurse(r + 1, tp);  // leave this reference unmatched
    for (std::size_t d = 0; d < detected.size(); ++d) {
      if (taken[d]) continue;
      if (metrics::overlap(reference[r], detected[d]) > threshold) {
        taken[d] = 1;
        recurse(r + 1, tp + 1);
        taken[d] = 0;
      }
    }
  };
  recurse(0, 0);
  return best;
}

// All sorted non-overlapping event sets with up to max_events events on an
// integer grid of `slots` positions with durations 1..max_dur.
std::vector<EventList> enumerate_event_sets(int slots, int max_dur, int max_events) {
  std::vector<EventList> out;
  EventList current;
  std::function<void(int)> recurse = [&](int pos) {
    out.push_back(current);
    if (static_cast<int>(current.size()) == max_events) return;
    for (int start = pos; start < slots; ++start) {
      for (int dur = 1; dur <= max_dur && start + dur <= slots; ++dur) {
        current.push_back({static_cast<double>(start), static_cast<double>(dur)});
        recurse(start + dur);
        current.pop_back();
      }
    }
  };
  recurse(0);
  return out;
}

}  // namespace

TEST(Overlap, IntervalExamples) {
  EXPECT_NEAR(metrics::overlap({1.0, 1.0}, {1.5, 1.0}), 1.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(metrics::overlap({1.0, 1.0}, {1.0, 1.0}), 1.0);
  EXPECT_DOUBLE_EQ(metrics::overlap({0.0, 1.0}, {2.0, 1.0}), 0.0);
  EXPECT_DOUBLE_EQ(metrics::overlap({0.0, 1.0}, {1.0, 1.0}), 0.0);  // touching
}

TEST(Overlap, SymmetricAndBounded) {
  Rng rng(31);
  for (int i = 0; i < 2000; ++i) {
    SpindleEvent a{rng.uniform(0.0, 10.0), rng.uniform(0.1, 3.0)};
    SpindleEvent b{rng.uniform(0.0, 10.0), rng.uniform(0.1, 3.0)};
    double ab = metrics::overlap(a, b);
    EXPECT_DOUBLE_EQ(ab, metrics::overlap(b, a));
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
  }
}

TEST(MatchEvents, SimpleCases) {
  EventList ref{{1.0, 1.0}};
  auto m = metrics::match_events(ref, ref, 0.2);
  EXPECT_EQ(m.tp, 1u);
  EXPECT_EQ(m.fp, 0u);
  EXPECT_EQ(m.fn, 0u);

  auto none = metrics::match_events(ref, {}, 0.2);
  EXPECT_EQ(none.tp, 0u);
  EXPECT_EQ(none.fn, 1u);
  EXPECT_EQ(none.fp, 0u);
}

TEST(MatchEvents, PartialOverlapExample) {
  // ref {[0,1],[2,3]}, det {[0.5,1.5],[10,11]}: overlap 1/3 > 0.2
  EventList ref{{0.0, 1.0}, {2.0, 1.0}};
  EventList det{{0.5, 1.0}, {10.0, 1.0}};
  auto m = metrics::match_events(ref, det, 0.2);
  EXPECT_EQ(m.tp, 1u);
  EXPECT_EQ(m.fn, 1u);
  EXPECT_EQ(m.fp, 1u);
  EXPECT_EQ(oracle_max_tp(ref, det, 0.2), 1u);
  ASSERT_EQ(m.pairs.size(), 1u);
  EXPECT_EQ(m.pairs[0].reference_index, 0u);
  EXPECT_EQ(m.pairs[0].detected_index, 0u);
  EXPECT_NEAR(m.pairs[0].overlap, 1.0 / 3.0, 1e-12);
}

TEST(MatchEvents, BridgingDetectionNeedsAugmentation) {
  // a greedy-only matcher pairs ref0 with det1 (IoU 0.5) and strands the rest;
  // the maximum matching pairs ref0-det0 and ref1-det1
  EventList ref{{0.0, 3.0}, {3.0, 2.0}};
  EventList det{{0.0, 1.0}, {1.0, 3.0}};
  auto m = metrics::match_events(ref, det, 0.2);
  EXPECT_EQ(m.tp, 2u);
  EXPECT_EQ(m.fp, 0u);
  EXPECT_EQ(m.fn, 0u);
  EXPECT_EQ(oracle_max_tp(ref, det, 0.2), 2u);
}

TEST(MatchEvents, RejectsOverlappingInput) {
  EventList bad{{0.0, 2.0}, {1.0, 2.0}};
  EventList ok{{0.0, 1.0}};
  EXPECT_THROW(metrics::match_events(bad, ok, 0.2), ConfigError);
  EXPECT_THROW(metrics::match_events(ok, bad, 0.2), ConfigError);
}

TEST(MatchEvents, MatchesExhaustiveOracleOnSmallGrid) {
  // small version of the acceptance corpus: grid of 5 slots, durations <= 2
  auto sets = enumerate_event_sets(5, 2, 3);
  for (double theta : {0.1, 0.5}) {
    for (const auto& ref : sets) {
      for (const auto& det : sets) {
        auto m = metrics::match_events(ref, det, theta);
        ASSERT_EQ(m.tp, oracle_max_tp(ref, det, theta))
            << "theta=" << theta << " nref=" << ref.size() << " ndet=" << det.size();
        ASSERT_EQ(m.tp + m.fn, ref.size());
        ASSERT_EQ(m.tp + m.fp, det.size());
        for (const auto& pair : m.pairs) ASSERT_GT(pair.overlap, theta);
      }
    }
  }
}

TEST(Prf, FormulaAndConventions) {
  auto p = metrics::prf(3, 1, 1);
  EXPECT_DOUBLE_EQ(p.precision, 0.75);
  EXPECT_DOUBLE_EQ(p.recall, 0.75);
  EXPECT_DOUBLE_EQ(p.f1, 0.75);

  auto empty = metrics::prf(0, 0, 0);
  EXPECT_DOUBLE_EQ(empty.precision, 1.0);
  EXPECT_DOUBLE_EQ(empty.recall, 1.0);
  EXPECT_DOUBLE_EQ(empty.f1, 1.0);

  EXPECT_NEAR(metrics::prf(73, 30, 25).f1, 146.0 / 201.0, 1e-12);

  // empty-vs-nonempty conventions
  EXPECT_DOUBLE_EQ(metrics::prf(0, 0, 5).precision, 0.0);
  EXPECT_DOUBLE_EQ(metrics::prf(0, 5, 0).recall, 0.0);
}

TEST(Prf, F1IsHarmonicMeanProperty) {
  Rng rng(32);
  for (int i = 0; i < 1000; ++i) {
    std::size_t tp = rng.uniform_int(50);
    std::size_t fp = rng.uniform_int(50);
    std::size_t fn = rng.uniform_int(50);
    auto p = metrics::prf(tp, fp, fn);
    if (p.precision + p.recall > 0.0) {
      EXPECT_NEAR(p.f1, 2.0 * p.precision * p.recall / (p.precision + p.recall), 1e-12);
    } else {
      EXPECT_DOUBLE_EQ(p.f1, 0.0);
    }
  }
}

TEST(F1Curve, PerfectAndEmptyDetectors) {
  EventList ref{{0.0, 1.0}, {3.0, 0.7}};
  auto perfect = metrics::f1_curve_and_bar(ref, ref);
  for (double f : perfect.f1) EXPECT_DOUBLE_EQ(f, 1.0);
  EXPECT_NEAR(perfect.f1_bar, 1.0, 1e-12);

  auto nothing = metrics::f1_curve_and_bar(ref, EventList{});
  for (double f : nothing.f1) EXPECT_DOUBLE_EQ(f, 0.0);
  EXPECT_NEAR(nothing.f1_bar, 0.0, 1e-12);
}

TEST(F1Curve, HalfOverlapStepFunction) {
  // single ref [0,1] vs det [0,0.5]: overlap 0.5, so F1 = 1 below 0.5 and 0 at
  // or above; the trapezoid over the 0.05 grid integrates to 0.475
  EventList ref{{0.0, 1.0}};
  EventList det{{0.0, 0.5}};
  auto curve = metrics::f1_curve_and_bar(ref, det);
  for (std::size_t i = 0; i < curve.thresholds.size(); ++i) {
    EXPECT_DOUBLE_EQ(curve.f1[i], curve.thresholds[i] < 0.5 ? 1.0 : 0.0);
  }
  EXPECT_NEAR(curve.f1_bar, 0.475, 1e-12);
  EXPECT_NEAR(curve.f1_bar, 0.5, 0.05);  // analytic step integral, grid resolution
}

TEST(F1Curve, NonIncreasingInThresholdProperty) {
  Rng rng(33);
  for (int rep = 0; rep < 100; ++rep) {
    EventList ref, det;
    double t = 0.0;
    while (true) {
      t += rng.uniform(0.05, 2.0);
      double dur = rng.uniform(0.3, 2.0);
      if (t + dur > 60.0) break;
      ref.push_back({t, dur});
      t += dur;
    }
    t = 0.0;
    while (true) {
      t += rng.uniform(0.05, 2.0);
      double dur = rng.uniform(0.3, 2.0);
      if (t + dur > 60.0) break;
      det.push_back({t, dur});
      t += dur;
    }
    auto curve = metrics::f1_curve_and_bar(ref, det);
    for (std::size_t i = 1; i < curve.f1.size(); ++i)
      ASSERT_LE(curve.f1[i], curve.f1[i - 1] + 1e-12);
  }
}

TEST(SubjectStats, DensityAndDuration) {
  metrics::SubjectRecording rec;
  rec.subject_id = "s1";
  rec.cohort = Cohort::younger;
  rec.total_seconds = 3 * 115.0;
  for (int i = 0; i < 23; ++i) rec.events.push_back({i * 10.0, 1.0});
  auto stats = metrics::subject_stats({rec});
  ASSERT_EQ(stats.size(), 1u);
  EXPECT_NEAR(stats[0].density_per_min, 4.0, 1e-12);

  metrics::SubjectRecording none{"s2", Cohort::older, 60.0, {}};
  auto s = metrics::subject_stats({none});
  EXPECT_DOUBLE_EQ(s[0].density_per_min, 0.0);
  EXPECT_FALSE(s[0].mean_duration_s.has_value());

  metrics::SubjectRecording two{"s3", Cohort::older, 60.0, {{0.0, 0.5}, {10.0, 1.5}}};
  EXPECT_DOUBLE_EQ(*metrics::subject_stats({two})[0].mean_duration_s, 1.0);

  metrics::SubjectRecording zero_minutes{"s4", Cohort::older, 0.0, {}};
  EXPECT_THROW(metrics::subject_stats({zero_minutes}), ConfigError);
}

TEST(Correlate, ExactLines) {
  std::vector<double> x{1.0, 2.0, 3.0, 5.0};
  auto same = metrics::correlate(x, x);
  EXPECT_NEAR(same.r, 1.0, 1e-12);
  EXPECT_NEAR(same.slope, 1.0, 1e-12);
  EXPECT_NEAR(same.intercept, 0.0, 1e-12);

  std::vector<double> y;
  for (double v : x) y.push_back(2.0 * v + 1.0);
  auto line = metrics::correlate(x, y);
  EXPECT_NEAR(line.r, 1.0, 1e-12);
  EXPECT_NEAR(line.slope, 2.0, 1e-12);
  EXPECT_NEAR(line.intercept, 1.0, 1e-12);
}

TEST(Correlate, ClosedFormExample) {
  // cov = 4.7, var_x = 5, var_y = 4.5: r = 4.7/sqrt(22.5), slope = 0.94
  std::vector<double> x{1.0, 2.0, 3.0, 4.0};
  std::vector<double> y{1.1, 1.9, 3.2, 3.8};
  auto c = metrics::correlate(x, y);
  EXPECT_NEAR(c.slope, 0.94, 1e-12);
  EXPECT_NEAR(c.r, 4.7 / std::sqrt(22.5), 1e-12);
  EXPECT_NEAR(c.r2, 0.98177, 1e-4);
}

TEST(Correlate, ScaleEquivariance) {
  Rng rng(34);
  std::vector<double> x(20), y(20);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.uniform(0.0, 10.0);
    y[i] = 0.8 * x[i] + rng.normal(0.0, 0.5);
  }
  auto base = metrics::correlate(x, y);
  const double a = 3.25;
  std::vector<double> ay;
  for (double v : y) ay.push_back(a * v);
  auto scaled = metrics::correlate(x, ay);
  EXPECT_NEAR(scaled.r, base.r, 1e-12);
  EXPECT_NEAR(scaled.slope, a * base.slope, 1e-10);
}

TEST(Correlate, DegenerateInputsRejected) {
  std::vector<double> flat{2.0, 2.0, 2.0};
  std::vector<double> y{1.0, 2.0, 3.0};
  EXPECT_THROW(metrics::correlate(flat, y), ConfigError);
  EXPECT_THROW(metrics::correlate({1.0, 2.0}, {1.0, 2.0}), ConfigError);  // n < 3
}

namespace {

// Normal CDF by quadrature of the density (Simpson), independent of erfc.
double oracle_normal_cdf(double x) {
  const double lo = -10.0;
  const int steps = 20000;
  const double h = (x - lo) / steps;
  auto pdf = [](double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * M_PI); };
  double acc = pdf(lo) + pdf(x);
  for (int i = 1; i < steps; ++i) acc += pdf(lo + i * h) * (i % 2 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

}  // namespace

TEST(FisherComparison, EqualCorrelationsGivePOne) {
  auto c = metrics::compare_correlations(0.8, 20, 0.8, 20);
  EXPECT_DOUBLE_EQ(c.z_stat, 0.0);
  EXPECT_DOUBLE_EQ(c.p_two_sided, 1.0);
  EXPECT_DOUBLE_EQ(std::atanh(0.0), 0.0);
}

TEST(FisherComparison, MatchesAnalyticFormulaAndCdfOracle) {
  // r^2 = 0.82 vs 0.35 with n = 18 per cohort
  const double r1 = std::sqrt(0.82), r2 = std::sqrt(0.35);
  auto c = metrics::compare_correlations(r1, 18, r2, 18);
  const double expect_z =
      (std::atanh(r1) - std::atanh(r2)) / std::sqrt(1.0 / 15.0 + 1.0 / 15.0);
  EXPECT_NEAR(c.z_stat, expect_z, 1e-12);
  const double expect_p = 2.0 * (1.0 - oracle_normal_cdf(std::abs(expect_z)));
  EXPECT_NEAR(c.p_two_sided, expect_p, 1e-6);
  // the published comparison lands near p = 0.02
  EXPECT_GT(c.p_two_sided, 0.01);
  EXPECT_LT(c.p_two_sided, 0.05);
}

TEST(FisherComparison, RejectsDegenerateInputs) {
  EXPECT_THROW(metrics::compare_correlations(1.0, 20, 0.5, 20), ConfigError);
  EXPECT_THROW(metrics::compare_correlations(0.5, 3, 0.5, 20), ConfigError);
}
