#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sumo/dataset.hpp"
#include "sumo/dsp.hpp"
#include "sumo/metrics.hpp"
#include "sumo/model.hpp"
#include "sumo/postproc.hpp"
#include "sumo/synth.hpp"
#include "sumo/train.hpp"

namespace sumo::pipeline {

namespace fs = std::filesystem;

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (a + 1) + 0xc2b2ae3d27d4eb4fULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct SynthDatasetSpec {
  std::size_t younger_subjects = 30;
  std::size_t older_subjects = 0;
  std::size_t segments_per_subject = 3;
  std::size_t ten_segment_subjects = 0;  // split evenly across cohorts
  std::uint64_t seed = 0;
};

// Generates a dataset of synthetic segments with a ground-truth annotation
// set named "truth". Subject ids are y###/o### by cohort.
inline data::Dataset synth_dataset(const synth::SynthConfig& cfg, const SynthDatasetSpec& spec,
                                   const fs::path& root) {
  cfg.validate();
  if (spec.younger_subjects + spec.older_subjects == 0)
    throw ConfigError("synth: at least one subject required");
  if (spec.ten_segment_subjects > spec.younger_subjects + spec.older_subjects)
    throw ConfigError("synth: more ten-segment subjects than subjects");

  data::Dataset ds = data::Dataset::create(root);
  data::AnnotationSet truth;
  std::size_t subject_index = 0;
  auto add_subject = [&](Cohort cohort, std::size_t per_cohort_index, std::size_t n_segments) {
    char sid[32];
    std::snprintf(sid, sizeof(sid), "%c%03zu", cohort == Cohort::younger ? 'y' : 'o',
                  per_cohort_index);
    ds.manifest().subjects.push_back({sid, cohort});
    for (std::size_t g = 0; g < n_segments; ++g) {
      char seg_id[48];
      std::snprintf(seg_id, sizeof(seg_id), "%s_seg%02zu", sid, g);
      auto sample = synth::gen_segment(cfg, mix_seed(spec.seed, subject_index, g));
      data::SegmentInfo info;
      info.id = seg_id;
      info.subject_id = sid;
      info.file = "signals/" + std::string(seg_id) + ".f32";
      info.duration_s = cfg.segment_s;
      info.fs = cfg.fs;
      ds.add_segment(info, sample.segment.samples);
      truth[seg_id] = std::move(sample.truth);
    }
    ++subject_index;
  };

  // ten-segment subjects come first in each cohort
  const std::size_t ten_younger = std::min(spec.ten_segment_subjects / 2 +
                                               spec.ten_segment_subjects % 2,
                                           spec.younger_subjects);
  const std::size_t ten_older =
      std::min(spec.ten_segment_subjects - ten_younger, spec.older_subjects);
  for (std::size_t i = 0; i < spec.younger_subjects; ++i)
    add_subject(Cohort::younger, i, i < ten_younger ? 10 : spec.segments_per_subject);
  for (std::size_t i = 0; i < spec.older_subjects; ++i)
    add_subject(Cohort::older, i, i < ten_older ? 10 : spec.segments_per_subject);

  ds.save_manifest();
  ds.save_annotations("truth", truth);
  return ds;
}

// Band-pass filter at the native rate, resample to target_fs, z-score, and
// write a new dataset. Annotation sets are carried over unchanged.
inline data::Dataset preprocess_dataset(const data::Dataset& in, const fs::path& out_root,
                                        int order = 10, double low_hz = 0.3,
                                        double high_hz = 30.0, double target_fs = 100.0) {
  data::Dataset out = data::Dataset::create(out_root);
  out.manifest().subjects = in.manifest().subjects;

  std::map<double, dsp::BiquadCascade> filters;
  for (const auto& seg : in.manifest().segments) {
    if (!filters.count(seg.fs)) filters[seg.fs] = dsp::design_bandpass(order, low_hz, high_hz, seg.fs);
  }

  const auto& segments = in.manifest().segments;
  std::vector<std::vector<float>> processed(segments.size());
  parallel_for(segments.size(), [&](std::size_t i) {
    const auto& seg = segments[i];
    auto raw = in.load_samples(seg);
    std::vector<double> x(raw.begin(), raw.end());
    x = dsp::filtfilt(filters.at(seg.fs), x);
    x = dsp::resample_to(x, seg.fs, target_fs);
    x = dsp::zscore(x);
    processed[i].assign(x.begin(), x.end());
  });
  for (std::size_t i = 0; i < segments.size(); ++i) {
    data::SegmentInfo info = segments[i];
    info.fs = target_fs;
    info.duration_s = segments[i].duration_s;
    info.file = "signals/" + info.id + ".f32";
    out.add_segment(info, processed[i]);
  }
  out.save_manifest();
  for (const auto& name : in.annotation_names())
    out.save_annotations(name, in.load_annotations(name));
  return out;
}

// Runs the model over every segment and stores the detections as a named
// annotation set.
inline void predict_dataset(Model<float>& model, const data::Dataset& ds,
                            const std::string& set_name) {
  const auto& segments = ds.manifest().segments;
  std::vector<EventList> detected(segments.size());
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& seg = segments[i];
    auto samples = ds.load_samples(seg);
    Tensor<float> x({1, 1, samples.size()});
    std::copy(samples.begin(), samples.end(), x.row(0, 0));
    Tensor<float> probs = forward(model, x, nn::Mode::eval);
    Tensor<float> flat({2, probs.dim(2)}, std::vector<float>(probs.vec()));
    detected[i] = postproc::extract_events(flat, model.arch.smoothing_width, seg.fs);
  }
  data::AnnotationSet out;
  for (std::size_t i = 0; i < segments.size(); ++i) out[segments[i].id] = std::move(detected[i]);
  ds.save_annotations(set_name, out);
}

// ---------------------------------------------------------------------------
// Evaluation report
// ---------------------------------------------------------------------------

struct SubjectRow {
  std::string subject_id;
  Cohort cohort = Cohort::younger;
  double total_minutes = 0.0;
  metrics::SubjectStats reference, detected;
};

struct EvalReport {
  metrics::F1Curve curve;
  std::vector<SubjectRow> subjects;
  // correlations keyed by metric ("density", "duration") then cohort
  // ("younger", "older", "all")
  std::map<std::string, std::map<std::string, metrics::Correlation>> correlations;
  std::map<std::string, std::map<std::string, metrics::FisherComparison>> fisher;
};

namespace detail {

inline std::vector<metrics::SubjectRecording> group_by_subject(const data::Dataset& ds,
                                                               const data::AnnotationSet& set) {
  std::map<std::string, metrics::SubjectRecording> grouped;
  for (const auto& seg : ds.manifest().segments) {
    auto& rec = grouped[seg.subject_id];
    if (rec.subject_id.empty()) {
      rec.subject_id = seg.subject_id;
      rec.cohort = ds.manifest().subject(seg.subject_id).cohort;
    }
    const double offset = rec.total_seconds;
    rec.total_seconds += seg.duration_s;
    auto it = set.find(seg.id);
    if (it == set.end()) continue;
    for (const auto& e : it->second) rec.events.push_back({e.onset_s + offset, e.duration_s});
  }
  std::vector<metrics::SubjectRecording> out;
  for (auto& [id, rec] : grouped) out.push_back(std::move(rec));
  return out;
}

inline void add_correlations(EvalReport& report, const std::string& metric,
                             const std::map<std::string, std::pair<std::vector<double>,
                                                                   std::vector<double>>>& data) {
  for (const auto& [cohort, xy] : data) {
    if (xy.first.size() < 3) continue;
    try {
      report.correlations[metric][cohort] = metrics::correlate(xy.first, xy.second);
    } catch (const ConfigError&) {
      // degenerate cohort (zero variance); leave the entry out
    }
  }
}

}  // namespace detail

inline EvalReport evaluate(const data::Dataset& ds, const std::string& reference_name,
                           const std::string& detected_name, bool by_subject = true,
                           const std::vector<double>& grid = metrics::default_threshold_grid()) {
  const auto reference = ds.load_annotations(reference_name);
  const auto detected = ds.load_annotations(detected_name);

  static const EventList kEmpty;
  std::vector<const EventList*> refs, dets;
  for (const auto& seg : ds.manifest().segments) {
    auto r = reference.find(seg.id);
    auto d = detected.find(seg.id);
    refs.push_back(r == reference.end() ? &kEmpty : &r->second);
    dets.push_back(d == detected.end() ? &kEmpty : &d->second);
  }

  EvalReport report;
  report.curve = metrics::f1_curve_and_bar(refs, dets, grid);
  if (!by_subject) return report;

  auto ref_groups = detail::group_by_subject(ds, reference);
  auto det_groups = detail::group_by_subject(ds, detected);
  auto ref_stats = metrics::subject_stats(ref_groups);
  auto det_stats = metrics::subject_stats(det_groups);

  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> density, duration;
  for (std::size_t i = 0; i < ref_stats.size(); ++i) {
    SubjectRow row;
    row.subject_id = ref_stats[i].subject_id;
    row.cohort = ref_stats[i].cohort;
    row.total_minutes = ref_stats[i].total_minutes;
    row.reference = ref_stats[i];
    row.detected = det_stats[i];
    report.subjects.push_back(row);

    const std::string cohort = to_string(row.cohort);
    for (const std::string& key : {cohort, std::string("all")}) {
      density[key].first.push_back(ref_stats[i].density_per_min);
      density[key].second.push_back(det_stats[i].density_per_min);
      if (ref_stats[i].mean_duration_s && det_stats[i].mean_duration_s) {
        duration[key].first.push_back(*ref_stats[i].mean_duration_s);
        duration[key].second.push_back(*det_stats[i].mean_duration_s);
      }
    }
  }
  detail::add_correlations(report, "density", density);
  detail::add_correlations(report, "duration", duration);
  return report;
}

// Fisher-z comparison of two detectors against the same reference.
inline void compare_detectors(EvalReport& report, const EvalReport& other) {
  for (const auto& [metric, cohorts] : report.correlations) {
    auto it = other.correlations.find(metric);
    if (it == other.correlations.end()) continue;
    for (const auto& [cohort, corr] : cohorts) {
      auto jt = it->second.find(cohort);
      if (jt == it->second.end()) continue;
      try {
        report.fisher[metric][cohort] =
            metrics::compare_correlations(corr.r, corr.n, jt->second.r, jt->second.n);
      } catch (const ConfigError&) {
        // |r| = 1 or too few subjects; comparison undefined
      }
    }
  }
}

inline nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["thresholds"] = report.curve.thresholds;
  j["tp"] = report.curve.tp;
  j["fp"] = report.curve.fp;
  j["fn"] = report.curve.fn;
  j["precision"] = report.curve.precision;
  j["recall"] = report.curve.recall;
  j["f1"] = report.curve.f1;
  j["f1_bar"] = report.curve.f1_bar;
  if (!report.subjects.empty()) {
    nlohmann::json subjects = nlohmann::json::array();
    for (const auto& row : report.subjects) {
      nlohmann::json s{{"subject_id", row.subject_id},
                       {"cohort", to_string(row.cohort)},
                       {"total_minutes", row.total_minutes},
                       {"reference_density_per_min", row.reference.density_per_min},
                       {"detected_density_per_min", row.detected.density_per_min}};
      if (row.reference.mean_duration_s)
        s["reference_mean_duration_s"] = *row.reference.mean_duration_s;
      if (row.detected.mean_duration_s)
        s["detected_mean_duration_s"] = *row.detected.mean_duration_s;
      subjects.push_back(std::move(s));
    }
    j["by_subject"] = std::move(subjects);
  }
  for (const auto& [metric, cohorts] : report.correlations) {
    for (const auto& [cohort, c] : cohorts) {
      j["correlations"][metric][cohort] = {{"r", c.r},
                                           {"r2", c.r2},
                                           {"slope", c.slope},
                                           {"intercept", c.intercept},
                                           {"n", c.n}};
    }
  }
  for (const auto& [metric, cohorts] : report.fisher) {
    for (const auto& [cohort, f] : cohorts) {
      j["fisher"][metric][cohort] = {{"z", f.z_stat}, {"p_two_sided", f.p_two_sided}};
    }
  }
  return j;
}

inline void write_report(const EvalReport& report, const fs::path& json_path) {
  data::Dataset::write_json(json_path, report_to_json(report));

  const fs::path stem = json_path.parent_path() / json_path.stem();
  {
    std::ofstream os(stem.string() + "_thresholds.csv", std::ios::trunc);
    os << "threshold,tp,fp,fn,precision,recall,f1\n";
    char line[256];
    for (std::size_t i = 0; i < report.curve.thresholds.size(); ++i) {
      std::snprintf(line, sizeof(line), "%.2f,%zu,%zu,%zu,%.6f,%.6f,%.6f\n",
                    report.curve.thresholds[i], report.curve.tp[i], report.curve.fp[i],
                    report.curve.fn[i], report.curve.precision[i], report.curve.recall[i],
                    report.curve.f1[i]);
      os << line;
    }
  }
  if (!report.subjects.empty()) {
    std::ofstream os(stem.string() + "_subjects.csv", std::ios::trunc);
    os << "subject_id,cohort,total_minutes,ref_density_per_min,det_density_per_min,"
          "ref_mean_duration_s,det_mean_duration_s\n";
    char line[512];
    for (const auto& row : report.subjects) {
      std::snprintf(line, sizeof(line), "%s,%s,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                    row.subject_id.c_str(), to_string(row.cohort).c_str(), row.total_minutes,
                    row.reference.density_per_min, row.detected.density_per_min,
                    row.reference.mean_duration_s.value_or(-1.0),
                    row.detected.mean_duration_s.value_or(-1.0));
      os << line;
    }
  }
}

// ---------------------------------------------------------------------------
// Split and training orchestration
// ---------------------------------------------------------------------------

// F1 at a 20% overlap threshold of `scorer_set` against `reference_set`,
// pooled over the segments of the given subjects. This is the candidate
// scoring rule for the median-split procedure.
inline double candidate_f1(const data::Dataset& ds, const data::AnnotationSet& reference,
                           const data::AnnotationSet& scorer,
                           const std::vector<std::string>& subjects, double theta = 0.2) {
  static const EventList kEmpty;
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& seg : ds.manifest().segments) {
    if (!std::binary_search(subjects.begin(), subjects.end(), seg.subject_id)) continue;
    auto r = reference.find(seg.id);
    auto d = scorer.find(seg.id);
    auto m = metrics::match_events(r == reference.end() ? kEmpty : r->second,
                                   d == scorer.end() ? kEmpty : d->second, theta);
    tp += m.tp;
    fp += m.fp;
    fn += m.fn;
  }
  return metrics::prf(tp, fp, fn).f1;
}

inline train::SplitResult run_split(const data::Dataset& ds, const std::string& scorer_name,
                                    const std::string& reference_name, std::uint64_t seed,
                                    std::size_t n_candidates = 25) {
  const auto reference = ds.load_annotations(reference_name);
  const auto scorer = ds.load_annotations(scorer_name);

  std::map<std::string, std::size_t> counts;
  for (const auto& seg : ds.manifest().segments) counts[seg.subject_id]++;
  std::vector<train::SubjectSegments> pool;
  for (const auto& s : ds.manifest().subjects)
    pool.push_back({s.id, s.cohort, counts[s.id]});

  return train::select_median_split(
      pool,
      [&](const std::vector<std::string>& subjects) {
        return candidate_f1(ds, reference, scorer, subjects);
      },
      seed, n_candidates);
}

inline void write_split(const train::SplitResult& split, const fs::path& path,
                        std::uint64_t seed) {
  nlohmann::json j;
  j["seed"] = seed;
  j["train"] = split.train_subjects;
  j["test"] = split.test_subjects;
  j["selected_candidate"] = split.selected;
  nlohmann::json cands = nlohmann::json::array();
  for (const auto& c : split.candidates)
    cands.push_back({{"score", c.score}, {"test_subjects", c.test_subjects}});
  j["candidates"] = std::move(cands);
  data::Dataset::write_json(path, j);
}

struct SplitFile {
  std::vector<std::string> train_subjects;
  std::vector<std::string> test_subjects;
};

inline SplitFile read_split(const fs::path& path) {
  nlohmann::json j = data::Dataset::read_json(path);
  SplitFile s;
  j.at("train").get_to(s.train_subjects);
  j.at("test").get_to(s.test_subjects);
  return s;
}

struct FoldOutcome {
  std::size_t fold = 0;
  double best_val_f1_bar = 0.0;
  std::size_t best_epoch = 0;
  bool diverged = false;
};

// K-fold training over the training subjects. Writes per-fold checkpoints
// (fold{f}.ckpt holds the best model, fold{f}_last.ckpt the final state with
// optimizer slots for resuming) and a history CSV per fold.
inline std::vector<FoldOutcome> run_training(const data::Dataset& ds,
                                             const std::vector<std::string>& train_subjects,
                                             const ArchConfig& arch, const train::TrainConfig& cfg,
                                             const fs::path& out_dir,
                                             const std::string& reference_name = "truth",
                                             bool resume = false) {
  if (cfg.folds < 2) throw ConfigError("training requires at least 2 folds");
  fs::create_directories(out_dir);
  {
    nlohmann::json j;
    j["arch"] = arch;
    j["train"] = cfg;
    data::Dataset::write_json(out_dir / "config.json", j);
  }
  const auto reference = ds.load_annotations(reference_name);

  std::map<std::string, std::size_t> counts;
  std::map<std::string, Cohort> cohorts;
  for (const auto& s : ds.manifest().subjects) cohorts[s.id] = s.cohort;
  for (const auto& seg : ds.manifest().segments) counts[seg.subject_id]++;
  std::vector<train::SubjectSegments> subjects;
  for (const auto& id : train_subjects) {
    if (!counts.count(id)) throw ConfigError("split references unknown subject " + id);
    subjects.push_back({id, cohorts.at(id), counts.at(id)});
  }
  auto folds = train::make_folds(subjects, cfg.folds, cfg.seed);

  std::vector<FoldOutcome> outcomes;
  for (std::size_t f = 0; f < cfg.folds; ++f) {
    std::vector<train::TrainExample> train_set;
    std::vector<train::ValExample> val_set;
    static const EventList kEmpty;
    for (const auto& seg : ds.manifest().segments) {
      auto fold_it = folds.find(seg.subject_id);
      if (fold_it == folds.end()) continue;
      auto samples = ds.load_samples(seg);
      auto r = reference.find(seg.id);
      const EventList& truth = r == reference.end() ? kEmpty : r->second;
      if (fold_it->second == f) {
        val_set.push_back({std::move(samples), truth, seg.fs});
      } else {
        auto mask = train::rasterize(truth, seg.fs, samples.size());
        train_set.push_back({std::move(samples), std::move(mask)});
      }
    }

    const fs::path best_path = out_dir / ("fold" + std::to_string(f) + ".ckpt");
    const fs::path last_path = out_dir / ("fold" + std::to_string(f) + "_last.ckpt");
    train::ResumeState resume_state;
    const bool resuming = resume && fs::exists(last_path) && fs::exists(best_path);
    if (resuming) {
      resume_state.last = load_model(last_path.string(), &resume_state.opt);
      resume_state.best = load_model(best_path.string());
      resume_state.last_epoch = static_cast<std::size_t>(resume_state.last.meta.epoch);
      resume_state.best_epoch = static_cast<std::size_t>(resume_state.best.meta.epoch);
      resume_state.best_val_f1_bar = resume_state.best.meta.best_val_f1_bar;
    }

    const fs::path history_path = out_dir / ("fold" + std::to_string(f) + "_history.csv");
    std::ofstream history(history_path, resuming ? std::ios::app : std::ios::trunc);
    if (!resuming) history << "epoch,loss,val_f1_bar\n";
    char line[128];
    auto result = train::train_fold(train_set, val_set, arch, cfg,
                                    [&](const train::HistoryRow& row) {
                                      std::snprintf(line, sizeof(line), "%zu,%.9g,%.9g\n",
                                                    row.epoch, row.loss, row.val_f1_bar);
                                      history << line;
                                      history.flush();
                                    },
                                    resuming ? &resume_state : nullptr);
    FoldOutcome outcome{f, result.best_val_f1_bar, result.best_epoch, result.diverged};
    outcomes.push_back(outcome);
    if (result.diverged) throw NumericError("fold " + std::to_string(f) + ": loss diverged");
    save_model(result.best, best_path.string());
    result.last.meta.epoch =
        result.history.empty() ? static_cast<std::int64_t>(resume_state.last_epoch)
                               : static_cast<std::int64_t>(result.history.back().epoch);
    result.last.meta.best_val_f1_bar = result.best_val_f1_bar;
    save_model(result.last, last_path.string(), &result.opt);
  }
  return outcomes;
}

}  // namespace sumo::pipeline
