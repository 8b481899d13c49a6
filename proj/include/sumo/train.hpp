#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "sumo/common.hpp"
#include "sumo/events.hpp"
#include "sumo/metrics.hpp"
#include "sumo/model.hpp"
#include "sumo/postproc.hpp"
#include "sumo/tensor.hpp"

namespace sumo::train {

struct TrainConfig {
  double learning_rate = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  std::size_t batch_size = 12;
  std::size_t patience_epochs = 300;
  std::size_t max_epochs = 800;
  std::size_t folds = 6;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0) || !(beta1 > 0.0 && beta1 < 1.0) ||
        !(beta2 > 0.0 && beta2 < 1.0) || !(eps_adam > 0.0))
      throw ConfigError("train config: optimizer constants out of range");
    if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("train config: max_epochs must be >= 1");
    if (patience_epochs > max_epochs)
      throw ConfigError("train config: patience must not exceed max_epochs");
    if (folds < 1) throw ConfigError("train config: folds must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"eps_adam", c.eps_adam},
                     {"batch_size", c.batch_size},
                     {"patience_epochs", c.patience_epochs},
                     {"max_epochs", c.max_epochs},
                     {"folds", c.folds},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  if (j.contains("learning_rate")) j.at("learning_rate").get_to(c.learning_rate);
  if (j.contains("beta1")) j.at("beta1").get_to(c.beta1);
  if (j.contains("beta2")) j.at("beta2").get_to(c.beta2);
  if (j.contains("eps_adam")) j.at("eps_adam").get_to(c.eps_adam);
  if (j.contains("batch_size")) j.at("batch_size").get_to(c.batch_size);
  if (j.contains("patience_epochs")) j.at("patience_epochs").get_to(c.patience_epochs);
  if (j.contains("max_epochs")) j.at("max_epochs").get_to(c.max_epochs);
  if (j.contains("folds")) j.at("folds").get_to(c.folds);
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
}

using LabelMask = std::vector<std::uint8_t>;

// Per-sample labels from an event list: sample t is spindle iff t/fs lies in
// [onset, onset + duration).
inline LabelMask rasterize(const EventList& events, double fs, std::size_t n_samples) {
  if (!is_valid_event_list(events)) throw ConfigError("rasterize: invalid event list");
  LabelMask mask(n_samples, 0);
  for (const auto& e : events) {
    double end = e.end_s() * fs;
    if (end > static_cast<double>(n_samples) + 1e-6)
      throw ConfigError("rasterize: event extends past the segment end");
    auto t0 = static_cast<std::size_t>(std::max(0.0, std::ceil(e.onset_s * fs - 1e-9)));
    auto t1 = static_cast<std::size_t>(std::ceil(end - 1e-9));
    t1 = std::min(t1, n_samples);
    for (std::size_t t = t0; t < t1; ++t) mask[t] = 1;
  }
  return mask;
}

template <typename T>
struct DiceResult {
  double loss = 0.0;
  Tensor<T> grad;  // with respect to the probabilities
};

// Generalized dice loss over a [B, 2, T] probability tensor and matching
// one-hot labels, with class weights 1/(sum r)^2 accumulated over the whole
// batch. The epsilon added to the weight denominators and to the ratio keeps
// empty-class batches finite while leaving perfect predictions at exactly 0
// and complete mismatches within 1e-6 of 1.
template <typename T>
DiceResult<T> generalized_dice_loss(const Tensor<T>& probs, const Tensor<T>& labels,
                                    double epsilon = 1e-12) {
  if (!probs.same_shape(labels) || probs.rank() != 3 || probs.dim(1) != 2)
    throw ShapeError("generalized dice loss expects matching [B, 2, T] tensors");
  const std::size_t B = probs.dim(0), n = probs.dim(2);

  double class_sum_r[2] = {0.0, 0.0};
  double class_sum_rp[2] = {0.0, 0.0};
  double class_sum_p[2] = {0.0, 0.0};
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t l = 0; l < 2; ++l) {
      const T* p = probs.row(b, l);
      const T* r = labels.row(b, l);
      for (std::size_t t = 0; t < n; ++t) {
        class_sum_r[l] += r[t];
        class_sum_p[l] += p[t];
        class_sum_rp[l] += static_cast<double>(r[t]) * p[t];
      }
    }
  }
  double w[2], intersection = 0.0, total = 0.0;
  for (std::size_t l = 0; l < 2; ++l) {
    w[l] = 1.0 / (class_sum_r[l] * class_sum_r[l] + epsilon);
    intersection += w[l] * class_sum_rp[l];
    total += w[l] * (class_sum_r[l] + class_sum_p[l]);
  }
  const double numer = 2.0 * intersection + epsilon;
  const double denom = total + epsilon;

  DiceResult<T> out;
  out.loss = 1.0 - numer / denom;
  out.grad = Tensor<T>(probs.shape());
  const double denom2 = denom * denom;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t l = 0; l < 2; ++l) {
      const T* r = labels.row(b, l);
      T* g = out.grad.row(b, l);
      for (std::size_t t = 0; t < n; ++t)
        g[t] = static_cast<T>(-(w[l] * (2.0 * r[t] * denom - numer)) / denom2);
    }
  }
  return out;
}

// One bias-corrected Adam update; t is the 1-based step index.
inline void adam_update(Tensor<float>& param, const Tensor<float>& grad, AdamTensorState& slot,
                        const TrainConfig& cfg, std::int64_t t) {
  if (t < 1) throw ConfigError("adam step index must be >= 1");
  if (!param.same_shape(grad)) throw ShapeError("adam: gradient shape mismatch");
  if (slot.m.numel() == 0) {
    slot.m = Tensor<float>(param.shape());
    slot.v = Tensor<float>(param.shape());
  }
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double g = grad[i];
    if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient");
    const double m = b1 * slot.m[i] + (1.0 - b1) * g;
    const double v = b2 * slot.v[i] + (1.0 - b2) * g * g;
    slot.m[i] = static_cast<float>(m);
    slot.v[i] = static_cast<float>(v);
    const double m_hat = m / corr1;
    const double v_hat = v / corr2;
    param[i] = static_cast<float>(param[i] -
                                  cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.eps_adam));
  }
}

inline void adam_step(Model<float>& model, const std::map<std::string, Tensor<float>>& grads,
                      OptimizerState& state, const TrainConfig& cfg) {
  const std::int64_t t = ++state.step;
  model.visit_params([&](const std::string& name, Tensor<float>& param, ParamKind kind) {
    if (kind != ParamKind::learnable) return;
    auto it = grads.find(name);
    if (it == grads.end()) throw ShapeError("adam: missing gradient for " + name);
    adam_update(param, it->second, state.slots[name], cfg, t);
  });
}

// ---------------------------------------------------------------------------
// Fold construction and test-set selection
// ---------------------------------------------------------------------------

struct SubjectSegments {
  std::string id;
  Cohort cohort = Cohort::younger;
  std::size_t segment_count = 0;
};

using FoldAssignment = std::map<std::string, std::size_t>;

// Subjects are dealt heaviest-first onto the lightest fold, with seeded
// shuffling inside equal segment counts; this spreads the ten-segment
// subjects round-robin and keeps per-fold segment totals balanced.
inline FoldAssignment make_folds(std::vector<SubjectSegments> subjects, std::size_t k,
                                 std::uint64_t seed) {
  if (k < 1) throw ConfigError("make_folds: fold count must be >= 1");
  if (subjects.size() < k) throw ConfigError("make_folds: fewer subjects than folds");
  Rng rng(seed);
  rng.shuffle(subjects);
  std::stable_sort(subjects.begin(), subjects.end(),
                   [](const SubjectSegments& a, const SubjectSegments& b) {
                     return a.segment_count > b.segment_count;
                   });
  std::vector<std::size_t> load(k, 0), members(k, 0);
  FoldAssignment out;
  for (const auto& s : subjects) {
    std::size_t best = 0;
    for (std::size_t f = 1; f < k; ++f) {
      if (load[f] < load[best] || (load[f] == load[best] && members[f] < members[best]))
        best = f;
    }
    out[s.id] = best;
    load[best] += s.segment_count;
    members[best] += 1;
  }
  return out;
}

struct SplitCandidate {
  std::vector<std::string> test_subjects;
  double score = 0.0;
};

struct SplitResult {
  std::vector<std::string> train_subjects;
  std::vector<std::string> test_subjects;
  std::vector<SplitCandidate> candidates;  // in draw order
  std::size_t selected = 0;                // index into candidates
};

// Draws `n_candidates` test sets (subjects with exactly
// `segments_per_test_subject` segments, `test_per_cohort` from each cohort),
// scores each with the supplied scorer, and keeps the candidate with the
// median score.
inline SplitResult select_median_split(
    const std::vector<SubjectSegments>& pool,
    const std::function<double(const std::vector<std::string>&)>& scorer, std::uint64_t seed,
    std::size_t n_candidates = 25, std::size_t test_per_cohort = 18,
    std::size_t segments_per_test_subject = 3) {
  if (n_candidates < 1) throw ConfigError("split: need at least one candidate");
  std::vector<std::string> younger, older;
  for (const auto& s : pool) {
    if (s.segment_count != segments_per_test_subject) continue;  // excludes ten-segment subjects
    (s.cohort == Cohort::younger ? younger : older).push_back(s.id);
  }
  std::sort(younger.begin(), younger.end());
  std::sort(older.begin(), older.end());
  if (younger.size() < test_per_cohort || older.size() < test_per_cohort)
    throw ConfigError("split: not enough eligible subjects per cohort");

  Rng rng(seed);
  SplitResult result;
  for (std::size_t c = 0; c < n_candidates; ++c) {
    auto y = younger, o = older;
    rng.shuffle(y);
    rng.shuffle(o);
    SplitCandidate cand;
    cand.test_subjects.assign(y.begin(), y.begin() + static_cast<long>(test_per_cohort));
    cand.test_subjects.insert(cand.test_subjects.end(), o.begin(),
                              o.begin() + static_cast<long>(test_per_cohort));
    std::sort(cand.test_subjects.begin(), cand.test_subjects.end());
    cand.score = scorer(cand.test_subjects);
    result.candidates.push_back(std::move(cand));
  }

  std::vector<std::size_t> order(n_candidates);
  for (std::size_t i = 0; i < n_candidates; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return result.candidates[a].score < result.candidates[b].score;
  });
  result.selected = order[(n_candidates - 1) / 2];

  const auto& test = result.candidates[result.selected].test_subjects;
  for (const auto& s : pool) {
    if (!std::binary_search(test.begin(), test.end(), s.id))
      result.train_subjects.push_back(s.id);
  }
  result.test_subjects = test;
  return result;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainExample {
  std::vector<float> samples;
  LabelMask mask;
};

struct ValExample {
  std::vector<float> samples;
  EventList truth;
  double fs = 100.0;
};

struct HistoryRow {
  std::size_t epoch = 0;
  double loss = 0.0;
  double val_f1_bar = 0.0;
};

struct TrainResult {
  Model<float> best;
  std::vector<HistoryRow> history;
  std::size_t best_epoch = 0;
  double best_val_f1_bar = 0.0;
  bool diverged = false;
  Model<float> last;   // state after the final epoch, for resuming
  OptimizerState opt;  // optimizer state matching `last`
};

// Snapshot from which training continues deterministically.
struct ResumeState {
  Model<float> last;
  OptimizerState opt;
  std::size_t last_epoch = 0;
  Model<float> best;
  double best_val_f1_bar = 0.0;
  std::size_t best_epoch = 0;
};

inline std::size_t steps_per_epoch(std::size_t n_examples, std::size_t batch_size) {
  return (n_examples + batch_size - 1) / batch_size;
}

// F1-bar of the model on held-out segments: eval-mode forward, event
// extraction with the architecture's smoothing width, counts pooled over
// segments.
inline double validation_f1_bar(Model<float>& model, const std::vector<ValExample>& val) {
  std::vector<EventList> detected(val.size());
  for (std::size_t i = 0; i < val.size(); ++i) {
    Tensor<float> x({1, 1, val[i].samples.size()});
    std::copy(val[i].samples.begin(), val[i].samples.end(), x.row(0, 0));
    Tensor<float> probs = forward(model, x, nn::Mode::eval);
    Tensor<float> flat({2, probs.dim(2)}, std::vector<float>(probs.vec()));
    detected[i] = postproc::extract_events(flat, model.arch.smoothing_width, val[i].fs);
  }
  std::vector<const EventList*> refs, dets;
  for (std::size_t i = 0; i < val.size(); ++i) {
    refs.push_back(&val[i].truth);
    dets.push_back(&detected[i]);
  }
  return metrics::f1_curve_and_bar(refs, dets).f1_bar;
}

// Minibatch SGD with Adam and early stopping on the validation F1-bar.
// Returns the parameters from the best validation epoch. Passing a
// ResumeState continues a previous run; the per-epoch shuffle is derived
// from (seed, epoch), so a resumed run replays the original schedule.
inline TrainResult train_fold(const std::vector<TrainExample>& train_set,
                              const std::vector<ValExample>& val_set, const ArchConfig& arch,
                              const TrainConfig& cfg,
                              const std::function<void(const HistoryRow&)>& on_epoch = {},
                              const ResumeState* resume = nullptr) {
  arch.validate();
  cfg.validate();
  if (train_set.empty() || val_set.empty())
    throw ConfigError("train_fold: training and validation sets must be nonempty");
  const std::size_t n_samples = train_set.front().samples.size();
  for (const auto& ex : train_set) {
    if (ex.samples.size() != n_samples || ex.mask.size() != n_samples)
      throw ConfigError("train_fold: all training segments must have equal length");
  }

  Model<float> model = resume ? resume->last : build_model<float>(arch, cfg.seed);
  OptimizerState opt = resume ? resume->opt : OptimizerState{};
  TrainResult result;
  result.best = resume ? resume->best : model;
  double best = resume ? resume->best_val_f1_bar : -1.0;
  std::size_t start_epoch = resume ? resume->last_epoch + 1 : 1;
  std::size_t since_improvement = resume ? resume->last_epoch - resume->best_epoch : 0;
  if (resume) {
    result.best_epoch = resume->best_epoch;
    result.best_val_f1_bar = resume->best_val_f1_bar;
  }

  for (std::size_t epoch = start_epoch; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffler(cfg.seed ^ (0x9e3779b97f4a7c15ULL * epoch));
    shuffler.shuffle(order);

    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t bsz = std::min(cfg.batch_size, order.size() - start);
      Tensor<float> x({bsz, 1, n_samples});
      Tensor<float> labels({bsz, 2, n_samples});
      for (std::size_t b = 0; b < bsz; ++b) {
        const auto& ex = train_set[order[start + b]];
        std::copy(ex.samples.begin(), ex.samples.end(), x.row(b, 0));
        float* l0 = labels.row(b, 0);
        float* l1 = labels.row(b, 1);
        for (std::size_t t = 0; t < n_samples; ++t) {
          l1[t] = static_cast<float>(ex.mask[t]);
          l0[t] = 1.0f - l1[t];
        }
      }
      ModelCache<float> cache;
      Tensor<float> probs = forward(model, x, nn::Mode::train, &cache);
      auto dice = generalized_dice_loss(probs, labels);
      if (!std::isfinite(dice.loss)) {
        result.diverged = true;
        result.last = std::move(model);
        result.opt = std::move(opt);
        return result;
      }
      loss_sum += dice.loss;
      ++n_batches;
      auto grads = backward(model, cache, dice.grad);
      adam_step(model, grads.grads, opt, cfg);
    }

    HistoryRow row;
    row.epoch = epoch;
    row.loss = loss_sum / static_cast<double>(n_batches);
    row.val_f1_bar = validation_f1_bar(model, val_set);
    result.history.push_back(row);
    if (on_epoch) on_epoch(row);

    if (row.val_f1_bar > best) {
      best = row.val_f1_bar;
      result.best = model;
      result.best_epoch = epoch;
      result.best_val_f1_bar = best;
      result.best.meta.epoch = static_cast<std::int64_t>(epoch);
      result.best.meta.best_val_f1_bar = best;
      since_improvement = 0;
    } else {
      ++since_improvement;
      if (since_improvement > cfg.patience_epochs) break;
    }
  }
  result.last = std::move(model);
  result.opt = std::move(opt);
  return result;
}

}  // namespace sumo::train
