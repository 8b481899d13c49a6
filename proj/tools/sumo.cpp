// sumo: synthetic-data generation, preprocessing, training, prediction, and
// evaluation for the spindle detection pipeline. Exit codes: 0 success,
// 2 usage/config error, 3 runtime/numerical failure.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "sumo/dataset.hpp"
#include "sumo/gradcheck.hpp"
#include "sumo/pipeline.hpp"

namespace {

sumo::ArchConfig load_arch(const std::string& path) {
  if (path.empty()) return sumo::ArchConfig{};
  auto j = sumo::data::Dataset::read_json(path);
  if (j.contains("arch")) return j["arch"].get<sumo::ArchConfig>();
  return j.get<sumo::ArchConfig>();
}

sumo::train::TrainConfig load_train_config(const std::string& path) {
  if (path.empty()) return sumo::train::TrainConfig{};
  auto j = sumo::data::Dataset::read_json(path);
  if (j.contains("train")) return j["train"].get<sumo::train::TrainConfig>();
  return j.get<sumo::train::TrainConfig>();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SUMO spindle detection pipeline"};
  app.require_subcommand(1);

  int threads = 0;
  app.add_option("--threads", threads, "worker thread count (default: SUMO_THREADS or cores)");

  // --- synth ---------------------------------------------------------------
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_config, synth_out;
  std::size_t n_subjects = 30, segments_per_subject = 3, ten_segment = 0, older = 0;
  std::uint64_t synth_seed = 0;
  synth_cmd->add_option("--config", synth_config, "synthesis config JSON");
  synth_cmd->add_option("--out", synth_out, "output dataset directory")->required();
  synth_cmd->add_option("--n-subjects", n_subjects, "number of younger-cohort subjects");
  synth_cmd->add_option("--older-subjects", older, "number of older-cohort subjects");
  synth_cmd->add_option("--segments-per-subject", segments_per_subject, "segments per subject");
  synth_cmd->add_option("--ten-segment-subjects", ten_segment,
                        "subjects given 10 segments (split across cohorts)");
  synth_cmd->add_option("--seed", synth_seed, "random seed");

  // --- preprocess ----------------------------------------------------------
  auto* prep_cmd = app.add_subcommand("preprocess", "band-pass, resample to 100 Hz, z-score");
  std::string prep_in, prep_out;
  int prep_order = 10;
  double prep_low = 0.3, prep_high = 30.0, prep_fs = 100.0;
  prep_cmd->add_option("--dataset", prep_in, "input dataset directory")->required();
  prep_cmd->add_option("--out", prep_out, "output dataset directory")->required();
  prep_cmd->add_option("--order", prep_order, "Butterworth prototype order");
  prep_cmd->add_option("--low-hz", prep_low, "pass band low edge");
  prep_cmd->add_option("--high-hz", prep_high, "pass band high edge");
  prep_cmd->add_option("--target-fs", prep_fs, "output sample rate");

  // --- split ---------------------------------------------------------------
  auto* split_cmd = app.add_subcommand("split", "median-scored train/test split");
  std::string split_ds, split_scorer, split_reference = "truth", split_out = "split.json";
  std::size_t split_candidates = 25;
  std::uint64_t split_seed = 0;
  split_cmd->add_option("--dataset", split_ds, "dataset directory")->required();
  split_cmd->add_option("--scorer", split_scorer, "annotation set scored per candidate")
      ->required();
  split_cmd->add_option("--reference", split_reference, "reference annotation set");
  split_cmd->add_option("--candidates", split_candidates, "number of candidate test sets");
  split_cmd->add_option("--seed", split_seed, "random seed");
  split_cmd->add_option("--out", split_out, "output split JSON path");

  // --- train ---------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "k-fold training on the train split");
  std::string train_ds, train_split, arch_path, traincfg_path, train_out = "run";
  std::string train_reference = "truth";
  bool train_resume = false;
  train_cmd->add_option("--dataset", train_ds, "dataset directory")->required();
  train_cmd->add_option("--split", train_split, "split JSON from the split command")->required();
  train_cmd->add_option("--arch-config", arch_path, "architecture JSON");
  train_cmd->add_option("--train-config", traincfg_path, "training config JSON");
  train_cmd->add_option("--out-dir", train_out, "run directory for checkpoints and history");
  train_cmd->add_option("--reference", train_reference, "annotation set used as labels");
  train_cmd->add_flag("--resume", train_resume, "continue from fold*_last.ckpt states");

  // --- predict ---------------------------------------------------------------
  auto* predict_cmd = app.add_subcommand("predict", "run a checkpoint over a dataset");
  std::string predict_model, predict_ds, predict_out;
  predict_cmd->add_option("--model", predict_model, "checkpoint path")->required();
  predict_cmd->add_option("--dataset", predict_ds, "dataset directory")->required();
  predict_cmd->add_option("--out", predict_out, "name of the annotation set to write")
      ->required();

  // --- eval ------------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "by-event and by-subject evaluation");
  std::string eval_ds, eval_reference, eval_out = "report.json";
  std::vector<std::string> eval_detected;
  bool eval_by_subject = false;
  eval_cmd->add_option("--dataset", eval_ds, "dataset directory")->required();
  eval_cmd->add_option("--reference", eval_reference, "reference annotation set")->required();
  eval_cmd
      ->add_option("--detected", eval_detected,
                   "detected annotation set (twice for a Fisher-z comparison)")
      ->required()
      ->expected(1, 2);
  eval_cmd->add_flag("--by-subject", eval_by_subject, "add per-subject statistics");
  eval_cmd->add_option("--out", eval_out, "report JSON path (CSV tables derive from it)");

  // --- gradcheck ---------------------------------------------------------------
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::uint64_t grad_seed = 20220913;
  grad_cmd->add_option("--seed", grad_seed, "random seed for the probe tensors");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage errors exit 2, --help exits 0
  }
  if (threads > 0) sumo::set_thread_count(threads);

  try {
    if (*synth_cmd) {
      sumo::synth::SynthConfig cfg;
      if (!synth_config.empty())
        cfg = sumo::data::Dataset::read_json(synth_config).get<sumo::synth::SynthConfig>();
      sumo::pipeline::SynthDatasetSpec spec;
      spec.younger_subjects = n_subjects;
      spec.older_subjects = older;
      spec.segments_per_subject = segments_per_subject;
      spec.ten_segment_subjects = ten_segment;
      spec.seed = synth_seed;
      auto ds = sumo::pipeline::synth_dataset(cfg, spec, synth_out);
      std::cout << "wrote " << ds.manifest().segments.size() << " segments for "
                << ds.manifest().subjects.size() << " subjects to " << synth_out << "\n";
    } else if (*prep_cmd) {
      auto in = sumo::data::Dataset::open(prep_in);
      auto out =
          sumo::pipeline::preprocess_dataset(in, prep_out, prep_order, prep_low, prep_high, prep_fs);
      std::cout << "preprocessed " << out.manifest().segments.size() << " segments to "
                << prep_out << "\n";
    } else if (*split_cmd) {
      auto ds = sumo::data::Dataset::open(split_ds);
      auto split = sumo::pipeline::run_split(ds, split_scorer, split_reference, split_seed,
                                             split_candidates);
      sumo::pipeline::write_split(split, split_out, split_seed);
      std::printf("%-10s %s\n", "candidate", "score");
      for (std::size_t i = 0; i < split.candidates.size(); ++i)
        std::printf("%-10zu %.6f%s\n", i, split.candidates[i].score,
                    i == split.selected ? "  <- selected (median)" : "");
      std::cout << "split written to " << split_out << "\n";
    } else if (*train_cmd) {
      auto ds = sumo::data::Dataset::open(train_ds);
      auto split = sumo::pipeline::read_split(train_split);
      auto arch = load_arch(arch_path);
      auto cfg = load_train_config(traincfg_path);
      auto outcomes =
          sumo::pipeline::run_training(ds, split.train_subjects, arch, cfg, train_out,
                                       train_reference, train_resume);
      for (const auto& o : outcomes)
        std::printf("fold %zu: best val F1-bar %.4f at epoch %zu\n", o.fold, o.best_val_f1_bar,
                    o.best_epoch);
    } else if (*predict_cmd) {
      auto model = sumo::load_model(predict_model);
      auto ds = sumo::data::Dataset::open(predict_ds);
      sumo::pipeline::predict_dataset(model, ds, predict_out);
      std::cout << "annotation set '" << predict_out << "' written\n";
    } else if (*eval_cmd) {
      auto ds = sumo::data::Dataset::open(eval_ds);
      auto report = sumo::pipeline::evaluate(ds, eval_reference, eval_detected[0],
                                             eval_by_subject);
      if (eval_detected.size() == 2) {
        auto other = sumo::pipeline::evaluate(ds, eval_reference, eval_detected[1], true);
        sumo::pipeline::compare_detectors(report, other);
      }
      sumo::pipeline::write_report(report, eval_out);
      std::printf("F1(0.20) = %.4f  F1-bar = %.4f\n", report.curve.f1.at(3), report.curve.f1_bar);
      std::cout << "report written to " << eval_out << "\n";
    } else if (*grad_cmd) {
      auto report = sumo::gradcheck::run_suite(grad_seed);
      std::printf("%-24s %-12s %s\n", "check", "max rel err", "status");
      for (const auto& e : report.entries)
        std::printf("%-24s %-12.3e %s\n", e.name.c_str(), e.max_rel_err,
                    e.pass ? "pass" : "FAIL");
      if (!report.pass) {
        std::cerr << "gradient verification failed\n";
        return 3;
      }
    }
  } catch (const sumo::NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
