// End-to-end tests of the sumo binary: the SUMO_CLI environment variable
// (set by CTest) points at the built executable.

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sumo/dataset.hpp"

namespace fs = std::filesystem;

namespace {

std::string cli_path() {
  const char* env = std::getenv("SUMO_CLI");
  if (!env) throw std::runtime_error("SUMO_CLI not set (run through ctest)");
  return env;
}

fs::path work_dir() {
  static fs::path dir = [] {
    auto d = fs::temp_directory_path() / "sumo_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run_cli(const std::string& args) {
  const std::string cmd = cli_path() + " " + args + " > " +
                          (work_dir() / "stdout.txt").string() + " 2>&1";
  int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string last_stdout() {
  std::ifstream is(work_dir() / "stdout.txt");
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

bool same_tree(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> rel_a, rel_b;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) rel_a.push_back(fs::relative(e.path(), a));
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) rel_b.push_back(fs::relative(e.path(), b));
  std::sort(rel_a.begin(), rel_a.end());
  std::sort(rel_b.begin(), rel_b.end());
  if (rel_a != rel_b) return false;
  for (const auto& rel : rel_a)
    if (slurp(a / rel) != slurp(b / rel)) return false;
  return true;
}

// short segments and a small model keep the CLI round trips fast
void write_fast_configs() {
  std::ofstream synth(work_dir() / "synth.json");
  synth << R"({"segment_s": 20.0, "rate_per_min": 6.0, "snr": 8.0})";
  std::ofstream arch(work_dir() / "arch.json");
  arch << R"({"levels": 2, "pool_widths": [4], "channels": [4, 8],
              "kernel_size": 7, "dilations": [1, 1], "smoothing_width": 11})";
  std::ofstream train(work_dir() / "train.json");
  train << R"({"batch_size": 4, "max_epochs": 2, "patience_epochs": 2,
               "folds": 2, "seed": 5})";
}

}  // namespace

TEST(Cli, SynthWritesValidDataset) {
  write_fast_configs();
  const auto out = work_dir() / "ds";
  const std::string args = "synth --config " + (work_dir() / "synth.json").string() +
                           " --out " + out.string() +
                           " --n-subjects 8 --older-subjects 4 --segments-per-subject 3 "
                           "--ten-segment-subjects 2 --seed 1";
  ASSERT_EQ(run_cli(args), 0) << last_stdout();
  auto ds = sumo::data::Dataset::open(out);
  EXPECT_NO_THROW(ds.validate());
  EXPECT_EQ(ds.manifest().subjects.size(), 12u);
  // 2 ten-segment subjects (one per cohort) + 10 three-segment subjects
  EXPECT_EQ(ds.manifest().segments.size(), 2 * 10 + 10 * 3u);
  EXPECT_TRUE(ds.has_annotations("truth"));
}

TEST(Cli, SynthDeterministicAcrossRuns) {
  write_fast_configs();
  const auto a = work_dir() / "det_a";
  const auto b = work_dir() / "det_b";
  const std::string base = "synth --config " + (work_dir() / "synth.json").string() +
                           " --n-subjects 4 --segments-per-subject 2 --seed 9 --out ";
  ASSERT_EQ(run_cli(base + a.string()), 0);
  ASSERT_EQ(run_cli(base + b.string()), 0);
  EXPECT_TRUE(same_tree(a, b));
}

TEST(Cli, BadConfigExitsTwo) {
  std::ofstream bad(work_dir() / "bad_synth.json");
  bad << R"({"rate_per_min": -3.0})";
  bad.close();
  const std::string args = "synth --config " + (work_dir() / "bad_synth.json").string() +
                           " --out " + (work_dir() / "bad_ds").string();
  EXPECT_EQ(run_cli(args), 2);
  EXPECT_EQ(run_cli("synth"), 2);      // missing required --out
  EXPECT_EQ(run_cli("nonsense"), 2);   // unknown subcommand
  EXPECT_EQ(run_cli("--help"), 0);
}

TEST(Cli, PreprocessResamplesTo100Hz) {
  write_fast_configs();
  const auto raw = work_dir() / "raw256";
  std::ofstream cfg(work_dir() / "synth256.json");
  cfg << R"({"fs": 256.0, "segment_s": 20.0, "rate_per_min": 6.0, "snr": 8.0})";
  cfg.close();
  ASSERT_EQ(run_cli("synth --config " + (work_dir() / "synth256.json").string() + " --out " +
                    raw.string() + " --n-subjects 2 --segments-per-subject 2 --seed 3"),
            0);
  const auto prep = work_dir() / "prep100";
  ASSERT_EQ(run_cli("preprocess --dataset " + raw.string() + " --out " + prep.string()), 0)
      << last_stdout();
  auto ds = sumo::data::Dataset::open(prep);
  EXPECT_NO_THROW(ds.validate());
  for (const auto& seg : ds.manifest().segments) {
    EXPECT_DOUBLE_EQ(seg.fs, 100.0);
    EXPECT_EQ(ds.load_samples(seg).size(), 2000u);
  }
  EXPECT_TRUE(ds.has_annotations("truth"));  // annotations carried over
}

TEST(Cli, FullPipelineRoundTrip) {
  write_fast_configs();
  const auto ds_dir = work_dir() / "pipeline_ds";
  ASSERT_EQ(run_cli("synth --config " + (work_dir() / "synth.json").string() + " --out " +
                    ds_dir.string() +
                    " --n-subjects 40 --older-subjects 40 --segments-per-subject 3 --seed 2"),
            0);

  // a jittered copy of the truth stands in for a baseline detector
  {
    auto ds = sumo::data::Dataset::open(ds_dir);
    auto truth = ds.load_annotations("truth");
    sumo::data::AnnotationSet scorer;
    sumo::Rng rng(4);
    for (const auto& [seg, events] : truth) {
      sumo::EventList copy = events;
      if (!copy.empty() && rng.uniform() < 0.3) copy.erase(copy.begin());
      scorer[seg] = copy;
    }
    ds.save_annotations("baseline", scorer);
  }

  const auto split_path = work_dir() / "split.json";
  ASSERT_EQ(run_cli("split --dataset " + ds_dir.string() +
                    " --scorer baseline --reference truth --candidates 25 --seed 11 " +
                    "--out " + split_path.string()),
            0)
      << last_stdout();
  EXPECT_NE(last_stdout().find("selected (median)"), std::string::npos);
  {
    auto j = sumo::data::Dataset::read_json(split_path);
    EXPECT_EQ(j["candidates"].size(), 25u);
    EXPECT_EQ(j["test"].size(), 36u);  // 18 + 18
  }

  const auto run_dir = work_dir() / "run";
  ASSERT_EQ(run_cli("train --dataset " + ds_dir.string() + " --split " + split_path.string() +
                    " --arch-config " + (work_dir() / "arch.json").string() +
                    " --train-config " + (work_dir() / "train.json").string() + " --out-dir " +
                    run_dir.string()),
            0)
      << last_stdout();
  EXPECT_TRUE(fs::exists(run_dir / "fold0.ckpt"));
  EXPECT_TRUE(fs::exists(run_dir / "fold1.ckpt"));
  EXPECT_TRUE(fs::exists(run_dir / "fold0_history.csv"));
  EXPECT_TRUE(fs::exists(run_dir / "config.json"));

  ASSERT_EQ(run_cli("predict --model " + (run_dir / "fold0.ckpt").string() + " --dataset " +
                    ds_dir.string() + " --out unet"),
            0)
      << last_stdout();
  auto ds = sumo::data::Dataset::open(ds_dir);
  EXPECT_TRUE(ds.has_annotations("unet"));

  const auto report_path = work_dir() / "report.json";
  ASSERT_EQ(run_cli("eval --dataset " + ds_dir.string() +
                    " --reference truth --detected unet --detected baseline --by-subject " +
                    "--out " + report_path.string()),
            0)
      << last_stdout();
  auto report = sumo::data::Dataset::read_json(report_path);
  EXPECT_EQ(report["thresholds"].size(), 20u);
  EXPECT_TRUE(report.contains("by_subject"));
  EXPECT_TRUE(report.contains("correlations"));
  EXPECT_TRUE(report.contains("fisher"));
  // F1 decreases monotonically with the overlap threshold
  for (std::size_t i = 1; i < report["f1"].size(); ++i)
    EXPECT_LE(report["f1"][i].get<double>(), report["f1"][i - 1].get<double>() + 1e-12);
  EXPECT_TRUE(fs::exists(work_dir() / "report_thresholds.csv"));
  EXPECT_TRUE(fs::exists(work_dir() / "report_subjects.csv"));

  // reference against itself scores 1 everywhere
  const auto self_path = work_dir() / "self.json";
  ASSERT_EQ(run_cli("eval --dataset " + ds_dir.string() +
                    " --reference truth --detected truth --out " + self_path.string()),
            0);
  auto self = sumo::data::Dataset::read_json(self_path);
  for (const auto& f : self["f1"]) EXPECT_DOUBLE_EQ(f.get<double>(), 1.0);
  EXPECT_DOUBLE_EQ(self["f1_bar"].get<double>(), 1.0);

  // prediction, evaluation and training are deterministic across re-runs
  const auto report2 = work_dir() / "report2.json";
  ASSERT_EQ(run_cli("predict --model " + (run_dir / "fold0.ckpt").string() + " --dataset " +
                    ds_dir.string() + " --out unet2"),
            0);
  EXPECT_EQ(slurp(ds_dir / "annotations" / "unet.json"),
            slurp(ds_dir / "annotations" / "unet2.json"));
  ASSERT_EQ(run_cli("eval --dataset " + ds_dir.string() +
                    " --reference truth --detected unet --detected baseline --by-subject " +
                    "--out " + report2.string()),
            0);
  EXPECT_EQ(slurp(report_path), slurp(report2));

  const auto run_dir2 = work_dir() / "run2";
  ASSERT_EQ(run_cli("train --dataset " + ds_dir.string() + " --split " + split_path.string() +
                    " --arch-config " + (work_dir() / "arch.json").string() +
                    " --train-config " + (work_dir() / "train.json").string() + " --out-dir " +
                    run_dir2.string()),
            0);
  EXPECT_EQ(slurp(run_dir / "fold0.ckpt"), slurp(run_dir2 / "fold0.ckpt"));
  EXPECT_EQ(slurp(run_dir / "fold0_history.csv"), slurp(run_dir2 / "fold0_history.csv"));

  // --resume continues from fold*_last.ckpt and extends the history
  {
    std::ofstream longer(work_dir() / "train_longer.json");
    longer << R"({"batch_size": 4, "max_epochs": 3, "patience_epochs": 3,
                  "folds": 2, "seed": 5})";
    longer.close();
    ASSERT_EQ(run_cli("train --dataset " + ds_dir.string() + " --split " +
                      split_path.string() + " --arch-config " +
                      (work_dir() / "arch.json").string() + " --train-config " +
                      (work_dir() / "train_longer.json").string() + " --out-dir " +
                      run_dir.string() + " --resume"),
              0)
        << last_stdout();
    // 2 epochs from the first run + 1 resumed epoch
    std::ifstream history(run_dir / "fold0_history.csv");
    std::string line;
    std::size_t rows = 0;
    while (std::getline(history, line))
      if (!line.empty() && line.find("epoch") == std::string::npos) ++rows;
    EXPECT_EQ(rows, 3u);
  }

  // corrupted checkpoint is a config-level failure (exit 2)
  const auto broken = work_dir() / "broken.ckpt";
  {
    std::ofstream os(broken, std::ios::binary);
    os << "SUMOgarbage";
  }
  EXPECT_EQ(run_cli("predict --model " + broken.string() + " --dataset " + ds_dir.string() +
                    " --out junk"),
            2);

  // unknown annotation set
  EXPECT_EQ(run_cli("eval --dataset " + ds_dir.string() +
                    " --reference truth --detected missing_set --out " +
                    (work_dir() / "x.json").string()),
            2);

  // missing split file
  EXPECT_EQ(run_cli("train --dataset " + ds_dir.string() + " --split " +
                    (work_dir() / "no_such_split.json").string() + " --out-dir " +
                    (work_dir() / "no_run").string()),
            2);

  // empty dataset: predict succeeds with an empty annotation set
  {
    const auto empty_dir = work_dir() / "empty_ds";
    auto empty = sumo::data::Dataset::create(empty_dir);
    empty.save_manifest();
    ASSERT_EQ(run_cli("predict --model " + (run_dir / "fold0.ckpt").string() + " --dataset " +
                      empty_dir.string() + " --out unet"),
              0);
    auto set = sumo::data::Dataset::open(empty_dir).load_annotations("unet");
    EXPECT_TRUE(set.empty());
  }

  // missing scorer set for split
  EXPECT_EQ(run_cli("split --dataset " + ds_dir.string() + " --scorer missing_set --out " +
                    (work_dir() / "y.json").string()),
            2);
}

TEST(Cli, GradcheckVerbPasses) {
  ASSERT_EQ(run_cli("gradcheck"), 0) << last_stdout();
  auto text = last_stdout();
  EXPECT_NE(text.find("pass"), std::string::npos);
  EXPECT_EQ(text.find("FAIL"), std::string::npos);
}
