#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "sumo/dataset.hpp"

using namespace sumo;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / "sumo_dataset_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

data::Dataset make_small_dataset(const fs::path& root) {
  auto ds = data::Dataset::create(root);
  ds.manifest().subjects = {{"y000", Cohort::younger}, {"o000", Cohort::older}};
  Rng rng(1);
  for (const std::string& subject : {"y000", "o000"}) {
    for (int g = 0; g < 2; ++g) {
      data::SegmentInfo info;
      info.id = subject + "_seg" + std::to_string(g);
      info.subject_id = subject;
      info.file = "signals/" + info.id + ".f32";
      info.duration_s = 5.0;
      info.fs = 100.0;
      std::vector<float> samples(500);
      for (auto& v : samples) v = static_cast<float>(rng.normal());
      ds.add_segment(info, samples);
    }
  }
  ds.save_manifest();
  data::AnnotationSet truth;
  truth["y000_seg0"] = {{0.5, 0.6}, {2.0, 1.0}};
  truth["o000_seg1"] = {{1.25, 0.5}};
  ds.save_annotations("truth", truth);
  return ds;
}

}  // namespace

TEST(Dataset, ManifestRoundTrip) {
  auto root = fresh_dir("manifest");
  make_small_dataset(root);
  auto loaded = data::Dataset::open(root);
  ASSERT_EQ(loaded.manifest().subjects.size(), 2u);
  EXPECT_EQ(loaded.manifest().subjects[0].id, "y000");
  EXPECT_EQ(loaded.manifest().subjects[1].cohort, Cohort::older);
  ASSERT_EQ(loaded.manifest().segments.size(), 4u);
  EXPECT_EQ(loaded.manifest().segments[0].id, "y000_seg0");
  EXPECT_DOUBLE_EQ(loaded.manifest().segments[0].duration_s, 5.0);
  EXPECT_NO_THROW(loaded.validate());
}

TEST(Dataset, SignalRoundTripIsExact) {
  auto root = fresh_dir("signals");
  std::vector<float> samples{1.5f, -2.25f, 0.0f, 3.14159f};
  data::write_signal(root / "x.f32", samples);
  EXPECT_EQ(data::read_signal(root / "x.f32"), samples);
  EXPECT_THROW(data::read_signal(root / "missing.f32"), FormatError);
}

TEST(Dataset, SampleCountValidated) {
  auto root = fresh_dir("counts");
  auto ds = make_small_dataset(root);
  auto loaded = data::Dataset::open(root);
  // truncate one signal file
  auto path = root / "signals" / "y000_seg0.f32";
  fs::resize_file(path, 100);
  EXPECT_THROW(loaded.load_samples(loaded.manifest().segments[0]), FormatError);
  EXPECT_THROW(loaded.validate(), FormatError);
}

TEST(Dataset, AnnotationsRoundTripSorted) {
  auto root = fresh_dir("annotations");
  auto ds = make_small_dataset(root);
  data::AnnotationSet set;
  set["y000_seg0"] = {{3.0, 0.5}, {0.125, 0.625}};  // unsorted on purpose
  ds.save_annotations("detector", set);
  auto loaded = data::Dataset::open(root);
  auto got = loaded.load_annotations("detector");
  ASSERT_EQ(got.count("y000_seg0"), 1u);
  const auto& events = got["y000_seg0"];
  ASSERT_EQ(events.size(), 2u);
  EXPECT_DOUBLE_EQ(events[0].onset_s, 0.125);
  EXPECT_DOUBLE_EQ(events[0].duration_s, 0.625);
  EXPECT_DOUBLE_EQ(events[1].onset_s, 3.0);

  auto names = loaded.annotation_names();
  ASSERT_EQ(names.size(), 2u);
  EXPECT_EQ(names[0], "detector");
  EXPECT_EQ(names[1], "truth");
  EXPECT_TRUE(loaded.has_annotations("truth"));
  EXPECT_FALSE(loaded.has_annotations("nope"));
  EXPECT_THROW(loaded.load_annotations("nope"), FormatError);
}

TEST(Dataset, ValidateCatchesBrokenReferences) {
  auto root = fresh_dir("refs");
  auto ds = make_small_dataset(root);
  {
    auto broken = data::Dataset::open(root);
    data::AnnotationSet bad;
    bad["ghost_segment"] = {{0.0, 1.0}};
    broken.save_annotations("bad", bad);
    EXPECT_THROW(broken.validate(), FormatError);
    fs::remove(root / "annotations" / "bad.json");
  }
  {
    auto broken = data::Dataset::open(root);
    data::AnnotationSet overlapping;
    overlapping["y000_seg0"] = {{0.0, 2.0}, {1.0, 2.0}};
    broken.save_annotations("bad", overlapping);
    EXPECT_THROW(broken.validate(), FormatError);
    fs::remove(root / "annotations" / "bad.json");
  }
  {
    fs::remove(root / "signals" / "o000_seg1.f32");
    auto broken = data::Dataset::open(root);
    EXPECT_THROW(broken.validate(), FormatError);
  }
}

TEST(Dataset, UnknownSubjectRejected) {
  auto root = fresh_dir("subject");
  auto ds = make_small_dataset(root);
  auto j = data::Dataset::read_json(root / "manifest.json");
  j["segments"][0]["subject_id"] = "stranger";
  data::Dataset::write_json(root / "manifest.json", j);
  auto broken = data::Dataset::open(root);
  EXPECT_THROW(broken.validate(), FormatError);
}

TEST(Dataset, MissingManifestRejected) {
  auto root = fresh_dir("empty");
  EXPECT_THROW(data::Dataset::open(root), FormatError);
}
