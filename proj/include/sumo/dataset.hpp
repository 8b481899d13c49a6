#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "sumo/common.hpp"
#include "sumo/events.hpp"

namespace sumo::data {

namespace fs = std::filesystem;

struct SubjectInfo {
  std::string id;
  Cohort cohort = Cohort::younger;
};

struct SegmentInfo {
  std::string id;
  std::string subject_id;
  std::string file;  // relative to the dataset root
  double duration_s = 0.0;
  double fs = 0.0;
};

struct Manifest {
  std::vector<SubjectInfo> subjects;
  std::vector<SegmentInfo> segments;

  const SubjectInfo& subject(const std::string& id) const {
    for (const auto& s : subjects)
      if (s.id == id) return s;
    throw FormatError("unknown subject: " + id);
  }
};

// An annotation set maps segment id -> sorted event list.
using AnnotationSet = std::map<std::string, EventList>;

inline void write_signal(const fs::path& path, const std::vector<float>& samples) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot write signal file: " + path.string());
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(samples.data()),
           static_cast<std::streamsize>(samples.size() * sizeof(float)));
  if (!os) throw FormatError("signal write failed: " + path.string());
}

inline std::vector<float> read_signal(const fs::path& path) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw FormatError("cannot read signal file: " + path.string());
  const std::streamsize bytes = is.tellg();
  if (bytes % 4 != 0) throw FormatError("signal file size not a multiple of 4: " + path.string());
  std::vector<float> samples(static_cast<std::size_t>(bytes / 4));
  is.seekg(0);
  if (!is.read(reinterpret_cast<char*>(samples.data()), bytes))
    throw FormatError("signal read failed: " + path.string());
  return samples;
}

class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(fs::path root) : root_(std::move(root)) {}

  static Dataset create(const fs::path& root) {
    fs::create_directories(root / "signals");
    fs::create_directories(root / "annotations");
    Dataset ds(root);
    return ds;
  }

  static Dataset open(const fs::path& root) {
    Dataset ds(root);
    ds.load_manifest();
    return ds;
  }

  const fs::path& root() const { return root_; }
  Manifest& manifest() { return manifest_; }
  const Manifest& manifest() const { return manifest_; }

  fs::path signal_path(const SegmentInfo& seg) const { return root_ / seg.file; }

  void add_segment(const SegmentInfo& info, const std::vector<float>& samples) {
    write_signal(root_ / info.file, samples);
    manifest_.segments.push_back(info);
  }

  std::vector<float> load_samples(const SegmentInfo& seg) const {
    auto samples = read_signal(root_ / seg.file);
    const auto expect = static_cast<std::size_t>(std::llround(seg.duration_s * seg.fs));
    if (samples.size() != expect)
      throw FormatError("segment " + seg.id + ": sample count " +
                        std::to_string(samples.size()) + " does not match duration*fs");
    return samples;
  }

  void save_manifest() const {
    nlohmann::json j;
    j["subjects"] = nlohmann::json::array();
    for (const auto& s : manifest_.subjects)
      j["subjects"].push_back({{"id", s.id}, {"cohort", to_string(s.cohort)}});
    j["segments"] = nlohmann::json::array();
    for (const auto& s : manifest_.segments)
      j["segments"].push_back({{"id", s.id},
                               {"subject_id", s.subject_id},
                               {"file", s.file},
                               {"duration_s", s.duration_s},
                               {"fs", s.fs}});
    write_json(root_ / "manifest.json", j);
  }

  void load_manifest() {
    nlohmann::json j = read_json(root_ / "manifest.json");
    manifest_ = Manifest{};
    for (const auto& s : j.at("subjects"))
      manifest_.subjects.push_back(
          {s.at("id").get<std::string>(), cohort_from_string(s.at("cohort"))});
    for (const auto& s : j.at("segments")) {
      SegmentInfo info;
      info.id = s.at("id").get<std::string>();
      info.subject_id = s.at("subject_id").get<std::string>();
      info.file = s.at("file").get<std::string>();
      info.duration_s = s.at("duration_s").get<double>();
      info.fs = s.at("fs").get<double>();
      manifest_.segments.push_back(std::move(info));
    }
  }

  // Checks the dataset invariants: files exist, counts match duration * fs,
  // annotations only reference known segments.
  void validate() const {
    std::map<std::string, bool> subject_ids;
    for (const auto& s : manifest_.subjects) subject_ids[s.id] = true;
    std::map<std::string, bool> segment_ids;
    for (const auto& seg : manifest_.segments) {
      if (!subject_ids.count(seg.subject_id))
        throw FormatError("segment " + seg.id + " references unknown subject " + seg.subject_id);
      if (!fs::exists(root_ / seg.file))
        throw FormatError("missing signal file for segment " + seg.id);
      load_samples(seg);  // checks the sample count
      segment_ids[seg.id] = true;
    }
    for (const auto& name : annotation_names()) {
      for (const auto& [seg_id, events] : load_annotations(name)) {
        if (!segment_ids.count(seg_id))
          throw FormatError("annotation set " + name + " references unknown segment " + seg_id);
        if (!is_valid_event_list(events))
          throw FormatError("annotation set " + name + " has invalid events in " + seg_id);
      }
    }
  }

  std::vector<std::string> annotation_names() const {
    std::vector<std::string> names;
    const fs::path dir = root_ / "annotations";
    if (!fs::exists(dir)) return names;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.path().extension() == ".json") names.push_back(entry.path().stem().string());
    }
    std::sort(names.begin(), names.end());
    return names;
  }

  bool has_annotations(const std::string& name) const {
    return fs::exists(root_ / "annotations" / (name + ".json"));
  }

  void save_annotations(const std::string& name, const AnnotationSet& set) const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& [seg_id, events] : set) {
      for (const auto& e : events)
        j.push_back({{"segment_id", seg_id}, {"onset_s", e.onset_s}, {"duration_s", e.duration_s}});
    }
    write_json(root_ / "annotations" / (name + ".json"), j);
  }

  AnnotationSet load_annotations(const std::string& name) const {
    const fs::path path = root_ / "annotations" / (name + ".json");
    if (!fs::exists(path)) throw FormatError("unknown annotation set: " + name);
    nlohmann::json j = read_json(path);
    AnnotationSet set;
    for (const auto& rec : j) {
      set[rec.at("segment_id").get<std::string>()].push_back(
          {rec.at("onset_s").get<double>(), rec.at("duration_s").get<double>()});
    }
    for (auto& [seg, events] : set) sort_events(events);
    return set;
  }

  static nlohmann::json read_json(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open " + path.string());
    try {
      return nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
  }

  static void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw FormatError("cannot write " + path.string());
    os << j.dump(2) << "\n";
    if (!os) throw FormatError("write failed: " + path.string());
  }

 private:
  fs::path root_;
  Manifest manifest_;
};

}  // namespace sumo::data
