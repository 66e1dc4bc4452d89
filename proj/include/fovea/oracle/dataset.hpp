#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fovea/oracle/demo.hpp"

namespace fovea::oracle {

struct DatasetMeta {
  int format = 1;
  int image_w = 0;
  int image_h = 0;
  int episodes = 0;
  long long steps = 0;
  nlohmann::json extra;
};

/// Appends episodes as they are generated so a full corpus never has to sit
/// in memory: frames go to `frames.bin`, one JSON line per episode header and
/// per step to `manifest.jsonl`, counts to `meta.json` on finalize.
class DatasetWriter {
 public:
  DatasetWriter(const std::string& dir, int image_w, int image_h,
                nlohmann::json extra = nlohmann::json::object());
  ~DatasetWriter();

  void add_episode(const EpisodeRecord& ep);
  void finalize();

 private:
  std::string dir_;
  DatasetMeta meta_;
  std::ofstream manifest_;
  std::ofstream frames_;
  std::uint64_t frame_pos_ = 0;
  bool finalized_ = false;
};

class DatasetReader {
 public:
  explicit DatasetReader(const std::string& dir);

  const DatasetMeta& meta() const { return meta_; }
  int episode_count() const { return static_cast<int>(episodes_.size()); }
  long long total_steps() const;

  /// Episode with labels and actions but empty observation images.
  const EpisodeRecord& episode(int i) const;

  void load_frames(int episode, int step, Image& left, Image& right) const;

  /// Full episode including frames; prefer load_frames for bulk scans.
  EpisodeRecord load_episode(int i) const;

 private:
  DatasetMeta meta_;
  std::vector<EpisodeRecord> episodes_;
  std::vector<std::vector<std::pair<std::uint64_t, std::uint64_t>>> offsets_;
  std::string frames_path_;
  std::uint64_t frames_size_ = 0;
  mutable std::ifstream frames_;
};

void write_dataset(const std::vector<EpisodeRecord>& episodes, const std::string& dir,
                   int image_w, int image_h);
std::vector<EpisodeRecord> read_dataset(const std::string& dir);

/// Episode-level split: shuffles indices with the seed, takes round(ratio*n)
/// for train, returns both sides in ascending order.
std::pair<std::vector<int>, std::vector<int>> split_train_val(int n_episodes, double ratio,
                                                              std::uint64_t seed);
std::pair<std::vector<EpisodeRecord>, std::vector<EpisodeRecord>> split_train_val(
    const std::vector<EpisodeRecord>& episodes, double ratio, std::uint64_t seed);

}  // namespace fovea::oracle
