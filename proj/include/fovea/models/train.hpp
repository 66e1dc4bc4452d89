#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fovea/models/bundle.hpp"
#include "fovea/oracle/dataset.hpp"

namespace fovea::models {

struct TrainConfig {
  float lr = 1e-4f;
  int batch = 64;
  int epochs = 30;
  int samples_per_epoch = 8192;  // per-epoch subsample cap; <= 0 means a full pass
  int val_samples = 2048;        // fixed validation subset cap; <= 0 means all
  bool l2_only_action = false;
  float bn_momentum = 0.1f;
  std::uint64_t seed = 0;
};

struct TrainResult {
  std::vector<double> train_curve;  // mean batch loss per epoch
  std::vector<double> val_curve;    // entry 0 is the untrained model, then one per epoch
  int best_epoch = 0;               // index into val_curve of the kept checkpoint
  double best_val = 0;
  std::string warning;
};

/// One demonstration step with its inputs already reduced to the network
/// geometry. Images are stored as packed 8-bit planes to keep 500-episode
/// caches within memory.
struct CachedStep {
  std::vector<std::uint8_t> periph;  // [6, ph, pw]
  std::vector<std::uint8_t> foveal;  // [6, fh, fw]
  std::array<float, 4> action{};     // dpos xyz, dyaw
  int grip_cmd = 0;                  // 0 open, 1 close
  std::array<float, 4> gaze{};       // left x,y then right x,y in pixels
  bool failure = false;
  int recovery_remaining = 0;
  int speed = 0;  // 0 slow, 1 fast
  int episode = 0;
};

struct FeatureCache {
  int full_w = 0, full_h = 0;
  int periph_w = 0, periph_h = 0;
  int fovea_w = 0, fovea_h = 0;
  int episode_count = 0;
  bool mono = false;
  std::vector<CachedStep> steps;
};

/// Reduces every step to peripheral and gaze-cropped tensors and attaches
/// speed labels from the given threshold. The foveal crop uses the
/// recorded gaze; mono duplicates the left frame and the left gaze into
/// the right channels, removing every disparity cue.
FeatureCache build_feature_cache(oracle::DatasetReader& reader, const FrameGeom& geom,
                                 double speed_threshold, bool mono);
FeatureCache build_feature_cache(const std::vector<oracle::EpisodeRecord>& episodes,
                                 const FrameGeom& geom, double speed_threshold, bool mono);

/// Step indices a component trains on, restricted to the given episodes.
/// Action nets exclude failure-marked steps; the recovery nets see only
/// recovery steps; the slow net's reach widens under the merged and
/// no-separation wirings.
std::vector<int> filter_steps(const FeatureCache& cache, Comp comp,
                              const std::vector<int>& episodes, const BundleOptions& opt);
std::string filter_description(Comp comp, const BundleOptions& opt);

/// Trains one component with rectified Adam and keeps the epoch checkpoint
/// with the lowest validation loss (the untrained model counts as epoch
/// 0). Throws if either split leaves the component's filter empty.
TrainResult train_component(PolicyBundle& bundle, Comp comp, const FeatureCache& cache,
                            const std::vector<int>& train_eps, const std::vector<int>& val_eps,
                            const TrainConfig& cfg);

void write_curve_csv(const std::string& path, const TrainResult& result);

}  // namespace fovea::models
