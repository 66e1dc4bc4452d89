#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fovea/models/train.hpp"
#include "fovea/oracle/demo.hpp"
#include "fovea/sim/render.hpp"
#include "fovea/sim/world.hpp"
#include "fovea/vision/foveation.hpp"

namespace fovea::config {

/// Everything the pipeline commands consume, with the stock defaults baked
/// in. A config file overrides fields by dotted key; the camera frame size
/// always tracks the geometry after finalize().
struct PipelineConfig {
  FrameGeom geom;
  sim::SimConfig sim;
  sim::CameraModel cam;
  oracle::OracleConfig oracle;
  models::ArchConfig arch;
  models::TrainConfig train;
  double split_ratio = 0.8;
  std::uint64_t split_seed = 17;
  int n_trials = 50;
  std::uint64_t trial_seed_base = 1000;
  std::uint64_t bundle_seed = 99;
  int ctrl_max_steps = 500;
  int success_grace = 5;
  int hist_bins = 40;
  std::uint64_t seed = 0;
};

struct KeyBinding {
  std::string key;
  std::string kind;  // integer, number, boolean, integer list
  std::string doc;
  std::function<std::string(const PipelineConfig&)> format;
  std::function<bool(PipelineConfig&, const std::string&)> assign;
};

/// Every config-file key, in help order.
const std::vector<KeyBinding>& key_bindings();

/// Applies `key = value` lines (# comments, blank lines allowed). Collects
/// every unknown key, unparsable value, and malformed line into one
/// single-line error; on any problem the config is left untouched.
void apply_text(PipelineConfig& cfg, const std::string& text, const std::string& origin);
void apply_file(PipelineConfig& cfg, const std::string& path);

/// Mirrors the frame size into the camera. Call once after all overrides.
void finalize(PipelineConfig& cfg);

/// Full key list with defaults and one-line docs, for --help.
std::string help_text();

/// The config as `key = value` lines; reapplying reproduces it exactly.
std::string dump(const PipelineConfig& cfg);

}  // namespace fovea::config
