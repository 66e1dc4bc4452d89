#pragma once

#include <string>
#include <vector>

#include "fovea/models/arch.hpp"
#include "fovea/models/bundle.hpp"
#include "fovea/vision/foveation.hpp"

namespace fovea::eval {

long long conv_macs(const models::ConvShape& c);
long long dense_macs(long long in, long long out);

struct MacsLine {
  std::string name;
  long long macs = 0;
};

struct MacsReport {
  std::vector<MacsLine> nets;
  long long total = 0;
};

/// Analytic per-step multiply-accumulates over every network the wiring
/// consults. Convolutions and dense layers count; pooling, batch norm,
/// and the spatial softmax count as zero.
MacsReport count_macs(const models::ArchConfig& arch, const FrameGeom& geom,
                      const models::BundleOptions& opt = {});

std::string macs_csv(const MacsReport& report);

}  // namespace fovea::eval
