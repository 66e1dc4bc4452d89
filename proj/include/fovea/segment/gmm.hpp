#pragma once

#include <Eigen/Dense>

#include <vector>

#include <json.hpp>

#include "fovea/oracle/demo.hpp"

namespace fovea::segment {

struct SpeedSample {
  double s = 0;  // meters per step
  int episode = 0;
  int step = 0;
};

struct GmmFit {
  double w1 = 0, w2 = 0;
  double mu1 = 0, sigma1 = 0;
  double mu2 = 0, sigma2 = 0;  // mu1 < mu2
  double log_likelihood = 0;
  double threshold = 0;
  bool low_separation = false;    // components overlap heavily
  bool threshold_fallback = false;  // no analytic root between the means
};

/// Euclidean step lengths between consecutive positions; n positions give
/// n-1 samples tagged with the episode id.
std::vector<SpeedSample> action_speed(const std::vector<Eigen::Vector3d>& traj,
                                      int episode_id = 0);

/// Per-step speeds for a recorded episode (positions plus the final pose).
std::vector<SpeedSample> episode_speeds(const oracle::EpisodeRecord& ep, int episode_id = 0);

/// Two-component 1-D EM, best of `restarts` quantile-seeded initializations.
/// The optional trace receives the winning run's per-iteration log-likelihood.
GmmFit fit_gmm2(const std::vector<double>& samples, int max_iters = 200, double tol = 1e-10,
                int restarts = 5, std::vector<double>* ll_trace = nullptr);
GmmFit fit_gmm2(const std::vector<SpeedSample>& samples, int max_iters = 200, double tol = 1e-10,
                int restarts = 5, std::vector<double>* ll_trace = nullptr);

/// Crossing point of the two weighted component densities inside (mu1, mu2).
/// Falls back to the mixture-density valley when no root lies between the
/// means; `fallback` reports which branch produced the value.
double gaussian_intersection(const GmmFit& fit, bool* fallback = nullptr);

enum class SpeedLabel { kSlow, kFast };

/// Slow iff s <= threshold (ties are slow).
std::vector<SpeedLabel> label_speeds(const std::vector<double>& speeds, double threshold);

/// Writes speed_class into every step of the episode.
void label_episode(oracle::EpisodeRecord& ep, double threshold);

int count_action_shifts(const std::vector<SpeedLabel>& labels);
int count_action_shifts(const oracle::EpisodeRecord& ep);

/// Fit summary, the five threshold candidates, and a histogram of the
/// samples for plotting.
nlohmann::json fit_report(const GmmFit& fit, const std::vector<double>& speeds, int hist_bins);

}  // namespace fovea::segment
