#include "fovea/segment/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace fovea::segment {

namespace {

constexpr double kSigmaFloor = 1e-7;
constexpr double kLog2Pi = 1.8378770664093453;

double log_normal(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return -0.5 * kLog2Pi - std::log(sigma) - 0.5 * z * z;
}

double quantile(std::vector<double> sorted, double q) {
  const double pos = q * (static_cast<double>(sorted.size()) - 1);
  const size_t lo = static_cast<size_t>(pos);
  const size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double t = pos - static_cast<double>(lo);
  return sorted[lo] * (1 - t) + sorted[hi] * t;
}

struct EmRun {
  GmmFit fit;
  std::vector<double> trace;
};

EmRun run_em(const std::vector<double>& x, double mu1, double mu2, double sigma, int max_iters,
             double tol) {
  const size_t n = x.size();
  double w1 = 0.5, w2 = 0.5;
  double s1 = sigma, s2 = sigma;
  EmRun out;
  std::vector<double> r1(n);
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iters; ++it) {
    double ll = 0;
    for (size_t i = 0; i < n; ++i) {
      const double l1 = std::log(w1) + log_normal(x[i], mu1, s1);
      const double l2 = std::log(w2) + log_normal(x[i], mu2, s2);
      const double m = std::max(l1, l2);
      const double denom = m + std::log(std::exp(l1 - m) + std::exp(l2 - m));
      r1[i] = std::exp(l1 - denom);
      ll += denom;
    }
    out.trace.push_back(ll);

    double n1 = 0, sx1 = 0, sx2 = 0;
    for (size_t i = 0; i < n; ++i) {
      n1 += r1[i];
      sx1 += r1[i] * x[i];
      sx2 += (1 - r1[i]) * x[i];
    }
    const double n2 = static_cast<double>(n) - n1;
    n1 = std::max(n1, 1e-12);
    const double n2c = std::max(n2, 1e-12);
    mu1 = sx1 / n1;
    mu2 = sx2 / n2c;
    double v1 = 0, v2 = 0;
    for (size_t i = 0; i < n; ++i) {
      v1 += r1[i] * (x[i] - mu1) * (x[i] - mu1);
      v2 += (1 - r1[i]) * (x[i] - mu2) * (x[i] - mu2);
    }
    s1 = std::max(std::sqrt(v1 / n1), kSigmaFloor);
    s2 = std::max(std::sqrt(v2 / n2c), kSigmaFloor);
    w1 = std::clamp(n1 / static_cast<double>(n), 1e-9, 1 - 1e-9);
    w2 = 1 - w1;

    if (ll - prev_ll < tol && it > 0) break;
    prev_ll = ll;
  }

  // final likelihood under the last parameter update
  double ll = 0;
  for (size_t i = 0; i < n; ++i) {
    const double l1 = std::log(w1) + log_normal(x[i], mu1, s1);
    const double l2 = std::log(w2) + log_normal(x[i], mu2, s2);
    const double m = std::max(l1, l2);
    ll += m + std::log(std::exp(l1 - m) + std::exp(l2 - m));
  }
  out.trace.push_back(ll);

  GmmFit& f = out.fit;
  if (mu1 <= mu2) {
    f.w1 = w1; f.mu1 = mu1; f.sigma1 = s1;
    f.w2 = w2; f.mu2 = mu2; f.sigma2 = s2;
  } else {
    f.w1 = w2; f.mu1 = mu2; f.sigma1 = s2;
    f.w2 = w1; f.mu2 = mu1; f.sigma2 = s1;
  }
  f.log_likelihood = ll;
  return out;
}

double mixture_log_density(const GmmFit& f, double x) {
  const double l1 = std::log(f.w1) + log_normal(x, f.mu1, f.sigma1);
  const double l2 = std::log(f.w2) + log_normal(x, f.mu2, f.sigma2);
  const double m = std::max(l1, l2);
  return m + std::log(std::exp(l1 - m) + std::exp(l2 - m));
}

double density_valley(const GmmFit& f) {
  const int grid = 2048;
  const double step = (f.mu2 - f.mu1) / grid;
  double best_x = f.mu1 + step, best_v = std::numeric_limits<double>::infinity();
  for (int i = 1; i < grid; ++i) {
    const double x = f.mu1 + (f.mu2 - f.mu1) * i / grid;
    const double v = mixture_log_density(f, x);
    if (v < best_v) {
      best_v = v;
      best_x = x;
    }
  }
  // ternary-search refinement around the coarse minimum; the window stays one
  // grid step inside (mu1, mu2) so a monotone density cannot pull the
  // threshold onto a mean
  double lo = std::max(f.mu1 + step, best_x - step);
  double hi = std::min(f.mu2 - step, best_x + step);
  for (int it = 0; it < 80; ++it) {
    const double m1 = lo + (hi - lo) / 3, m2 = hi - (hi - lo) / 3;
    if (mixture_log_density(f, m1) < mixture_log_density(f, m2)) hi = m2;
    else lo = m1;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

std::vector<SpeedSample> action_speed(const std::vector<Eigen::Vector3d>& traj, int episode_id) {
  std::vector<SpeedSample> out;
  if (traj.size() < 2) return out;
  out.reserve(traj.size() - 1);
  for (size_t t = 0; t + 1 < traj.size(); ++t) {
    const double s = (traj[t + 1] - traj[t]).norm();
    if (!std::isfinite(s)) throw std::invalid_argument("action_speed: non-finite trajectory");
    out.push_back({s, episode_id, static_cast<int>(t)});
  }
  return out;
}

std::vector<SpeedSample> episode_speeds(const oracle::EpisodeRecord& ep, int episode_id) {
  std::vector<Eigen::Vector3d> traj;
  traj.reserve(ep.steps.size() + 1);
  for (const auto& st : ep.steps) traj.push_back(st.eef_before);
  traj.push_back(ep.final_eef);
  return action_speed(traj, episode_id);
}

GmmFit fit_gmm2(const std::vector<double>& samples, int max_iters, double tol, int restarts,
                std::vector<double>* ll_trace) {
  if (samples.size() < 10)
    throw std::invalid_argument("fit_gmm2: need at least 10 samples, got " +
                                std::to_string(samples.size()));
  double mean = 0, mn = samples[0], mx = samples[0];
  for (double v : samples) {
    if (!std::isfinite(v)) throw std::invalid_argument("fit_gmm2: samples must be finite");
    mean += v;
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  mean /= static_cast<double>(samples.size());
  if (mn == mx)
    throw std::invalid_argument("fit_gmm2: degenerate data, all samples equal " +
                                std::to_string(mean));
  double var = 0;
  for (double v : samples) var += (v - mean) * (v - mean);
  var /= static_cast<double>(samples.size());

  std::vector<double> sorted = samples;
  std::sort(sorted.begin(), sorted.end());
  const double sd = std::sqrt(var);

  // quantile pairs seed the restarts; spread varies so at least one lands
  // near each mode of a bimodal sample
  const double pairs[5][2] = {{0.25, 0.75}, {0.10, 0.90}, {0.33, 0.67}, {0.15, 0.85}, {0.05, 0.95}};
  EmRun best;
  bool have = false;
  for (int r = 0; r < std::min(restarts, 5); ++r) {
    double q_lo = quantile(sorted, pairs[r][0]);
    double q_hi = quantile(sorted, pairs[r][1]);
    if (q_hi - q_lo < kSigmaFloor) q_hi = q_lo + sd + kSigmaFloor;
    EmRun run = run_em(samples, q_lo, q_hi, std::max(sd, kSigmaFloor), max_iters, tol);
    if (!have || run.fit.log_likelihood > best.fit.log_likelihood) {
      best = std::move(run);
      have = true;
    }
  }

  GmmFit fit = best.fit;
  const double ashman_d = std::sqrt(2.0) * (fit.mu2 - fit.mu1) /
                          std::sqrt(fit.sigma1 * fit.sigma1 + fit.sigma2 * fit.sigma2);
  fit.low_separation = ashman_d < 2.0;
  fit.threshold = gaussian_intersection(fit, &fit.threshold_fallback);
  if (ll_trace) *ll_trace = best.trace;
  return fit;
}

GmmFit fit_gmm2(const std::vector<SpeedSample>& samples, int max_iters, double tol, int restarts,
                std::vector<double>* ll_trace) {
  std::vector<double> xs;
  xs.reserve(samples.size());
  for (const auto& s : samples) xs.push_back(s.s);
  return fit_gmm2(xs, max_iters, tol, restarts, ll_trace);
}

double gaussian_intersection(const GmmFit& fit, bool* fallback) {
  if (!(fit.mu1 < fit.mu2)) throw std::invalid_argument("gaussian_intersection: need mu1 < mu2");
  if (fit.sigma1 <= 0 || fit.sigma2 <= 0 || fit.w1 <= 0 || fit.w2 <= 0)
    throw std::invalid_argument("gaussian_intersection: invalid fit parameters");
  if (fallback) *fallback = false;

  const double is1 = 1.0 / (fit.sigma1 * fit.sigma1);
  const double is2 = 1.0 / (fit.sigma2 * fit.sigma2);
  const double a = 0.5 * (is2 - is1);
  const double b = fit.mu1 * is1 - fit.mu2 * is2;
  const double c = 0.5 * (fit.mu2 * fit.mu2 * is2 - fit.mu1 * fit.mu1 * is1) +
                   std::log((fit.w1 * fit.sigma2) / (fit.w2 * fit.sigma1));

  std::vector<double> roots;
  if (std::abs(a) < 1e-300 ||
      std::abs(a) * std::max(std::abs(fit.mu1), std::abs(fit.mu2)) < 1e-12 * std::abs(b)) {
    // equal variances: the log-density difference is linear
    if (b != 0) roots.push_back(-c / b);
  } else {
    const double disc = b * b - 4 * a * c;
    if (disc >= 0) {
      const double sq = std::sqrt(disc);
      // numerically stable pair
      const double q = -0.5 * (b + (b >= 0 ? sq : -sq));
      roots.push_back(q / a);
      if (q != 0) roots.push_back(c / q);
    }
  }

  std::vector<double> inside;
  for (double r : roots)
    if (r > fit.mu1 && r < fit.mu2) inside.push_back(r);

  if (inside.size() == 1) return inside[0];
  if (inside.size() >= 2) {
    const double valley = density_valley(fit);
    return std::abs(inside[0] - valley) <= std::abs(inside[1] - valley) ? inside[0] : inside[1];
  }
  if (fallback) *fallback = true;
  return density_valley(fit);
}

std::vector<SpeedLabel> label_speeds(const std::vector<double>& speeds, double threshold) {
  std::vector<SpeedLabel> out;
  out.reserve(speeds.size());
  for (double s : speeds)
    out.push_back(s <= threshold ? SpeedLabel::kSlow : SpeedLabel::kFast);
  return out;
}

void label_episode(oracle::EpisodeRecord& ep, double threshold) {
  auto speeds = episode_speeds(ep);
  for (size_t t = 0; t < ep.steps.size(); ++t)
    ep.steps[t].labels.speed_class = speeds[t].s <= threshold ? oracle::SpeedClass::kSlow
                                                              : oracle::SpeedClass::kFast;
}

int count_action_shifts(const std::vector<SpeedLabel>& labels) {
  int shifts = 0;
  for (size_t i = 1; i < labels.size(); ++i) shifts += labels[i] != labels[i - 1] ? 1 : 0;
  return shifts;
}

int count_action_shifts(const oracle::EpisodeRecord& ep) {
  int shifts = 0;
  for (size_t i = 1; i < ep.steps.size(); ++i) {
    if (ep.steps[i].labels.speed_class == oracle::SpeedClass::kUnset ||
        ep.steps[i - 1].labels.speed_class == oracle::SpeedClass::kUnset)
      throw std::logic_error("count_action_shifts: episode has unlabeled steps");
    shifts += ep.steps[i].labels.speed_class != ep.steps[i - 1].labels.speed_class ? 1 : 0;
  }
  return shifts;
}

nlohmann::json fit_report(const GmmFit& fit, const std::vector<double>& speeds, int hist_bins) {
  if (hist_bins <= 0) throw std::invalid_argument("fit_report: hist_bins must be positive");
  nlohmann::json j;
  j["fit"] = {{"w1", fit.w1},       {"w2", fit.w2},
              {"mu1", fit.mu1},     {"sigma1", fit.sigma1},
              {"mu2", fit.mu2},     {"sigma2", fit.sigma2},
              {"log_likelihood", fit.log_likelihood},
              {"threshold", fit.threshold},
              {"low_separation", fit.low_separation},
              {"threshold_fallback", fit.threshold_fallback}};
  j["candidates"] = {{"mu1", fit.mu1},
                     {"mu1_plus_sigma1", fit.mu1 + fit.sigma1},
                     {"intersection", fit.threshold},
                     {"mu2_minus_half_sigma2", fit.mu2 - 0.5 * fit.sigma2},
                     {"mu2", fit.mu2}};
  double hi = 0;
  for (double s : speeds) hi = std::max(hi, s);
  if (hi <= 0) hi = 1;
  std::vector<long long> counts(static_cast<size_t>(hist_bins), 0);
  for (double s : speeds) {
    int bin = static_cast<int>(s / hi * hist_bins);
    bin = std::clamp(bin, 0, hist_bins - 1);
    ++counts[static_cast<size_t>(bin)];
  }
  std::vector<double> edges(static_cast<size_t>(hist_bins) + 1);
  for (int i = 0; i <= hist_bins; ++i)
    edges[static_cast<size_t>(i)] = hi * i / hist_bins;
  j["histogram"] = {{"edges", edges}, {"counts", counts}};
  return j;
}

}  // namespace fovea::segment
