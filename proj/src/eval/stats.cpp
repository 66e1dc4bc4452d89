#include "fovea/eval/stats.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fovea::eval {

double chi2_survival(double x) {
  if (x < 0) throw std::invalid_argument("chi2_survival: negative statistic");
  return std::erfc(std::sqrt(x / 2));
}

ChiSquareResult chi_square_2x2(int success_a, int n_a, int success_b, int n_b,
                               bool continuity_correction) {
  if (n_a <= 0 || n_b <= 0)
    throw std::invalid_argument("chi_square_2x2: group sizes must be positive");
  if (success_a < 0 || success_a > n_a || success_b < 0 || success_b > n_b)
    throw std::invalid_argument("chi_square_2x2: successes outside [0, n] (" +
                                std::to_string(success_a) + "/" + std::to_string(n_a) + ", " +
                                std::to_string(success_b) + "/" + std::to_string(n_b) + ")");

  const double a = success_a, b = n_a - success_a;
  const double c = success_b, d = n_b - success_b;
  const double n = a + b + c + d;
  const double successes = a + c, failures = b + d;

  ChiSquareResult r;
  if (successes == 0 || failures == 0) {
    r.degenerate = true;
    return r;
  }
  double diff = std::abs(a * d - b * c);
  if (continuity_correction) diff = std::max(0.0, diff - n / 2);
  r.statistic = n * diff * diff / ((a + b) * (c + d) * successes * failures);
  r.p_value = chi2_survival(r.statistic);
  return r;
}

}  // namespace fovea::eval
