#pragma once

namespace fovea::eval {

/// Upper-tail probability of a 1-degree-of-freedom chi-square variate.
double chi2_survival(double x);

struct ChiSquareResult {
  double statistic = 0;
  double p_value = 1;
  bool degenerate = false;  // a zero success or failure margin
};

/// Pearson chi-square on the 2x2 success/failure table of two groups.
/// Symmetric in the groups. Yates' correction is off unless requested.
ChiSquareResult chi_square_2x2(int success_a, int n_a, int success_b, int n_b,
                               bool continuity_correction = false);

}  // namespace fovea::eval
