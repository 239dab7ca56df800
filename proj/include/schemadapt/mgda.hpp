#pragma once

#include <span>
#include <string>
#include <vector>

#include "schemadapt/autodiff.hpp"

namespace schemadapt::mgda {

using ad::Matrix;

struct SolveOptions {
  int max_iters = 100;
  double tol = 1e-6;
  // Finish with an exact active-set solve when Frank-Wolfe stops short of tol.
  bool exact_polish = true;
};

struct Solution {
  std::vector<double> alpha;
  double norm_sq = 0.0;       // ||sum_t alpha_t g_t||^2
  double duality_gap = 0.0;   // max_t (||g||^2 - <g_t, g>)
  int fw_iterations = 0;
  int polish_iterations = 0;
};

// Min-norm point of the convex hull of the rows of G (tasks x dims). Works on
// the Gram matrix only. Throws NumericError naming a non-finite row.
Solution min_norm_solve(const Matrix& G, const SolveOptions& options = {},
                        std::span<const std::string> task_ids = {});
Solution min_norm_solve_gram(const Matrix& gram, const SolveOptions& options = {});

// max_t (||g||^2 - <g_t, g>) for g = G^T alpha; <= tol certifies optimality.
double kkt_violation(const Matrix& G, std::span<const double> alpha);

// Closed form for two tasks: alpha_1 = clip(<g2 - g1, g2> / ||g1 - g2||^2, 0, 1).
double two_task_alpha(std::span<const double> g1, std::span<const double> g2);

Eigen::RowVectorXd combine(const Matrix& G, std::span<const double> alpha);

enum class Normalization { none, l2, loss, loss_l2 };
Normalization parse_normalization(const std::string& name);
std::string to_string(Normalization n);
// Per-task scale factors applied to G before solving.
std::vector<double> normalization_scales(const Matrix& G, std::span<const double> losses, Normalization n);

}  // namespace schemadapt::mgda
