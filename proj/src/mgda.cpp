#include "schemadapt/mgda.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "schemadapt/error.hpp"

namespace schemadapt::mgda {

namespace {

using Eigen::VectorXd;

double gap_of(const Matrix& M, const VectorXd& a) {
  const VectorXd Ma = M * a;
  return a.dot(Ma) - Ma.minCoeff();
}

void project_simplex_clean(VectorXd& a) {
  a = a.cwiseMax(0.0);
  const double s = a.sum();
  if (s <= 0) throw NumericError("mgda: degenerate weights");
  a /= s;
}

// Frank-Wolfe with away steps. Stops when the duality gap drops below tol.
int frank_wolfe(const Matrix& M, VectorXd& a, const SolveOptions& opt) {
  const auto T = M.rows();
  VectorXd Ma = M * a;
  int it = 0;
  for (; it < opt.max_iters; ++it) {
    const double nn = a.dot(Ma);
    Eigen::Index t_fw = 0;
    Ma.minCoeff(&t_fw);
    const double gap_fw = nn - Ma(t_fw);
    if (gap_fw <= opt.tol) break;

    Eigen::Index t_away = -1;
    double worst = -std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < T; ++t) {
      if (a(t) > 0 && Ma(t) > worst) {
        worst = Ma(t);
        t_away = t;
      }
    }
    const double gap_away = worst - nn;

    // Direction d = e_s - a (toward) or a - e_s (away); minimize ||g + gamma d||^2.
    VectorXd d = -a;
    double gamma_max = 1.0;
    if (gap_fw >= gap_away || t_away < 0) {
      d(t_fw) += 1.0;
    } else {
      d = a;
      d(t_away) -= 1.0;
      gamma_max = a(t_away) < 1.0 ? a(t_away) / (1.0 - a(t_away)) : std::numeric_limits<double>::infinity();
      if (!std::isfinite(gamma_max)) break;  // single vertex active, nothing to move away from
    }
    const VectorXd Md = M * d;
    const double curvature = d.dot(Md);
    if (curvature <= 0) break;
    const double gamma = std::clamp(-a.dot(Md) / curvature, 0.0, gamma_max);
    if (gamma == 0.0) break;
    a += gamma * d;
    Ma += gamma * Md;
    for (Eigen::Index t = 0; t < T; ++t) {
      if (a(t) < 1e-15) a(t) = 0.0;
    }
  }
  project_simplex_clean(a);
  return it;
}

// Wolfe's min-norm-point method on the Gram matrix, started from the
// heaviest vertex of `a`. Keeps a corral of vertices and moves to the affine
// minimizer of the corral, stepping back onto the simplex face when that
// minimizer leaves it.
int wolfe_polish(const Matrix& M, VectorXd& a, double tol) {
  const auto T = M.rows();
  std::vector<Eigen::Index> corral;
  {
    Eigen::Index best = 0;
    a.maxCoeff(&best);
    corral.push_back(best);
    a.setZero();
    a(best) = 1.0;
  }
  const double scale = std::max(1.0, M.diagonal().maxCoeff());
  int iters = 0;
  for (int major = 0; major < 10 * static_cast<int>(T) + 50; ++major) {
    VectorXd Ma = M * a;
    const double nn = a.dot(Ma);
    Eigen::Index t = 0;
    Ma.minCoeff(&t);
    if (nn - Ma(t) <= 0.25 * tol) break;
    if (std::find(corral.begin(), corral.end(), t) != corral.end()) break;  // numerically stuck
    corral.push_back(t);
    for (int minor = 0; minor < 4 * static_cast<int>(T) + 10; ++minor) {
      ++iters;
      const auto k = static_cast<Eigen::Index>(corral.size());
      Matrix K(k + 1, k + 1);
      for (Eigen::Index i = 0; i < k; ++i) {
        for (Eigen::Index j = 0; j < k; ++j) K(i, j) = M(corral[i], corral[j]) / scale;
        K(i, k) = 1.0;
        K(k, i) = 1.0;
      }
      K(k, k) = 0.0;
      VectorXd rhs = VectorXd::Zero(k + 1);
      rhs(k) = 1.0;
      const VectorXd sol = K.fullPivLu().solve(rhs);
      VectorXd mu = sol.head(k);
      bool interior = mu.allFinite();
      for (Eigen::Index i = 0; i < k && interior; ++i) interior = mu(i) > 1e-14;
      if (interior) {
        a.setZero();
        for (Eigen::Index i = 0; i < k; ++i) a(corral[i]) = mu(i);
        break;
      }
      if (!mu.allFinite()) {
        corral.pop_back();
        return iters;
      }
      // Step from the current point toward mu until a weight hits zero.
      double theta = 1.0;
      for (Eigen::Index i = 0; i < k; ++i) {
        const double lam = a(corral[i]);
        if (mu(i) <= 1e-14 && lam - mu(i) > 0) theta = std::min(theta, lam / (lam - mu(i)));
      }
      VectorXd next = VectorXd::Zero(T);
      for (Eigen::Index i = 0; i < k; ++i) next(corral[i]) = (1.0 - theta) * a(corral[i]) + theta * mu(i);
      a = next;
      std::vector<Eigen::Index> kept;
      for (Eigen::Index i : corral) {
        if (a(i) > 1e-14) {
          kept.push_back(i);
        } else {
          a(i) = 0.0;
        }
      }
      corral.swap(kept);
      if (corral.empty()) throw NumericError("mgda: active set collapsed");
    }
  }
  project_simplex_clean(a);
  return iters;
}

}  // namespace

Solution min_norm_solve_gram(const Matrix& M, const SolveOptions& options) {
  const auto T = M.rows();
  if (T < 1 || M.cols() != T) throw ShapeError("mgda: Gram matrix must be square and non-empty");
  if (!M.allFinite()) throw NumericError("mgda: non-finite Gram matrix");
  VectorXd a = VectorXd::Constant(T, 1.0 / static_cast<double>(T));
  Solution s;
  s.fw_iterations = frank_wolfe(M, a, options);
  double gap = gap_of(M, a);
  if (gap > options.tol && options.exact_polish) {
    VectorXd b = a;
    s.polish_iterations = wolfe_polish(M, b, options.tol);
    const double gap_b = gap_of(M, b);
    if (gap_b < gap) {
      a = b;
      gap = gap_b;
    }
  }
  s.alpha.assign(a.data(), a.data() + T);
  s.norm_sq = a.dot(M * a);
  s.duality_gap = gap;
  return s;
}

Solution min_norm_solve(const Matrix& G, const SolveOptions& options, std::span<const std::string> task_ids) {
  if (G.rows() < 1) throw ShapeError("mgda: no task gradients");
  for (Eigen::Index t = 0; t < G.rows(); ++t) {
    if (!G.row(t).allFinite()) {
      const std::string id = static_cast<std::size_t>(t) < task_ids.size() ? task_ids[t] : "task " + std::to_string(t);
      throw NumericError("mgda: non-finite gradient for " + id);
    }
  }
  const Matrix M = G * G.transpose();
  Solution s = min_norm_solve_gram(M, options);
  // Recompute the certificate against the explicit combination.
  s.duality_gap = kkt_violation(G, s.alpha);
  s.norm_sq = combine(G, s.alpha).squaredNorm();
  return s;
}

Eigen::RowVectorXd combine(const Matrix& G, std::span<const double> alpha) {
  if (static_cast<Eigen::Index>(alpha.size()) != G.rows()) throw ShapeError("mgda: alpha length mismatch");
  const Eigen::Map<const Eigen::RowVectorXd> a(alpha.data(), G.rows());
  return a * G;
}

double kkt_violation(const Matrix& G, std::span<const double> alpha) {
  const Eigen::RowVectorXd g = combine(G, alpha);
  const VectorXd dots = G * g.transpose();
  return g.squaredNorm() - dots.minCoeff();
}

double two_task_alpha(std::span<const double> g1, std::span<const double> g2) {
  if (g1.size() != g2.size()) throw ShapeError("mgda: gradient lengths differ");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < g1.size(); ++i) {
    const double d = g1[i] - g2[i];
    num += (g2[i] - g1[i]) * g2[i];
    den += d * d;
  }
  if (den == 0.0) return 0.5;
  return std::clamp(num / den, 0.0, 1.0);
}

Normalization parse_normalization(const std::string& name) {
  if (name == "none") return Normalization::none;
  if (name == "l2") return Normalization::l2;
  if (name == "loss") return Normalization::loss;
  if (name == "loss+") return Normalization::loss_l2;
  throw ValidationError("mgda.normalization: expected none|l2|loss|loss+, got '" + name + "'");
}

std::string to_string(Normalization n) {
  switch (n) {
    case Normalization::none: return "none";
    case Normalization::l2: return "l2";
    case Normalization::loss: return "loss";
    case Normalization::loss_l2: return "loss+";
  }
  return "none";
}

std::vector<double> normalization_scales(const Matrix& G, std::span<const double> losses, Normalization n) {
  std::vector<double> s(static_cast<std::size_t>(G.rows()), 1.0);
  for (Eigen::Index t = 0; t < G.rows(); ++t) {
    const double norm = G.row(t).norm();
    const double loss = static_cast<std::size_t>(t) < losses.size() ? losses[t] : 1.0;
    double d = 1.0;
    switch (n) {
      case Normalization::none: break;
      case Normalization::l2: d = norm; break;
      case Normalization::loss: d = loss; break;
      case Normalization::loss_l2: d = loss * norm; break;
    }
    s[t] = d > 0 ? 1.0 / d : 1.0;
  }
  return s;
}

}  // namespace schemadapt::mgda
