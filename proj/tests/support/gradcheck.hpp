#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "schemadapt/autodiff.hpp"

namespace schemadapt::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<param>[i,j]"
  std::size_t checked = 0;
};

// Relative error with a small absolute floor so entries that are zero in both
// estimates do not divide by zero.
inline double relative_error(double analytic, double numeric, double floor = 1e-7) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Central differences on up to `per_param` random entries of every parameter.
// `loss` builds a fresh scalar on the given tape from the current values.
// `floor` bounds the denominator of the relative error; it should sit above the
// difference quotient's roundoff (about eps * |loss| / h).
inline GradCheckResult grad_check(const std::function<ad::Var(ad::Tape&)>& loss,
                                  const std::vector<ad::Parameter*>& params, std::mt19937_64& rng,
                                  std::size_t per_param = 6, double h = 1e-5, double floor = 1e-7) {
  ad::Tape tape;
  ad::Var out = loss(tape);
  tape.backward(out);
  std::vector<ad::Matrix> analytic;
  for (ad::Parameter* p : params) analytic.push_back(tape.grad(*p));

  auto eval = [&]() {
    ad::Tape t(false);
    return loss(t).item();
  };
  GradCheckResult res;
  for (std::size_t k = 0; k < params.size(); ++k) {
    ad::Parameter& p = *params[k];
    std::uniform_int_distribution<ad::Index> pick(0, p.value.size() - 1);
    const std::size_t n = std::min<std::size_t>(per_param, static_cast<std::size_t>(p.value.size()));
    for (std::size_t s = 0; s < n; ++s) {
      const ad::Index flat = n == static_cast<std::size_t>(p.value.size()) ? static_cast<ad::Index>(s) : pick(rng);
      double& x = p.value.data()[flat];
      const double keep = x;
      x = keep + h;
      const double up = eval();
      x = keep - h;
      const double down = eval();
      x = keep;
      const double numeric = (up - down) / (2 * h);
      const double err = relative_error(analytic[k].data()[flat], numeric, floor);
      ++res.checked;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst = p.name + "[" + std::to_string(flat / p.value.cols()) + "," +
                    std::to_string(flat % p.value.cols()) + "] analytic " + std::to_string(analytic[k].data()[flat]) +
                    " numeric " + std::to_string(numeric);
      }
    }
  }
  return res;
}

}  // namespace schemadapt::testing
