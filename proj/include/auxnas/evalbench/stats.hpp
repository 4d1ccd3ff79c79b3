#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "auxnas/errors.hpp"

namespace auxnas {

struct PairedTest {
  std::size_t n = 0;
  double mean_diff = 0.0;  // mean of a_i - b_i
  double sd_diff = 0.0;
  double t = 0.0;
  double p = 1.0;  // one-sided, H1: mean(a - b) < 0
};

/// One-sided paired t-test that `a` is smaller than `b`.
inline PairedTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ContractViolation("paired_t_test: samples differ in size");
  if (a.size() < 2) throw ContractViolation("paired_t_test: needs at least 2 pairs");
  PairedTest r;
  r.n = a.size();
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  for (double x : d) r.mean_diff += x;
  r.mean_diff /= static_cast<double>(r.n);
  double ss = 0.0;
  for (double x : d) ss += (x - r.mean_diff) * (x - r.mean_diff);
  r.sd_diff = std::sqrt(ss / static_cast<double>(r.n - 1));
  if (r.sd_diff == 0.0) {
    r.t = r.mean_diff < 0 ? -std::numeric_limits<double>::infinity()
                          : (r.mean_diff > 0 ? std::numeric_limits<double>::infinity() : 0.0);
    r.p = r.mean_diff < 0 ? 0.0 : (r.mean_diff > 0 ? 1.0 : 0.5);
    return r;
  }
  r.t = r.mean_diff / (r.sd_diff / std::sqrt(static_cast<double>(r.n)));
  boost::math::students_t dist(static_cast<double>(r.n - 1));
  r.p = boost::math::cdf(dist, r.t);
  return r;
}

}  // namespace auxnas
