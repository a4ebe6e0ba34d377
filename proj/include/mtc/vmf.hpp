#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtc/matrix.hpp"
#include "mtc/random.hpp"

namespace mtc::vmf {

inline constexpr double kMaxOrder = 500.0;
inline constexpr double kMaxArgument = 1e6;

enum class BesselMethod { series, asymptotic };

struct LogBesselResult {
  double value = 0.0;
  BesselMethod method = BesselMethod::series;
};

namespace detail {

// log I_nu(x) by the ascending series, summed relative to its first term and
// rescaled whenever the partial sum grows large.
inline double log_bessel_series(double nu, double x) {
  const double half = 0.5 * x;
  const double q = half * half;
  double log_scale = nu * std::log(half) - std::lgamma(nu + 1.0);
  double sum = 1.0;
  double term = 1.0;
  for (std::size_t k = 1;; ++k) {
    const double kd = static_cast<double>(k);
    term *= q / (kd * (kd + nu));
    sum += term;
    if (term < sum * 1e-17 && kd > half) break;
    if (sum > 1e250) {
      log_scale += std::log(sum);
      term /= sum;
      sum = 1.0;
    }
  }
  return log_scale + std::log(sum);
}

// Debye polynomials u_k(t) for the uniform expansion of I_nu(nu z).
inline double debye_sum(double t, double nu) {
  const double t2 = t * t;
  const double u1 = t * (3.0 - 5.0 * t2) / 24.0;
  const double u2 = t2 * (81.0 + t2 * (-462.0 + t2 * 385.0)) / 1152.0;
  const double u3 = t * t2 * (30375.0 + t2 * (-369603.0 + t2 * (765765.0 - t2 * 425425.0))) / 414720.0;
  const double u4 =
      t2 * t2 *
      (4465125.0 + t2 * (-94121676.0 + t2 * (349922430.0 + t2 * (-446185740.0 + t2 * 185910725.0)))) /
      39813120.0;
  const double u5 =
      t * t2 * t2 *
      (1519035525.0 +
       t2 * (-49286948607.0 +
             t2 * (284499769554.0 + t2 * (-614135872350.0 + t2 * (566098157625.0 - t2 * 188699385875.0))))) /
      6688604160.0;
  const double inv = 1.0 / nu;
  return 1.0 + inv * (u1 + inv * (u2 + inv * (u3 + inv * (u4 + inv * u5))));
}

inline double log_bessel_uniform(double nu, double x) {
  const double z = x / nu;
  const double s = std::sqrt(1.0 + z * z);
  const double t = 1.0 / s;
  const double eta = s + std::log(z / (1.0 + s));
  return nu * eta - 0.5 * std::log(2.0 * std::numbers::pi * nu) - 0.5 * std::log(s) + std::log(debye_sum(t, nu));
}

// Orders below this get the uniform expansion at a shifted order and are
// brought back down by the (stable) backward recurrence.
inline constexpr double kUniformMinOrder = 50.0;

inline double log_bessel_large_x(double nu, double x) {
  if (nu >= kUniformMinOrder) return log_bessel_uniform(nu, x);
  const double steps = std::ceil(kUniformMinOrder - nu);
  const double top = nu + steps;
  const double log_top = log_bessel_uniform(top, x);
  // ratio r_n = I_{n+1}(x) / I_n(x); r_{n-1} = 1 / (r_n + 2n/x)
  double ratio = std::exp(log_bessel_uniform(top + 1.0, x) - log_top);
  double log_value = log_top;
  for (double n = top; n > nu + 0.5; n -= 1.0) {
    ratio = 1.0 / (ratio + 2.0 * n / x);
    log_value -= std::log(ratio);
  }
  return log_value;
}

}  // namespace detail

/// log I_nu(x), the modified Bessel function of the first kind. Valid for
/// 0 <= nu <= 500, 0 < x <= 1e6.
inline LogBesselResult log_bessel_i(double nu, double x) {
  if (!(nu >= 0.0) || nu > kMaxOrder || !(x > 0.0) || x > kMaxArgument)
    throw std::domain_error("log_bessel_i: (nu=" + std::to_string(nu) + ", x=" + std::to_string(x) +
                            ") outside supported envelope");
  if (x <= std::max(20.0, nu)) return {detail::log_bessel_series(nu, x), BesselMethod::series};
  return {detail::log_bessel_large_x(nu, x), BesselMethod::asymptotic};
}

/// log c_p(kappa), the vMF normalizing constant on S^{p-1}.
inline double log_norm_const(std::size_t p, double kappa) {
  if (p < 2) throw std::invalid_argument("log_norm_const: dimension must be >= 2");
  if (!(kappa > 0.0)) throw std::invalid_argument("log_norm_const: kappa must be > 0");
  const double half = 0.5 * static_cast<double>(p);
  return (half - 1.0) * std::log(kappa) - half * std::log(2.0 * std::numbers::pi) -
         log_bessel_i(half - 1.0, kappa).value;
}

/// A_p(kappa) = I_{p/2}(kappa) / I_{p/2-1}(kappa), the expected cosine between
/// a draw and the mean direction.
inline double mean_resultant_length(std::size_t p, double kappa) {
  if (p < 2) throw std::invalid_argument("mean_resultant_length: dimension must be >= 2");
  const double half = 0.5 * static_cast<double>(p);
  return std::exp(log_bessel_i(half, kappa).value - log_bessel_i(half - 1.0, kappa).value);
}

struct VmfParams {
  std::vector<double> mu;
  double kappa = 1.0;

  std::size_t dim() const { return mu.size(); }

  void validate() const {
    if (mu.size() < 2) throw std::invalid_argument("vMF: dimension must be >= 2");
    if (!(kappa > 0.0)) throw std::invalid_argument("vMF: kappa must be > 0");
    if (std::abs(norm(mu) - 1.0) > 1e-9) throw std::invalid_argument("vMF: mean direction must be a unit vector");
  }
};

inline double log_density(const VmfParams& params, std::span<const double> x) {
  params.validate();
  if (x.size() != params.dim()) throw std::invalid_argument("vMF log_density: dimension mismatch");
  if (std::abs(norm(x) - 1.0) > 1e-6) throw std::invalid_argument("vMF log_density: x must be a unit vector");
  return log_norm_const(params.dim(), params.kappa) + params.kappa * dot(x, params.mu);
}

/// Wood's (1994) rejection sampler. Owns its generator; not for concurrent
/// use, make one per thread.
class Sampler {
 public:
  Sampler(VmfParams params, std::uint64_t seed) : params_(std::move(params)), rng_(seed) {
    params_.validate();
    const double m1 = static_cast<double>(params_.dim()) - 1.0;
    const double kappa = params_.kappa;
    // (-2k + sqrt(4k^2 + (p-1)^2)) / (p-1), rearranged to avoid cancellation
    b_ = m1 / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + m1 * m1));
    x0_ = (1.0 - b_) / (1.0 + b_);
    c_ = kappa * x0_ + m1 * std::log(1.0 - x0_ * x0_);
    beta_shape_ = 0.5 * m1;
  }

  const VmfParams& params() const { return params_; }

  // Cosine with the mean direction, drawn from its marginal.
  double sample_cosine() {
    const double m1 = static_cast<double>(params_.dim()) - 1.0;
    std::gamma_distribution<double> gamma(beta_shape_, 1.0);
    for (;;) {
      const double g1 = gamma(rng_);
      const double g2 = gamma(rng_);
      const double z = g1 / (g1 + g2);
      const double w = (1.0 - (1.0 + b_) * z) / (1.0 - (1.0 - b_) * z);
      const double u = uniform01(rng_);
      if (params_.kappa * w + m1 * std::log(1.0 - x0_ * w) - c_ >= std::log(u)) return w;
    }
  }

  std::vector<double> sample() {
    const std::size_t p = params_.dim();
    const double w = sample_cosine();
    // uniform direction orthogonal to mu
    std::normal_distribution<double> gauss;
    std::vector<double> v(p);
    double vn = 0.0;
    while (vn < 1e-12) {
      for (double& x : v) x = gauss(rng_);
      axpy(-dot(v, params_.mu), params_.mu, v);
      vn = norm(v);
    }
    const double s = std::sqrt(std::max(0.0, 1.0 - w * w)) / vn;
    std::vector<double> out(p);
    for (std::size_t i = 0; i < p; ++i) out[i] = w * params_.mu[i] + s * v[i];
    normalize(out);
    return out;
  }

  std::vector<std::vector<double>> sample(std::size_t n) {
    std::vector<std::vector<double>> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(sample());
    return out;
  }

 private:
  VmfParams params_;
  Rng rng_;
  double b_ = 0.0;
  double x0_ = 0.0;
  double c_ = 0.0;
  double beta_shape_ = 0.0;
};

inline std::vector<std::vector<double>> sample(const VmfParams& params, std::size_t n, std::uint64_t seed) {
  Sampler s(params, seed);
  return s.sample(n);
}

}  // namespace mtc::vmf
