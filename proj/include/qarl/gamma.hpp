#pragma once

// Gamma distributions in shape/rate form: density, sampling and the
// closed-form KL divergence (with its gradient in log-parameters).

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include <cmath>
#include <random>
#include <string>

#include "json.hpp"
#include "qarl/errors.hpp"
#include "qarl/math.hpp"

namespace qarl {

struct GammaParams {
  double shape = 1.0;
  double rate = 1.0;

  GammaParams() = default;
  GammaParams(double k, double r) : shape(k), rate(r) {
    if (!(k > 0.0) || !(r > 0.0) || !std::isfinite(k) || !std::isfinite(r))
      throw DomainError("GammaParams: shape and rate must be positive and finite");
  }

  double mean() const { return shape / rate; }
  double variance() const { return shape / (rate * rate); }

  bool operator==(const GammaParams&) const = default;
};

inline double gamma_log_pdf(const GammaParams& p, double x) {
  if (!(x > 0.0)) throw DomainError("gamma_pdf: x must be positive");
  return p.shape * std::log(p.rate) + (p.shape - 1.0) * std::log(x) - p.rate * x - std::lgamma(p.shape);
}

inline double gamma_pdf(const GammaParams& p, double x) { return std::exp(gamma_log_pdf(p, x)); }

inline double gamma_sample(const GammaParams& p, Rng& rng) {
  // std::gamma_distribution takes (shape, scale).
  std::gamma_distribution<double> dist(p.shape, 1.0 / p.rate);
  double x = dist(rng);
  // Underflow to 0 is possible for tiny shapes; the support is open at 0.
  while (!(x > 0.0)) x = dist(rng);
  return x;
}

// KL(Gamma(kp, rp) || Gamma(kq, rq))
inline double gamma_kl(const GammaParams& p, const GammaParams& q) {
  using boost::math::digamma;
  const double kl = (p.shape - q.shape) * digamma(p.shape) - std::lgamma(p.shape) + std::lgamma(q.shape) +
                    q.shape * (std::log(p.rate) - std::log(q.rate)) + p.shape * (q.rate - p.rate) / p.rate;
  // Exact zero at p == q; tiny negative values are rounding.
  return std::max(kl, 0.0);
}

struct LogParamGradient {
  double d_log_shape = 0.0;
  double d_log_rate = 0.0;
};

// Gradient of KL(p || q) with respect to (ln kp, ln rp).
inline LogParamGradient gamma_kl_gradient(const GammaParams& p, const GammaParams& q) {
  using boost::math::trigamma;
  const double d_shape = (p.shape - q.shape) * trigamma(p.shape) + q.rate / p.rate - 1.0;
  return {p.shape * d_shape, q.shape - p.shape * q.rate / p.rate};
}

// Gradient of ln p(x) with respect to (ln k, ln rate).
inline LogParamGradient gamma_log_pdf_gradient(const GammaParams& p, double x) {
  using boost::math::digamma;
  return {p.shape * (std::log(p.rate) + std::log(x) - digamma(p.shape)), p.shape - p.rate * x};
}

inline nlohmann::json to_json(const GammaParams& p) { return {{"shape", p.shape}, {"rate", p.rate}}; }

inline GammaParams gamma_from_json(const nlohmann::json& j) {
  try {
    return {j.at("shape").get<double>(), j.at("rate").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("gamma parameters: ") + e.what());
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace qarl
