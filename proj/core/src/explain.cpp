#include "ctxrec/explain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>

namespace ctxrec {
namespace {

constexpr double kEpsilon = 1e-10;
constexpr int kMaxIterations = 10000;

// Lower regularized gamma P(a, x) by its power series; valid for x < a + 1.
double gamma_p_series(double a, double x) {
  double term = 1.0 / a;
  double sum = term;
  double ap = a;
  for (int n = 0; n < kMaxIterations; ++n) {
    ap += 1;
    term *= x / ap;
    sum += term;
    if (std::fabs(term) < std::fabs(sum) * kEpsilon) {
      return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
    }
  }
  throw NumericError("incomplete gamma series did not converge");
}

// Upper regularized gamma Q(a, x) by a continued fraction (modified Lentz).
double gamma_q_fraction(double a, double x) {
  constexpr double tiny = 1e-300;
  double b = x + 1 - a;
  double c = 1 / tiny;
  double d = 1 / b;
  double h = d;
  for (int i = 1; i < kMaxIterations; ++i) {
    const double an = -i * (i - a);
    b += 2;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1) < kEpsilon) {
      return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
    }
  }
  throw NumericError("incomplete gamma continued fraction did not converge");
}

}  // namespace

std::optional<DfConvention> parse_df_convention(std::string_view s) {
  if (s == "cardinality" || s == "paper") return DfConvention::cardinality;
  if (s == "conventional") return DfConvention::conventional;
  return std::nullopt;
}

std::vector<Dim> default_explain_dims() {
  return {Dim::daytime, Dim::weekday, Dim::isweekend, Dim::location,
          Dim::city,    Dim::country, Dim::weather};
}

double expected_count(const UsageCube& cube, std::uint32_t app, Dim dim, ValueIndex value) {
  if (cube.grand_total() == 0) throw UndefinedStatisticError("grand total is zero");
  // Multiply first so that proportional usage gives E == O exactly.
  return static_cast<double>(cube.context_total(dim, value)) * static_cast<double>(cube.app_total(app)) /
         static_cast<double>(cube.grand_total());
}

double chi_square_stat(double observed, double expected) {
  if (!(expected > 0)) throw UndefinedStatisticError("expected count must be positive");
  const double diff = observed - expected;
  return diff * diff / expected;
}

double regularized_gamma_q(double a, double x) {
  if (!(a > 0)) throw Error("incomplete gamma needs a > 0");
  if (!(x >= 0) || std::isnan(x)) throw Error("incomplete gamma needs x >= 0");
  if (x == 0) return 1.0;
  if (std::isinf(x)) return 0.0;
  if (x < a + 1) return std::clamp(1.0 - gamma_p_series(a, x), 0.0, 1.0);
  return std::clamp(gamma_q_fraction(a, x), 0.0, 1.0);
}

double chi_square_pvalue(double x, int df) {
  if (df < 1) throw Error("chi-square degrees of freedom must be >= 1");
  if (std::isnan(x) || x < 0) throw Error("chi-square statistic must be >= 0");
  return regularized_gamma_q(df / 2.0, x / 2.0);
}

int degrees_of_freedom(const UsageCube& cube, Dim dim, DfConvention convention) {
  const int values = dim == Dim::country ? static_cast<int>(cube.observed_values(dim))
                                         : static_cast<int>(dimension(dim).cardinality());
  return convention == DfConvention::cardinality ? values : values - 1;
}

std::vector<FactorStat> evaluate_factors(const UsageCube& cube, std::uint32_t app,
                                         const ContextVector& context,
                                         const ExplainOptions& options,
                                         ExplainCounters* counters) {
  std::vector<FactorStat> out;
  if (cube.grand_total() == 0) return out;
  for (Dim d : options.dims) {
    if (!context.has(d)) continue;
    const auto value = encode_value(d, context.get(d));
    if (!value) throw ValidationError("invalid " + std::string(dim_name(d)) + " value '" +
                                      context.get(d) + "'");
    FactorStat f;
    f.dim = d;
    f.value = context.get(d);
    f.observed = cube.app_context_count(app, d, *value);
    f.expected = expected_count(cube, app, d, *value);
    if (!(f.expected > 0)) {
      if (counters) ++counters->skipped_zero_expected;
      continue;
    }
    f.df = degrees_of_freedom(cube, d, options.df_convention);
    if (f.df < 1) {
      if (counters) ++counters->skipped_df;
      continue;
    }
    f.chi2 = chi_square_stat(static_cast<double>(f.observed), f.expected);
    f.p = chi_square_pvalue(f.chi2, f.df);
    out.push_back(std::move(f));
  }
  return out;
}

std::vector<FactorStat> filter_factors(std::vector<FactorStat> candidates, std::size_t max_factors,
                                       double significance) {
  std::erase_if(candidates, [&](const FactorStat& f) {
    return !(f.p < significance) || !(static_cast<double>(f.observed) - f.expected > 0);
  });
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const FactorStat& a, const FactorStat& b) { return a.p < b.p; });
  if (candidates.size() > max_factors) candidates.resize(max_factors);
  return candidates;
}

std::vector<FactorStat> select_factors(const UsageCube& cube, std::uint32_t app,
                                       const ContextVector& context,
                                       const ExplainOptions& options,
                                       ExplainCounters* counters) {
  return filter_factors(evaluate_factors(cube, app, context, options, counters),
                        options.max_factors, options.significance);
}

std::string render_explanation(std::span<const FactorStat> selected, const ContextVector& display) {
  if (selected.empty()) return std::string(kNeutralExplanation);
  std::string out(kExplanationPrefix);
  for (std::size_t k = 0; k < selected.size(); ++k) {
    if (k) out += ", ";
    const FactorStat& f = selected[k];
    out += display.has(f.dim) ? display.get(f.dim) : display_value(f.dim, f.value);
  }
  return out;
}

ExplanationReport explain(const UsageCube& cube, const AppId& app, const ContextVector& context,
                          const ExplainOptions& options, const ContextVector& display) {
  ExplanationReport r;
  r.app = app;
  if (const auto idx = cube.find_app(app)) r.selected = select_factors(cube, *idx, context, options);
  r.text = render_explanation(r.selected, display);
  return r;
}

void to_json(nlohmann::json& j, const FactorStat& f) {
  j = nlohmann::json{{"dimension", dim_name(f.dim)},
                     {"value", f.value},
                     {"observed", f.observed},
                     {"expected", f.expected},
                     {"chi2", f.chi2},
                     {"df", f.df},
                     {"p", f.p}};
}

void to_json(nlohmann::json& j, const ExplanationReport& r) {
  j = nlohmann::json{{"app", r.app.str()}, {"factors", r.selected}, {"text", r.text}};
}

}  // namespace ctxrec
