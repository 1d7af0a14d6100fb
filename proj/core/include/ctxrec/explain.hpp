#pragma once

// Chi-square contextual explanations.
//
// For app i and the user's current value c of a dimension, the observed count
// O is the app's usage in c and the expected count is
//
//   E = (usage of all apps in c / grand total) * usage of app i
//
// A value is reported when its upper-tail p-value is below the threshold and
// O > E.

#include <cstdint>
#include <nlohmann/json_fwd.hpp>
#include <span>
#include <string>
#include <vector>

#include "ctxrec/domain.hpp"
#include "ctxrec/ingest.hpp"

namespace ctxrec {

enum class DfConvention {
  cardinality,   // df = number of values of the dimension
  conventional,  // df = number of values - 1
};

std::optional<DfConvention> parse_df_convention(std::string_view s);

struct FactorStat {
  Dim dim = Dim::daytime;
  std::string value;
  std::uint64_t observed = 0;
  double expected = 0;
  double chi2 = 0;
  int df = 0;
  double p = 1;

  bool operator==(const FactorStat&) const = default;
};

// Daytime, weekday, isweekend, location, city, country, weather.
std::vector<Dim> default_explain_dims();

struct ExplainOptions {
  std::size_t max_factors = 3;
  double significance = 0.1;
  DfConvention df_convention = DfConvention::cardinality;
  std::vector<Dim> dims = default_explain_dims();
};

struct ExplainCounters {
  std::size_t skipped_zero_expected = 0;  // E = 0 or value unobserved
  std::size_t skipped_df = 0;             // df < 1 under the conventional rule
};

// Throws UndefinedStatisticError when the grand total is zero.
double expected_count(const UsageCube& cube, std::uint32_t app, Dim dim, ValueIndex value);

// Throws UndefinedStatisticError when expected <= 0.
double chi_square_stat(double observed, double expected);

// Upper-tail probability of the chi-square distribution, Q(df/2, x/2).
// Throws Error for df < 1 or negative / non-finite x.
double chi_square_pvalue(double x, int df);

// Regularized upper incomplete gamma Q(a, x).
double regularized_gamma_q(double a, double x);

// Distinct values of `dim`. Country counts the values observed in `cube`.
int degrees_of_freedom(const UsageCube& cube, Dim dim, DfConvention convention);

// Statistics for every evaluable dimension at the context's value, in `dims`
// order. Dimensions with E = 0 are skipped.
std::vector<FactorStat> evaluate_factors(const UsageCube& cube, std::uint32_t app,
                                         const ContextVector& context,
                                         const ExplainOptions& options = {},
                                         ExplainCounters* counters = nullptr);

// Keeps p < significance and O > E, ascending p, at most max_factors.
std::vector<FactorStat> filter_factors(std::vector<FactorStat> candidates,
                                       std::size_t max_factors = 3, double significance = 0.1);

std::vector<FactorStat> select_factors(const UsageCube& cube, std::uint32_t app,
                                       const ContextVector& context,
                                       const ExplainOptions& options = {},
                                       ExplainCounters* counters = nullptr);

inline constexpr std::string_view kExplanationPrefix = "Recommended because your current situation is: ";
inline constexpr std::string_view kNeutralExplanation = "Recommended based on your overall app usage";

// Labels come from `display` when it has the dimension (e.g. a city name),
// otherwise from display_value().
std::string render_explanation(std::span<const FactorStat> selected,
                               const ContextVector& display = {});

struct ExplanationReport {
  AppId app;
  std::vector<FactorStat> selected;
  std::string text;
};

// Apps unknown to the cube get an empty selection.
ExplanationReport explain(const UsageCube& cube, const AppId& app, const ContextVector& context,
                          const ExplainOptions& options = {}, const ContextVector& display = {});

void to_json(nlohmann::json& j, const FactorStat& f);
void to_json(nlohmann::json& j, const ExplanationReport& r);

}  // namespace ctxrec
