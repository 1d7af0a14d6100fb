#pragma once

// Implicit-feedback context-aware factorization model.
//
// Scores are additive item-context interactions:
//
//   s(u, i, c) = b_i + <U_u, V_i> + sum_j <V_i, W_j[c_j]>
//
// over the configured context dimensions j. Training minimizes a confidence
// weighted pairwise logistic loss: for an observed tuple (u, i, c) with count n
// and a sampled app k unobserved for (u, c),
//
//   L = -w log sigmoid(s(u,i,c) - s(u,k,c)) + reg/2 * |touched parameters|^2
//
// with w = 1 + alpha * ln(1 + n).

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctxrec/domain.hpp"
#include "ctxrec/ingest.hpp"

namespace ctxrec {

enum class NegativeSampling : std::uint8_t { uniform = 0, popularity = 1 };

struct ModelConfig {
  std::size_t latent_dim = 16;
  double learning_rate = 0.05;
  double regularization = 0.01;
  std::size_t epochs = 30;
  std::size_t negatives_per_positive = 4;
  double confidence_alpha = 1.0;
  std::vector<Dim> context_dims = {Dim::daytime, Dim::weekday, Dim::isweekend,
                                   Dim::location, Dim::weather};
  NegativeSampling sampling = NegativeSampling::uniform;
  std::uint64_t seed = 42;

  // Throws ConfigError.
  void validate() const;
};

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Anything that can score every catalog app for a (user, context) query.
class Scorer {
 public:
  virtual ~Scorer() = default;

  virtual std::string name() const = 0;
  virtual std::span<const AppId> apps() const = 0;
  virtual bool knows_user(const UserId& user) const = 0;
  // `out` has one slot per apps() entry. Throws ColdStartError for users the
  // scorer cannot handle.
  virtual void score_all(const UserId& user, const ContextVector& context,
                         std::span<double> out) const = 0;
};

// Context resolved to one factor row per modeled dimension; -1 when the value
// has no row (e.g. a country never seen in training).
struct ResolvedContext {
  std::vector<int> rows;
};

class FactorModel : public Scorer {
 public:
  FactorModel() = default;

  // Id maps from `cube`, factors ~ U(-0.01, 0.01) from the seeded generator,
  // biases zero.
  static FactorModel initialize(const UsageCube& cube, const ModelConfig& config);

  std::string name() const override { return config_.context_dims.empty() ? "mf_nocontext" : "context_tf"; }
  std::span<const AppId> apps() const override { return apps_; }
  bool knows_user(const UserId& user) const override { return user_index_.contains(user); }
  void score_all(const UserId& user, const ContextVector& context,
                 std::span<double> out) const override;

  // Throws ColdStartError for unknown user or app, ValidationError for an
  // invalid context.
  double score(const UserId& user, const AppId& app, const ContextVector& context) const;
  double score(std::uint32_t user, std::uint32_t app, const ResolvedContext& context) const;

  ResolvedContext resolve(const ContextVector& context) const;
  ResolvedContext resolve(const ContextKey& key) const;

  const ModelConfig& config() const { return config_; }
  std::size_t latent_dim() const { return config_.latent_dim; }
  std::size_t num_users() const { return users_.size(); }
  std::size_t num_apps() const { return apps_.size(); }
  const UserId& user(std::uint32_t idx) const { return users_.at(idx); }
  const AppId& app(std::uint32_t idx) const { return apps_.at(idx); }
  const std::string& category(std::uint32_t idx) const { return categories_.at(idx); }
  std::optional<std::uint32_t> find_user(const UserId& u) const;
  std::optional<std::uint32_t> find_app(const AppId& a) const;

  // Per modeled dimension: the label of each factor row.
  const std::vector<std::vector<std::string>>& dim_values() const { return dim_values_; }

  // Apps the user used in training, ascending index.
  std::span<const std::uint32_t> installed(std::uint32_t user) const { return installed_.at(user); }
  // Training usage count per app.
  std::uint64_t popularity(std::uint32_t app) const { return popularity_.at(app); }

  std::span<double> user_row(std::uint32_t u) { return user_factors_.row(u); }
  std::span<const double> user_row(std::uint32_t u) const { return user_factors_.row(u); }
  std::span<double> item_row(std::uint32_t i) { return item_factors_.row(i); }
  std::span<const double> item_row(std::uint32_t i) const { return item_factors_.row(i); }
  std::span<double> context_row(std::size_t dim, std::size_t r) { return context_factors_.at(dim).row(r); }
  std::span<const double> context_row(std::size_t dim, std::size_t r) const {
    return context_factors_.at(dim).row(r);
  }
  double& bias(std::uint32_t i) { return biases_.at(i); }
  double bias(std::uint32_t i) const { return biases_.at(i); }

  const std::vector<double>& loss_trace() const { return loss_trace_; }

  bool all_finite() const;

  bool operator==(const FactorModel& other) const;

 private:
  friend FactorModel train(const UsageCube&, const ModelConfig&);
  friend void save_model(const FactorModel&, std::ostream&);
  friend FactorModel load_model(std::istream&);

  // U_u + sum_j W_j[c_j]
  void query_vector(std::uint32_t user, const ResolvedContext& context, std::span<double> out) const;

  ModelConfig config_;
  std::vector<UserId> users_;
  std::vector<AppId> apps_;
  std::vector<std::string> categories_;
  std::unordered_map<UserId, std::uint32_t> user_index_;
  std::unordered_map<AppId, std::uint32_t> app_index_;
  std::vector<std::vector<std::string>> dim_values_;
  std::vector<std::unordered_map<std::string, int>> dim_rows_;
  std::vector<std::vector<std::uint32_t>> installed_;
  std::vector<std::uint64_t> popularity_;

  Matrix user_factors_;
  Matrix item_factors_;
  std::vector<Matrix> context_factors_;
  std::vector<double> biases_;
  std::vector<double> loss_trace_;
};

// One pairwise training example.
struct Triple {
  std::uint32_t user = 0;
  std::uint32_t positive = 0;
  std::uint32_t negative = 0;
  ResolvedContext context;
  double weight = 1.0;
};

double confidence_weight(std::uint64_t count, double alpha);

struct PairwiseGradient {
  std::vector<double> user;
  std::vector<double> positive;
  std::vector<double> negative;
  std::vector<std::vector<double>> context;  // per modeled dimension
  double positive_bias = 0;
  double negative_bias = 0;
};

double pairwise_loss(const FactorModel& m, const Triple& t, double regularization);
// Analytic gradient of pairwise_loss. Reuses `out`'s storage.
void pairwise_gradient(const FactorModel& m, const Triple& t, double regularization,
                       PairwiseGradient& out);

// Throws Error on an empty cube, NumericError naming the epoch on divergence.
FactorModel train(const UsageCube& cube, const ModelConfig& config);
// train() with no context dimensions.
FactorModel train_nocontext(const UsageCube& cube, ModelConfig config);

// Global usage count.
class PopularityScorer : public Scorer {
 public:
  explicit PopularityScorer(const UsageCube& cube);

  std::string name() const override { return "popularity"; }
  std::span<const AppId> apps() const override { return apps_; }
  bool knows_user(const UserId&) const override { return true; }
  void score_all(const UserId& user, const ContextVector& context,
                 std::span<double> out) const override;

 private:
  std::vector<AppId> apps_;
  std::vector<double> scores_;
};

// Usage count over tuples that match the query on every modeled dimension.
// Global popularity, scaled below one count, breaks ties.
class ContextPopularityScorer : public Scorer {
 public:
  ContextPopularityScorer(const UsageCube& cube, std::vector<Dim> dims);

  std::string name() const override { return "context_popularity"; }
  std::span<const AppId> apps() const override { return apps_; }
  bool knows_user(const UserId&) const override { return true; }
  void score_all(const UserId& user, const ContextVector& context,
                 std::span<double> out) const override;

  std::uint64_t matching_count(std::uint32_t app, const ContextVector& context) const;

 private:
  ContextKey project(const ContextKey& key) const;

  std::vector<Dim> dims_;
  std::vector<AppId> apps_;
  std::vector<double> tie_break_;
  std::unordered_map<ContextKey, std::vector<std::pair<std::uint32_t, std::uint64_t>>> counts_;
};

struct ScoredApp {
  AppId app;
  double score = 0;
  std::size_t rank = 0;  // 1-based
};

struct RecommendOptions {
  std::size_t n = 21;
  bool exclude_installed = true;
  std::vector<AppId> also_installed;  // e.g. installs reported after training
};

struct Recommendation {
  std::vector<ScoredApp> items;
  bool cold_start = false;
};

// Top-n by score, ties by AppId. Apps in `excluded` are skipped.
std::vector<ScoredApp> rank_apps(std::span<const AppId> apps, std::span<const double> scores,
                                 std::size_t n, const std::vector<bool>& excluded);

// Unknown users get `fallback` (or training popularity when null), flagged
// cold_start.
Recommendation recommend(const FactorModel& model, const UserId& user,
                         const ContextVector& context, const RecommendOptions& options = {},
                         const Scorer* fallback = nullptr);

// Magic "CARSMDL1", then little-endian fields; see docs/model_format.md.
inline constexpr std::uint32_t kModelFormatVersion = 1;

void save_model(const FactorModel& model, std::ostream& out);
void save_model(const FactorModel& model, const std::string& path);
FactorModel load_model(std::istream& in);
FactorModel load_model(const std::string& path);
std::vector<std::uint8_t> serialize_model(const FactorModel& model);
// FNV-1a of the serialized bytes, as 16 hex digits.
std::string model_fingerprint(const FactorModel& model);
std::string bytes_fingerprint(std::span<const std::uint8_t> bytes);

}  // namespace ctxrec
