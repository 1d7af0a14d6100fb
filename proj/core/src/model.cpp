#include "ctxrec/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace ctxrec {
namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

double squared_norm(std::span<const double> a) { return dot(a, a); }

// log(1 + exp(z)) without overflow.
double softplus(double z) {
  return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

void fill_uniform(std::span<double> values, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-0.01, 0.01);
  for (double& v : values) v = dist(rng);
}

struct UserContextKey {
  std::uint32_t user;
  ContextKey context;
  bool operator==(const UserContextKey&) const = default;
};

struct UserContextKeyHash {
  std::size_t operator()(const UserContextKey& k) const noexcept {
    return ContextKeyHash{}(k.context) * 31 + k.user;
  }
};

ContextKey project(const ContextKey& key, std::span<const Dim> dims) {
  ContextKey out;
  for (Dim d : dims) out[d] = key[d];
  return out;
}

}  // namespace

void ModelConfig::validate() const {
  if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be > 0");
  }
  if (!(regularization >= 0) || !std::isfinite(regularization)) {
    throw ConfigError("regularization must be >= 0");
  }
  if (!(confidence_alpha >= 0) || !std::isfinite(confidence_alpha)) {
    throw ConfigError("confidence_alpha must be >= 0");
  }
  std::set<Dim> seen;
  for (Dim d : context_dims) {
    if (!seen.insert(d).second) {
      throw ConfigError("duplicate context dimension " + std::string(dim_name(d)));
    }
  }
}

double confidence_weight(std::uint64_t count, double alpha) {
  return 1.0 + alpha * std::log1p(static_cast<double>(count));
}

// ---------------------------------------------------------------------------
// FactorModel

FactorModel FactorModel::initialize(const UsageCube& cube, const ModelConfig& config) {
  config.validate();
  FactorModel m;
  m.config_ = config;
  for (std::uint32_t u = 0; u < cube.num_users(); ++u) {
    m.users_.push_back(cube.user(u));
    m.user_index_.emplace(cube.user(u), u);
  }
  for (std::uint32_t a = 0; a < cube.num_apps(); ++a) {
    m.apps_.push_back(cube.app(a));
    m.categories_.push_back(cube.category(a));
    m.app_index_.emplace(cube.app(a), a);
    m.popularity_.push_back(cube.app_total(a));
  }
  for (Dim d : config.context_dims) {
    std::vector<std::string> labels;
    if (dimension(d).open_vocabulary) {
      for (std::size_t v = 0; v < value_slots(d); ++v) {
        if (cube.context_total(d, static_cast<ValueIndex>(v)) > 0) {
          labels.push_back(decode_value(d, static_cast<ValueIndex>(v)));
        }
      }
    } else {
      for (auto label : dimension(d).values) labels.emplace_back(label);
    }
    std::unordered_map<std::string, int> rows;
    for (std::size_t r = 0; r < labels.size(); ++r) rows.emplace(labels[r], static_cast<int>(r));
    m.dim_values_.push_back(std::move(labels));
    m.dim_rows_.push_back(std::move(rows));
  }

  m.installed_.assign(cube.num_users(), {});
  for (const auto& [key, cell] : cube.cells()) {
    auto& apps = m.installed_[key.user];
    if (apps.empty() || apps.back() != key.app) apps.push_back(key.app);
  }
  for (auto& apps : m.installed_) {
    std::sort(apps.begin(), apps.end());
    apps.erase(std::unique(apps.begin(), apps.end()), apps.end());
  }

  const std::size_t d = config.latent_dim;
  std::mt19937_64 rng(config.seed);
  m.user_factors_ = Matrix(m.users_.size(), d);
  m.item_factors_ = Matrix(m.apps_.size(), d);
  fill_uniform(m.user_factors_.data(), rng);
  fill_uniform(m.item_factors_.data(), rng);
  for (const auto& labels : m.dim_values_) {
    Matrix w(labels.size(), d);
    fill_uniform(w.data(), rng);
    m.context_factors_.push_back(std::move(w));
  }
  m.biases_.assign(m.apps_.size(), 0.0);
  return m;
}

std::optional<std::uint32_t> FactorModel::find_user(const UserId& u) const {
  const auto it = user_index_.find(u);
  if (it == user_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::uint32_t> FactorModel::find_app(const AppId& a) const {
  const auto it = app_index_.find(a);
  if (it == app_index_.end()) return std::nullopt;
  return it->second;
}

ResolvedContext FactorModel::resolve(const ContextVector& context) const {
  return resolve(encode(context));
}

ResolvedContext FactorModel::resolve(const ContextKey& key) const {
  ResolvedContext out;
  out.rows.reserve(config_.context_dims.size());
  for (std::size_t j = 0; j < config_.context_dims.size(); ++j) {
    const Dim d = config_.context_dims[j];
    if (!dimension(d).open_vocabulary) {
      out.rows.push_back(key[d]);
      continue;
    }
    const auto it = dim_rows_[j].find(decode_value(d, key[d]));
    out.rows.push_back(it == dim_rows_[j].end() ? -1 : it->second);
  }
  return out;
}

void FactorModel::query_vector(std::uint32_t user, const ResolvedContext& context,
                               std::span<double> out) const {
  const auto u = user_factors_.row(user);
  std::copy(u.begin(), u.end(), out.begin());
  for (std::size_t j = 0; j < context.rows.size(); ++j) {
    if (context.rows[j] < 0) continue;
    const auto w = context_factors_[j].row(static_cast<std::size_t>(context.rows[j]));
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += w[k];
  }
}

double FactorModel::score(std::uint32_t user, std::uint32_t app, const ResolvedContext& context) const {
  std::vector<double> q(latent_dim());
  query_vector(user, context, q);
  return biases_[app] + dot(item_factors_.row(app), q);
}

double FactorModel::score(const UserId& user, const AppId& app, const ContextVector& context) const {
  const ResolvedContext ctx = resolve(context);
  const auto u = find_user(user);
  if (!u) throw ColdStartError("unknown user " + user.str());
  const auto a = find_app(app);
  if (!a) throw ColdStartError("unknown app " + app.str());
  return score(*u, *a, ctx);
}

void FactorModel::score_all(const UserId& user, const ContextVector& context,
                            std::span<double> out) const {
  const ResolvedContext ctx = resolve(context);
  const auto u = find_user(user);
  if (!u) throw ColdStartError("unknown user " + user.str());
  std::vector<double> q(latent_dim());
  query_vector(*u, ctx, q);
  for (std::uint32_t i = 0; i < apps_.size(); ++i) {
    out[i] = biases_[i] + dot(item_factors_.row(i), q);
  }
}

bool FactorModel::all_finite() const {
  auto finite = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  if (!finite(user_factors_.data()) || !finite(item_factors_.data()) || !finite(biases_)) {
    return false;
  }
  return std::all_of(context_factors_.begin(), context_factors_.end(),
                     [&](const Matrix& w) { return finite(w.data()); });
}

bool FactorModel::operator==(const FactorModel& o) const {
  return config_.latent_dim == o.config_.latent_dim &&
         config_.context_dims == o.config_.context_dims && users_ == o.users_ &&
         apps_ == o.apps_ && categories_ == o.categories_ && dim_values_ == o.dim_values_ &&
         installed_ == o.installed_ && popularity_ == o.popularity_ &&
         user_factors_ == o.user_factors_ && item_factors_ == o.item_factors_ &&
         context_factors_ == o.context_factors_ && biases_ == o.biases_;
}

// ---------------------------------------------------------------------------
// Pairwise loss

namespace {

// Returns the margin x = s(u,i,c) - s(u,k,c) and fills the query vector.
double margin(const FactorModel& m, const Triple& t, std::vector<double>& query) {
  const std::size_t d = m.latent_dim();
  query.assign(m.user_row(t.user).begin(), m.user_row(t.user).end());
  for (std::size_t j = 0; j < t.context.rows.size(); ++j) {
    if (t.context.rows[j] < 0) continue;
    const auto w = m.context_row(j, static_cast<std::size_t>(t.context.rows[j]));
    for (std::size_t k = 0; k < d; ++k) query[k] += w[k];
  }
  const auto vi = m.item_row(t.positive);
  const auto vk = m.item_row(t.negative);
  double x = m.bias(t.positive) - m.bias(t.negative);
  for (std::size_t k = 0; k < d; ++k) x += (vi[k] - vk[k]) * query[k];
  return x;
}

}  // namespace

double pairwise_loss(const FactorModel& m, const Triple& t, double regularization) {
  std::vector<double> query;
  const double x = margin(m, t, query);
  double penalty = squared_norm(m.user_row(t.user)) + squared_norm(m.item_row(t.positive)) +
                   squared_norm(m.item_row(t.negative)) + m.bias(t.positive) * m.bias(t.positive) +
                   m.bias(t.negative) * m.bias(t.negative);
  for (std::size_t j = 0; j < t.context.rows.size(); ++j) {
    if (t.context.rows[j] >= 0) {
      penalty += squared_norm(m.context_row(j, static_cast<std::size_t>(t.context.rows[j])));
    }
  }
  return t.weight * softplus(-x) + 0.5 * regularization * penalty;
}

namespace {

double gradient_impl(const FactorModel& m, const Triple& t, double reg, PairwiseGradient& out,
                     std::vector<double>& query) {
  const std::size_t d = m.latent_dim();
  const double x = margin(m, t, query);
  // d/dx of -w log sigmoid(x)
  const double g = -t.weight / (1.0 + std::exp(x));

  const auto u = m.user_row(t.user);
  const auto vi = m.item_row(t.positive);
  const auto vk = m.item_row(t.negative);
  out.user.resize(d);
  out.positive.resize(d);
  out.negative.resize(d);
  for (std::size_t k = 0; k < d; ++k) {
    const double diff = vi[k] - vk[k];
    out.user[k] = g * diff + reg * u[k];
    out.positive[k] = g * query[k] + reg * vi[k];
    out.negative[k] = -g * query[k] + reg * vk[k];
  }
  out.context.resize(t.context.rows.size());
  for (std::size_t j = 0; j < t.context.rows.size(); ++j) {
    if (t.context.rows[j] < 0) {
      out.context[j].clear();
      continue;
    }
    const auto w = m.context_row(j, static_cast<std::size_t>(t.context.rows[j]));
    out.context[j].resize(d);
    for (std::size_t k = 0; k < d; ++k) out.context[j][k] = g * (vi[k] - vk[k]) + reg * w[k];
  }
  out.positive_bias = g + reg * m.bias(t.positive);
  out.negative_bias = -g + reg * m.bias(t.negative);
  return x;
}

void apply_step(FactorModel& m, const Triple& t, const PairwiseGradient& g, double lr) {
  auto step = [lr](std::span<double> param, const std::vector<double>& grad) {
    for (std::size_t k = 0; k < param.size(); ++k) param[k] -= lr * grad[k];
  };
  step(m.user_row(t.user), g.user);
  step(m.item_row(t.positive), g.positive);
  step(m.item_row(t.negative), g.negative);
  for (std::size_t j = 0; j < t.context.rows.size(); ++j) {
    if (t.context.rows[j] >= 0) {
      step(m.context_row(j, static_cast<std::size_t>(t.context.rows[j])), g.context[j]);
    }
  }
  m.bias(t.positive) -= lr * g.positive_bias;
  m.bias(t.negative) -= lr * g.negative_bias;
}

}  // namespace

void pairwise_gradient(const FactorModel& m, const Triple& t, double regularization,
                       PairwiseGradient& out) {
  std::vector<double> query;
  gradient_impl(m, t, regularization, out, query);
}

// ---------------------------------------------------------------------------
// Training

FactorModel train(const UsageCube& cube, const ModelConfig& config) {
  if (cube.empty()) throw Error("cannot train on an empty usage cube");
  FactorModel model = FactorModel::initialize(cube, config);
  const std::size_t n_apps = model.num_apps();

  struct Positive {
    Triple triple;
    const std::vector<std::uint32_t>* observed = nullptr;
  };
  std::unordered_map<UserContextKey, std::vector<std::uint32_t>, UserContextKeyHash> observed;
  for (const auto& [key, cell] : cube.cells()) {
    observed[{key.user, project(key.context, config.context_dims)}].push_back(key.app);
  }
  for (auto& [key, apps] : observed) {
    std::sort(apps.begin(), apps.end());
    apps.erase(std::unique(apps.begin(), apps.end()), apps.end());
  }

  std::vector<Positive> positives;
  positives.reserve(cube.size());
  for (const auto& [key, cell] : cube.cells()) {
    Positive p;
    p.triple.user = key.user;
    p.triple.positive = key.app;
    p.triple.context = model.resolve(key.context);
    p.triple.weight = confidence_weight(cell.count, config.confidence_alpha);
    p.observed = &observed.at({key.user, project(key.context, config.context_dims)});
    positives.push_back(std::move(p));
  }

  std::mt19937_64 rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
  std::uniform_int_distribution<std::uint32_t> uniform_app(0, static_cast<std::uint32_t>(n_apps - 1));
  std::vector<double> popularity(n_apps);
  for (std::uint32_t a = 0; a < n_apps; ++a) popularity[a] = static_cast<double>(cube.app_total(a));
  std::discrete_distribution<std::uint32_t> popular_app(popularity.begin(), popularity.end());

  auto draw = [&]() {
    return config.sampling == NegativeSampling::popularity ? popular_app(rng) : uniform_app(rng);
  };

  std::vector<std::size_t> order(positives.size());
  std::iota(order.begin(), order.end(), 0);
  PairwiseGradient grad;
  std::vector<double> query;
  constexpr int kMaxDraws = 64;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss = 0;
    std::size_t triples = 0;
    for (std::size_t idx : order) {
      Positive& p = positives[idx];
      if (p.observed->size() >= n_apps) continue;
      for (std::size_t s = 0; s < config.negatives_per_positive; ++s) {
        std::optional<std::uint32_t> negative;
        for (int attempt = 0; attempt < kMaxDraws && !negative; ++attempt) {
          const std::uint32_t candidate = draw();
          if (!std::binary_search(p.observed->begin(), p.observed->end(), candidate)) {
            negative = candidate;
          }
        }
        if (!negative) continue;
        p.triple.negative = *negative;
        const double x = gradient_impl(model, p.triple, config.regularization, grad, query);
        loss += p.triple.weight * softplus(-x);
        ++triples;
        apply_step(model, p.triple, grad, config.learning_rate);
      }
    }
    const double mean = triples ? loss / static_cast<double>(triples) : 0.0;
    if (!std::isfinite(mean)) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch + 1) +
                         " (non-finite loss); lower the learning rate");
    }
    model.loss_trace_.push_back(mean);
  }
  if (!model.all_finite()) throw NumericError("training produced non-finite factors");
  return model;
}

FactorModel train_nocontext(const UsageCube& cube, ModelConfig config) {
  config.context_dims.clear();
  return train(cube, config);
}

// ---------------------------------------------------------------------------
// Baselines

PopularityScorer::PopularityScorer(const UsageCube& cube) {
  for (std::uint32_t a = 0; a < cube.num_apps(); ++a) {
    apps_.push_back(cube.app(a));
    scores_.push_back(static_cast<double>(cube.app_total(a)));
  }
}

void PopularityScorer::score_all(const UserId&, const ContextVector& context,
                                 std::span<double> out) const {
  (void)encode(context);
  std::copy(scores_.begin(), scores_.end(), out.begin());
}

ContextPopularityScorer::ContextPopularityScorer(const UsageCube& cube, std::vector<Dim> dims)
    : dims_(std::move(dims)) {
  const double scale = 1.0 / (static_cast<double>(cube.grand_total()) + 1.0);
  for (std::uint32_t a = 0; a < cube.num_apps(); ++a) {
    apps_.push_back(cube.app(a));
    tie_break_.push_back(static_cast<double>(cube.app_total(a)) * scale);
  }
  std::unordered_map<ContextKey, std::map<std::uint32_t, std::uint64_t>> acc;
  for (const auto& [key, cell] : cube.cells()) acc[project(key.context)][key.app] += cell.count;
  for (auto& [key, per_app] : acc) {
    counts_.emplace(key, std::vector<std::pair<std::uint32_t, std::uint64_t>>(per_app.begin(),
                                                                              per_app.end()));
  }
}

ContextKey ContextPopularityScorer::project(const ContextKey& key) const {
  return ctxrec::project(key, dims_);
}

std::uint64_t ContextPopularityScorer::matching_count(std::uint32_t app,
                                                      const ContextVector& context) const {
  const auto it = counts_.find(project(encode(context)));
  if (it == counts_.end()) return 0;
  for (const auto& [a, n] : it->second) {
    if (a == app) return n;
  }
  return 0;
}

void ContextPopularityScorer::score_all(const UserId&, const ContextVector& context,
                                        std::span<double> out) const {
  const ContextKey key = project(encode(context));
  std::copy(tie_break_.begin(), tie_break_.end(), out.begin());
  if (const auto it = counts_.find(key); it != counts_.end()) {
    for (const auto& [a, n] : it->second) out[a] += static_cast<double>(n);
  }
}

// ---------------------------------------------------------------------------
// Recommendation

std::vector<ScoredApp> rank_apps(std::span<const AppId> apps, std::span<const double> scores,
                                 std::size_t n, const std::vector<bool>& excluded) {
  std::vector<std::uint32_t> idx;
  idx.reserve(apps.size());
  for (std::uint32_t i = 0; i < apps.size(); ++i) {
    if (excluded.empty() || !excluded[i]) idx.push_back(i);
  }
  const auto better = [&](std::uint32_t a, std::uint32_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return apps[a] < apps[b];
  };
  const std::size_t take = std::min(n, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end(), better);
  std::vector<ScoredApp> out;
  out.reserve(take);
  for (std::size_t r = 0; r < take; ++r) out.push_back({apps[idx[r]], scores[idx[r]], r + 1});
  return out;
}

namespace {

class TrainingPopularity : public Scorer {
 public:
  explicit TrainingPopularity(const FactorModel& m) : model_(m) {}
  std::string name() const override { return "popularity"; }
  std::span<const AppId> apps() const override { return model_.apps(); }
  bool knows_user(const UserId&) const override { return true; }
  void score_all(const UserId&, const ContextVector&, std::span<double> out) const override {
    for (std::uint32_t a = 0; a < model_.num_apps(); ++a) {
      out[a] = static_cast<double>(model_.popularity(a));
    }
  }

 private:
  const FactorModel& model_;
};

}  // namespace

Recommendation recommend(const FactorModel& model, const UserId& user, const ContextVector& context,
                         const RecommendOptions& options, const Scorer* fallback) {
  (void)encode(context);
  Recommendation rec;
  const auto u = model.find_user(user);
  TrainingPopularity popularity(model);
  const Scorer& scorer = u ? static_cast<const Scorer&>(model)
                           : (fallback ? *fallback : static_cast<const Scorer&>(popularity));
  rec.cold_start = !u;

  const auto apps = scorer.apps();
  std::vector<double> scores(apps.size());
  scorer.score_all(user, context, scores);

  std::vector<bool> excluded(apps.size(), false);
  if (options.exclude_installed) {
    if (u && &scorer == &model) {
      for (std::uint32_t a : model.installed(*u)) excluded[a] = true;
    }
    for (const auto& extra : options.also_installed) {
      const auto it = std::find(apps.begin(), apps.end(), extra);
      if (it != apps.end()) excluded[static_cast<std::size_t>(it - apps.begin())] = true;
    }
  }
  rec.items = rank_apps(apps, scores, options.n, excluded);
  return rec;
}

}  // namespace ctxrec
