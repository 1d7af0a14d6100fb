#pragma once

// Offline top-N evaluation: train/test splits, AP/MAP, precision and recall
// at k, and a multi-model, multi-seed comparison runner.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <nlohmann/json_fwd.hpp>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ctxrec/ingest.hpp"
#include "ctxrec/model.hpp"

namespace ctxrec {

enum class SplitStrategy { per_user_random, temporal };
std::optional<SplitStrategy> parse_split_strategy(std::string_view s);
std::string_view to_string(SplitStrategy s);

struct SplitSpec {
  SplitStrategy strategy = SplitStrategy::per_user_random;
  double test_fraction = 0.2;
  std::uint64_t seed = 1;

  void validate() const;  // throws ConfigError
};

struct Split {
  UsageCube train;
  std::vector<UsageTuple> test;
};

// Per user, round(fraction * n) of the user's n cells go to test, clamped to
// [1, n - 1]; users with a single cell stay in train. The temporal strategy
// holds out each user's latest cells by first timestamp. Throws Error on an
// empty cube.
Split split(const UsageCube& cube, const SplitSpec& spec);

// Sum of precision@r over hits at rank r <= k, divided by min(|relevant|, k).
// Throws UndefinedStatisticError for an empty relevant set.
double average_precision(std::span<const AppId> ranked, const std::set<AppId>& relevant, std::size_t k);
double precision_at_k(std::span<const AppId> ranked, const std::set<AppId>& relevant, std::size_t k);
double recall_at_k(std::span<const AppId> ranked, const std::set<AppId>& relevant, std::size_t k);

// A (user, context) query with its held-out apps.
struct Query {
  UserId user;
  ContextKey context;
  std::set<AppId> held_out;
};

// Sorted by (user, context).
std::vector<Query> build_queries(std::span<const UsageTuple> test);

struct MetricsAtK {
  std::size_t k = 0;
  double map = 0;
  double precision = 0;
  double recall = 0;
};

struct ScorerEval {
  std::vector<MetricsAtK> by_k;
  std::size_t queries = 0;  // evaluated
  std::size_t skipped = 0;  // no relevant candidate or unknown user
};

// Candidates are the scorer's apps minus the user's training apps; relevance
// is the held-out apps among the candidates. Throws Error when no query can
// be evaluated.
ScorerEval evaluate(const Scorer& scorer, const UsageCube& train, std::span<const UsageTuple> test,
                    std::span<const std::size_t> ks);
double map_at_k(const Scorer& scorer, const UsageCube& train, std::span<const UsageTuple> test,
                std::size_t k);

// Uniform random ranking, a fixed function of (seed, user, context, app).
class RandomScorer : public Scorer {
 public:
  RandomScorer(const UsageCube& cube, std::uint64_t seed);

  std::string name() const override { return "random"; }
  std::span<const AppId> apps() const override { return apps_; }
  bool knows_user(const UserId&) const override { return true; }
  void score_all(const UserId& user, const ContextVector& context, std::span<double> out) const override;

 private:
  std::vector<AppId> apps_;
  std::uint64_t seed_;
};

using ScorerFactory = std::function<std::unique_ptr<Scorer>(const UsageCube& train, std::uint64_t seed)>;

struct NamedFactory {
  std::string name;
  ScorerFactory make;
};

// context_tf, mf_nocontext, popularity, context_popularity.
std::vector<NamedFactory> default_factories(const ModelConfig& config);

struct CompareOptions {
  SplitSpec split;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::vector<std::size_t> ks = {3, 10, 21};
  std::string reference = "context_tf";
};

struct EvalRow {
  std::string model;
  std::optional<std::uint64_t> seed;  // empty for the mean row
  MetricsAtK metrics;
  std::size_t queries = 0;
};

struct LiftRow {
  std::string baseline;
  std::optional<std::uint64_t> seed;  // empty for the mean row
  std::size_t k = 0;
  double relative = 0;  // (reference - baseline) / baseline on MAP@k
};

struct EvalReport {
  std::string reference;
  std::vector<EvalRow> rows;
  std::vector<LiftRow> lifts;

  // MAP of `model` at `k` for `seed` (empty: mean). Throws Error if absent.
  double map(const std::string& model, std::size_t k, std::optional<std::uint64_t> seed = {}) const;
};

// Each seed draws its own split (spec.seed = seed) shared by every model and
// trains every model with that seed.
EvalReport compare(std::span<const NamedFactory> models, const UsageCube& cube, const CompareOptions& options);

void to_json(nlohmann::json& j, const EvalReport& r);
void write_tsv(const EvalReport& r, std::ostream& out);

}  // namespace ctxrec
