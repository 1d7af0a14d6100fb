#include "ctxrec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <nlohmann/json.hpp>
#include <ostream>
#include <random>
#include <unordered_map>

namespace ctxrec {

std::optional<SplitStrategy> parse_split_strategy(std::string_view s) {
  if (s == "per-user-random" || s == "per_user_random" || s == "random") return SplitStrategy::per_user_random;
  if (s == "temporal") return SplitStrategy::temporal;
  return std::nullopt;
}

std::string_view to_string(SplitStrategy s) {
  return s == SplitStrategy::temporal ? "temporal" : "per-user-random";
}

void SplitSpec::validate() const {
  if (!(test_fraction > 0 && test_fraction < 1)) throw ConfigError("test_fraction must be in (0, 1)");
}

Split split(const UsageCube& cube, const SplitSpec& spec) {
  spec.validate();
  if (cube.empty()) throw Error("cannot split an empty usage cube");

  using Entry = std::map<UsageCube::Key, UsageCube::Cell>::const_iterator;
  std::vector<std::vector<Entry>> per_user(cube.num_users());
  for (auto it = cube.cells().begin(); it != cube.cells().end(); ++it) per_user[it->first.user].push_back(it);

  std::mt19937_64 rng(spec.seed);
  std::set<UsageCube::Key> held_out;
  for (auto& cells : per_user) {
    const std::size_t n = cells.size();
    if (n < 2) continue;
    const auto want = static_cast<std::size_t>(std::llround(spec.test_fraction * static_cast<double>(n)));
    const std::size_t t = std::clamp<std::size_t>(want, 1, n - 1);
    if (spec.strategy == SplitStrategy::per_user_random) {
      std::shuffle(cells.begin(), cells.end(), rng);
      for (std::size_t k = 0; k < t; ++k) held_out.insert(cells[k]->first);
    } else {
      std::stable_sort(cells.begin(), cells.end(),
                       [](Entry a, Entry b) { return a->second.first_ts < b->second.first_ts; });
      for (std::size_t k = n - t; k < n; ++k) held_out.insert(cells[k]->first);
    }
  }

  Split out;
  for (const auto& [key, cell] : cube.cells()) {
    if (held_out.contains(key)) {
      UsageTuple t{cube.user(key.user), cube.app(key.app), cube.category(key.app), decode(key.context),
                   cell.count, cell.first_ts};
      out.test.push_back(std::move(t));
    } else {
      out.train.add(cube.user(key.user), cube.app(key.app), cube.category(key.app), key.context, cell.count,
                    cell.first_ts);
    }
  }
  return out;
}

namespace {

void check_k(std::size_t k) {
  if (k < 1) throw ValidationError("k must be >= 1");
}

std::size_t hits_at(std::span<const AppId> ranked, const std::set<AppId>& relevant, std::size_t k) {
  std::size_t hits = 0;
  for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) hits += relevant.contains(ranked[r]);
  return hits;
}

}  // namespace

double average_precision(std::span<const AppId> ranked, const std::set<AppId>& relevant, std::size_t k) {
  check_k(k);
  if (relevant.empty()) throw UndefinedStatisticError("average precision of an empty relevant set");
  double sum = 0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) {
    if (relevant.contains(ranked[r])) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  return sum / static_cast<double>(std::min(relevant.size(), k));
}

double precision_at_k(std::span<const AppId> ranked, const std::set<AppId>& relevant, std::size_t k) {
  check_k(k);
  return static_cast<double>(hits_at(ranked, relevant, k)) / static_cast<double>(k);
}

double recall_at_k(std::span<const AppId> ranked, const std::set<AppId>& relevant, std::size_t k) {
  check_k(k);
  if (relevant.empty()) throw UndefinedStatisticError("recall of an empty relevant set");
  return static_cast<double>(hits_at(ranked, relevant, k)) / static_cast<double>(relevant.size());
}

std::vector<Query> build_queries(std::span<const UsageTuple> test) {
  std::map<std::pair<UserId, ContextKey>, std::set<AppId>> grouped;
  for (const auto& t : test) grouped[{t.user, encode(t.context)}].insert(t.app);
  std::vector<Query> out;
  out.reserve(grouped.size());
  for (auto& [key, apps] : grouped) out.push_back({key.first, key.second, std::move(apps)});
  return out;
}

ScorerEval evaluate(const Scorer& scorer, const UsageCube& train, std::span<const UsageTuple> test,
                    std::span<const std::size_t> ks) {
  if (ks.empty()) throw ValidationError("no cutoffs given");
  for (std::size_t k : ks) check_k(k);
  const std::size_t max_k = *std::max_element(ks.begin(), ks.end());

  const auto apps = scorer.apps();
  std::unordered_map<AppId, std::size_t> app_pos;
  for (std::size_t a = 0; a < apps.size(); ++a) app_pos.emplace(apps[a], a);

  std::vector<std::vector<std::size_t>> train_apps(train.num_users());
  for (const auto& [key, cell] : train.cells()) {
    const auto it = app_pos.find(train.app(key.app));
    if (it != app_pos.end()) train_apps[key.user].push_back(it->second);
  }

  ScorerEval ev;
  ev.by_k.resize(ks.size());
  for (std::size_t j = 0; j < ks.size(); ++j) ev.by_k[j].k = ks[j];

  std::vector<double> scores(apps.size());
  std::vector<bool> excluded(apps.size());
  std::vector<AppId> ranked;
  for (const Query& q : build_queries(test)) {
    const auto u = train.find_user(q.user);
    if (!u || !scorer.knows_user(q.user)) {
      ++ev.skipped;
      continue;
    }
    std::fill(excluded.begin(), excluded.end(), false);
    for (std::size_t a : train_apps[*u]) excluded[a] = true;
    std::set<AppId> relevant;
    for (const auto& app : q.held_out) {
      const auto it = app_pos.find(app);
      if (it != app_pos.end() && !excluded[it->second]) relevant.insert(app);
    }
    if (relevant.empty()) {
      ++ev.skipped;
      continue;
    }
    try {
      scorer.score_all(q.user, decode(q.context), scores);
    } catch (const ColdStartError&) {
      ++ev.skipped;
      continue;
    }
    ranked.clear();
    for (const auto& s : rank_apps(apps, scores, max_k, excluded)) ranked.push_back(s.app);
    for (auto& m : ev.by_k) {
      m.map += average_precision(ranked, relevant, m.k);
      m.precision += precision_at_k(ranked, relevant, m.k);
      m.recall += recall_at_k(ranked, relevant, m.k);
    }
    ++ev.queries;
  }
  if (ev.queries == 0) throw Error("no evaluable queries for " + scorer.name());
  const double n = static_cast<double>(ev.queries);
  for (auto& m : ev.by_k) {
    m.map /= n;
    m.precision /= n;
    m.recall /= n;
  }
  return ev;
}

double map_at_k(const Scorer& scorer, const UsageCube& train, std::span<const UsageTuple> test, std::size_t k) {
  const std::size_t ks[] = {k};
  return evaluate(scorer, train, test, ks).by_k[0].map;
}

// ---------------------------------------------------------------------------

namespace {

std::uint64_t fnv(std::string_view s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

RandomScorer::RandomScorer(const UsageCube& cube, std::uint64_t seed) : seed_(seed) {
  for (std::uint32_t a = 0; a < cube.num_apps(); ++a) apps_.push_back(cube.app(a));
}

void RandomScorer::score_all(const UserId& user, const ContextVector& context, std::span<double> out) const {
  const std::uint64_t base = fnv(format_context(context), fnv(user.str(), splitmix(seed_)));
  for (std::size_t a = 0; a < apps_.size(); ++a) {
    const std::uint64_t h = splitmix(fnv(apps_[a].str(), base));
    out[a] = static_cast<double>(h >> 11) * 0x1.0p-53;
  }
}

std::vector<NamedFactory> default_factories(const ModelConfig& config) {
  std::vector<NamedFactory> out;
  out.push_back({"context_tf", [config](const UsageCube& train, std::uint64_t seed) {
                   ModelConfig c = config;
                   c.seed = seed;
                   return std::unique_ptr<Scorer>(std::make_unique<FactorModel>(ctxrec::train(train, c)));
                 }});
  out.push_back({"mf_nocontext", [config](const UsageCube& train, std::uint64_t seed) {
                   ModelConfig c = config;
                   c.seed = seed;
                   return std::unique_ptr<Scorer>(std::make_unique<FactorModel>(train_nocontext(train, c)));
                 }});
  out.push_back({"popularity", [](const UsageCube& train, std::uint64_t) {
                   return std::unique_ptr<Scorer>(std::make_unique<PopularityScorer>(train));
                 }});
  out.push_back({"context_popularity", [config](const UsageCube& train, std::uint64_t) {
                   return std::unique_ptr<Scorer>(
                       std::make_unique<ContextPopularityScorer>(train, config.context_dims));
                 }});
  return out;
}

double EvalReport::map(const std::string& model, std::size_t k, std::optional<std::uint64_t> seed) const {
  for (const auto& r : rows) {
    if (r.model == model && r.metrics.k == k && r.seed == seed) return r.metrics.map;
  }
  throw Error("no result for " + model + " at k=" + std::to_string(k));
}

EvalReport compare(std::span<const NamedFactory> models, const UsageCube& cube, const CompareOptions& options) {
  if (options.seeds.empty()) throw ConfigError("no seeds given");
  EvalReport report;
  report.reference = options.reference;

  // model -> per k sums for the mean row
  std::map<std::string, std::vector<MetricsAtK>> sums;
  for (std::uint64_t seed : options.seeds) {
    SplitSpec spec = options.split;
    spec.seed = seed;
    const Split s = split(cube, spec);
    for (const auto& m : models) {
      const auto scorer = m.make(s.train, seed);
      const ScorerEval ev = evaluate(*scorer, s.train, s.test, options.ks);
      auto& acc = sums[m.name];
      if (acc.empty()) acc.resize(ev.by_k.size());
      for (std::size_t j = 0; j < ev.by_k.size(); ++j) {
        report.rows.push_back({m.name, seed, ev.by_k[j], ev.queries});
        acc[j].k = ev.by_k[j].k;
        acc[j].map += ev.by_k[j].map;
        acc[j].precision += ev.by_k[j].precision;
        acc[j].recall += ev.by_k[j].recall;
      }
    }
  }
  const double n = static_cast<double>(options.seeds.size());
  for (const auto& m : models) {
    for (MetricsAtK mk : sums[m.name]) {
      mk.map /= n;
      mk.precision /= n;
      mk.recall /= n;
      report.rows.push_back({m.name, std::nullopt, mk, 0});
    }
  }

  const bool has_reference = std::any_of(models.begin(), models.end(),
                                         [&](const NamedFactory& m) { return m.name == options.reference; });
  if (has_reference) {
    std::vector<std::optional<std::uint64_t>> seeds(options.seeds.begin(), options.seeds.end());
    seeds.push_back(std::nullopt);
    for (const auto& m : models) {
      if (m.name == options.reference) continue;
      for (const auto& seed : seeds) {
        for (std::size_t k : options.ks) {
          const double ref = report.map(options.reference, k, seed);
          const double base = report.map(m.name, k, seed);
          report.lifts.push_back({m.name, seed, k, base > 0 ? (ref - base) / base : 0.0});
        }
      }
    }
  }
  return report;
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  auto seed_json = [](const std::optional<std::uint64_t>& s) { return s ? nlohmann::json(*s) : nlohmann::json("mean"); };
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"model", row.model},
                    {"seed", seed_json(row.seed)},
                    {"k", row.metrics.k},
                    {"map", row.metrics.map},
                    {"precision", row.metrics.precision},
                    {"recall", row.metrics.recall},
                    {"queries", row.queries}});
  }
  nlohmann::json lifts = nlohmann::json::array();
  for (const auto& l : r.lifts) {
    lifts.push_back({{"baseline", l.baseline}, {"seed", seed_json(l.seed)}, {"k", l.k}, {"relative", l.relative}});
  }
  j = nlohmann::json{{"reference", r.reference}, {"rows", rows}, {"lifts", lifts}};
}

void write_tsv(const EvalReport& r, std::ostream& out) {
  out << "model\tseed\tk\tmap\tprecision\trecall\tqueries\n";
  for (const auto& row : r.rows) {
    out << row.model << '\t' << (row.seed ? std::to_string(*row.seed) : "mean") << '\t' << row.metrics.k << '\t'
        << row.metrics.map << '\t' << row.metrics.precision << '\t' << row.metrics.recall << '\t' << row.queries
        << '\n';
  }
  if (r.lifts.empty()) return;
  out << "\nreference\tbaseline\tseed\tk\tlift\n";
  for (const auto& l : r.lifts) {
    out << r.reference << '\t' << l.baseline << '\t' << (l.seed ? std::to_string(*l.seed) : "mean") << '\t' << l.k
        << '\t' << l.relative << '\n';
  }
}

}  // namespace ctxrec
