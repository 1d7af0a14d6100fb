#include "ctxrec/cli.hpp"

#include <CLI11.hpp>
#include <atomic>
#include <charconv>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>

#include "ctxrec/analytics.hpp"
#include "ctxrec/eval.hpp"
#include "ctxrec/event_io.hpp"
#include "ctxrec/explain.hpp"
#include "ctxrec/ingest.hpp"
#include "ctxrec/model.hpp"
#include "ctxrec/server.hpp"
#include "ctxrec/simgen.hpp"

namespace ctxrec::cli {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
std::vector<T> parse_number_list(const std::string& text, const char* what) {
  std::vector<T> out;
  for (auto part : split_fields(text, ',')) {
    const std::string s = trim(part);
    if (s.empty()) continue;
    T v{};
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) {
      throw ConfigError(std::string("invalid ") + what + " '" + s + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(std::string("empty ") + what + " list");
  return out;
}

std::vector<std::string> parse_name_list(const std::string& text) {
  std::vector<std::string> out;
  for (auto part : split_fields(text, ',')) {
    if (auto s = trim(part); !s.empty()) out.push_back(std::move(s));
  }
  return out;
}

std::ifstream open_in(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(std::string("cannot open ") + what + " " + path);
  return in;
}

// Output either to the caller's stream or to a file.
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) : out_(&fallback) {
    if (!path.empty()) {
      file_.open(path, std::ios::binary);
      if (!file_) throw Error("cannot write " + path);
      out_ = &file_;
    }
  }
  std::ostream& operator*() { return *out_; }

 private:
  std::ofstream file_;
  std::ostream* out_;
};

void write_file(const std::string& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  body(out);
  if (!out) throw Error("write failed for " + path);
}

enum class Format { tsv, json };

void add_format(CLI::App* app, Format& format) {
  const std::map<std::string, Format> names{{"tsv", Format::tsv}, {"json", Format::json}};
  app->add_option("--format", format, "Output format")->transform(CLI::CheckedTransformer(names));
}

// Context defaults: neutral values overridden by a key=value profile file.
ContextVector context_defaults(const std::string& profile_path) {
  ContextVector ctx = neutral_context();
  if (profile_path.empty()) return ctx;
  for (const auto& [key, value] : read_key_values(profile_path)) {
    const auto d = parse_dim(key);
    if (!d) throw ConfigError("unknown context dimension '" + key + "' in " + profile_path);
    ctx.set(*d, value);
  }
  return ctx;
}

ContextVector resolve_context(const std::string& text, const std::string& profile_path) {
  ContextVector ctx = parse_context(text, context_defaults(profile_path));
  (void)encode(ctx);
  return ctx;
}

UsageCube load_cube(const std::string& path, const std::string& mapping_path) {
  if (mapping_path.empty()) return parse_tuples(path);
  const ColumnMapping mapping = ColumnMapping::load_file(mapping_path);
  return parse_tuples(path, &mapping);
}

std::unordered_map<UserId, UserProfile> load_profiles(const std::string& path) {
  if (path.empty()) return {};
  auto in = open_in(path, "profiles");
  return parse_profiles(in);
}

std::unordered_map<AppId, AppInfo> load_catalog(const std::string& path) {
  if (path.empty()) return {};
  auto in = open_in(path, "catalog");
  return parse_catalog(in);
}

// ---------------------------------------------------------------------------
// Model hyperparameters shared by train and eval

struct ModelFlags {
  std::size_t latent_dim = ModelConfig{}.latent_dim;
  double learning_rate = ModelConfig{}.learning_rate;
  double regularization = ModelConfig{}.regularization;
  std::size_t epochs = ModelConfig{}.epochs;
  std::size_t negatives = ModelConfig{}.negatives_per_positive;
  double alpha = ModelConfig{}.confidence_alpha;
  std::string dims = "daytime,weekday,isweekend,location,weather";
  std::string sampling = "uniform";

  void add(CLI::App* app) {
    app->add_option("--latent-dim", latent_dim, "Latent factors per entity");
    app->add_option("--lr", learning_rate, "SGD learning rate");
    app->add_option("--reg", regularization, "L2 regularization");
    app->add_option("--epochs", epochs, "Training epochs");
    app->add_option("--negatives", negatives, "Sampled negatives per positive");
    app->add_option("--alpha", alpha, "Confidence weight slope");
    app->add_option("--dims", dims, "Modeled context dimensions, comma separated, or 'none'");
    app->add_option("--sampling", sampling, "Negative sampling")->check(CLI::IsMember({"uniform", "popularity"}));
  }

  ModelConfig config(std::uint64_t seed) const {
    ModelConfig c;
    c.latent_dim = latent_dim;
    c.learning_rate = learning_rate;
    c.regularization = regularization;
    c.epochs = epochs;
    c.negatives_per_positive = negatives;
    c.confidence_alpha = alpha;
    c.context_dims = dims == "none" ? std::vector<Dim>{} : parse_dim_list(dims);
    c.sampling = sampling == "popularity" ? NegativeSampling::popularity : NegativeSampling::uniform;
    c.seed = seed;
    c.validate();
    return c;
  }
};

// ---------------------------------------------------------------------------
// World flags shared by the simulate commands

struct WorldFlags {
  WorldSpec spec;
  std::vector<std::string> affinities;
  std::string tz = "0";
  std::string categories;

  void add(CLI::App* app) {
    app->add_option("--users", spec.n_users, "Simulated users");
    app->add_option("--apps", spec.n_apps, "Catalog size");
    app->add_option("--days", spec.n_days, "Simulated days");
    app->add_option("--start", spec.start_ts, "First simulated second (Unix time)");
    app->add_option("--zipf", spec.zipf_exponent, "App popularity exponent");
    app->add_option("--taste-sigma", spec.taste_sigma, "Per-user category taste spread");
    app->add_option("--noise", spec.location_noise, "Location noise probability");
    app->add_option("--work-dwell", spec.work_dwell, "P(at work) during office hours");
    app->add_option("--broken", spec.broken_fraction, "Share of users with broken data");
    app->add_option("--categories", categories, "Categories as NAME:WEIGHT, comma separated");
    app->add_option("--tz", tz, "Timezone offsets in seconds, comma separated, dealt to users in turn");
    app->add_option("--affinity", affinities,
                    "Planted effect TARGET:DIM=VALUE:GAMMA; TARGET is a category or app/ID")
        ->take_all();
  }

  WorldSpec build(std::uint64_t seed) const {
    WorldSpec s = spec;
    s.seed = seed;
    s.tz_offsets = parse_number_list<int>(tz, "timezone offset");
    if (!categories.empty()) s.categories = parse_categories(categories);
    for (const auto& text : affinities) s.affinities.push_back(parse_affinity(text));
    s.validate();
    return s;
  }

  static std::vector<CategorySpec> parse_categories(const std::string& text) {
    std::vector<CategorySpec> out;
    for (const auto& item : parse_name_list(text)) {
      const auto colon = item.find(':');
      CategorySpec c;
      c.name = trim(item.substr(0, colon));
      if (colon != std::string::npos) {
        const std::string w = trim(item.substr(colon + 1));
        const auto r = std::from_chars(w.data(), w.data() + w.size(), c.weight);
        if (r.ec != std::errc{} || r.ptr != w.data() + w.size() || !(c.weight > 0)) {
          throw ConfigError("invalid category weight in '" + item + "'");
        }
      }
      out.push_back(std::move(c));
    }
    return out;
  }

  static Affinity parse_affinity(const std::string& text) {
    const auto parts = split_fields(text, ':');
    if (parts.size() != 3) throw ConfigError("affinity must look like TARGET:DIM=VALUE:GAMMA, got '" + text + "'");
    Affinity a;
    std::string target = trim(parts[0]);
    if (target.starts_with("app/")) {
      a.is_app = true;
      target = target.substr(4);
    }
    if (target.empty()) throw ConfigError("affinity target is empty in '" + text + "'");
    a.target = target;
    const std::string cond = trim(parts[1]);
    const auto eq = cond.find('=');
    if (eq == std::string::npos) throw ConfigError("affinity condition must be DIM=VALUE in '" + text + "'");
    const auto d = parse_dim(cond.substr(0, eq));
    if (!d) throw ConfigError("unknown dimension in affinity '" + text + "'");
    a.dim = *d;
    a.value = cond.substr(eq + 1);
    if (!encode_value(a.dim, a.value)) throw ConfigError("invalid value in affinity '" + text + "'");
    const std::string g = trim(parts[2]);
    const auto r = std::from_chars(g.data(), g.data() + g.size(), a.gamma);
    if (r.ec != std::errc{} || r.ptr != g.data() + g.size() || !(a.gamma > 0)) {
      throw ConfigError("invalid gamma in affinity '" + text + "'");
    }
    return a;
  }
};

// ---------------------------------------------------------------------------
// Commands

using Action = std::function<void()>;

void add_ingest(CLI::App& root, Action& action, std::ostream& out, std::ostream& err) {
  struct Opts {
    std::string dir, samples, profiles, catalog, cities, weather, failures;
    std::string tuples, mapping;
    std::string out, events_out, report_out, places_out;
    std::size_t min_days = 3;
    std::int64_t gap = kDefaultRunGapSeconds;
  };
  auto o = std::make_shared<Opts>();
  auto* app = root.add_subcommand("ingest", "Build canonical usage tuples from raw samples or an external dataset");
  app->add_option("--dir", o->dir, "Directory written by 'simulate usage'; fills the input paths below");
  app->add_option("--samples", o->samples, "Raw device samples TSV");
  app->add_option("--profiles", o->profiles, "User profiles TSV");
  app->add_option("--catalog", o->catalog, "App catalog TSV");
  app->add_option("--cities", o->cities, "City centers TSV");
  app->add_option("--weather", o->weather, "Weather table TSV");
  app->add_option("--failures", o->failures, "User ids whose retrieval failed, one per line");
  app->add_option("--tuples", o->tuples, "External usage tuple file to convert instead of raw samples");
  app->add_option("--mapping", o->mapping, "Column mapping for --tuples");
  app->add_option("--min-days", o->min_days, "Days needed for a home or work label");
  app->add_option("--gap", o->gap, "Sampling gap in seconds that ends a usage run");
  app->add_option("--out", o->out, "Usage tuples output (default stdout)");
  app->add_option("--events-out", o->events_out, "Usage events TSV output");
  app->add_option("--report-out", o->report_out, "Cleaning report TSV output");
  app->add_option("--places-out", o->places_out, "Inferred home and work labels TSV output");
  app->callback([&action, &out, &err, o] {
    action = [&out, &err, o] {
      Sink sink(o->out, out);
      if (!o->tuples.empty()) {
        write_tuples(load_cube(o->tuples, o->mapping), *sink);
        return;
      }
      auto pick = [&](const std::string& given, const char* name) {
        if (!given.empty() || o->dir.empty()) return given;
        const fs::path p = fs::path(o->dir) / name;
        return fs::exists(p) ? p.string() : std::string();
      };
      const std::string samples = pick(o->samples, "samples.tsv");
      if (samples.empty()) throw ConfigError("ingest needs --samples, --dir or --tuples");
      PipelineInput input;
      {
        auto in = open_in(samples, "samples");
        input.samples = parse_raw_samples(in);
      }
      input.enrichment.profiles = load_profiles(pick(o->profiles, "profiles.tsv"));
      input.enrichment.catalog = load_catalog(pick(o->catalog, "catalog.tsv"));
      if (const auto p = pick(o->cities, "cities.tsv"); !p.empty()) {
        auto in = open_in(p, "cities");
        input.enrichment.cities = load_city_centers(in);
      }
      if (const auto p = pick(o->weather, "weather.tsv"); !p.empty()) {
        input.enrichment.weather = std::make_shared<FileWeatherProvider>(FileWeatherProvider::load_file(p));
      }
      if (const auto p = pick(o->failures, "failures.txt"); !p.empty()) {
        auto in = open_in(p, "failures");
        std::string line;
        while (std::getline(in, line)) {
          if (auto id = trim(line); !id.empty() && id.front() != '#') input.retrieval_failures.emplace_back(id);
        }
      }
      input.min_days = o->min_days;
      input.max_gap_seconds = o->gap;
      const PipelineResult r = run_pipeline(std::move(input));
      write_tuples(r.cube, *sink);
      if (!o->events_out.empty()) write_file(o->events_out, [&](std::ostream& f) { write_events(r.events, f); });
      if (!o->report_out.empty()) write_file(o->report_out, [&](std::ostream& f) { write_clean_report(r.report, f); });
      if (!o->places_out.empty()) {
        write_file(o->places_out, [&](std::ostream& f) {
          f << "user\thome\twork\thome_support\twork_support\thome_days\twork_days\n";
          for (const auto& p : r.places) {
            f << p.user.str() << '\t' << p.home.value_or("") << '\t' << p.work.value_or("") << '\t'
              << p.home_support << '\t' << p.work_support << '\t' << p.home_days << '\t' << p.work_days << '\n';
          }
        });
      }
      err << "ingest: " << r.cube.num_users() << " users, " << r.cube.num_apps() << " apps, " << r.cube.size()
          << " tuples, " << r.events.size() << " usage events, " << r.report.size() << " users dropped\n";
    };
  });
}

void add_train(CLI::App& root, Action& action, std::ostream& err) {
  struct Opts {
    std::string data, mapping, out, loss_out;
    std::uint64_t seed = ModelConfig{}.seed;
    bool no_context = false;
    ModelFlags model;
  };
  auto o = std::make_shared<Opts>();
  auto* app = root.add_subcommand("train", "Train a factorization model");
  app->add_option("--data", o->data, "Usage tuples TSV")->required();
  app->add_option("--mapping", o->mapping, "Column mapping for --data");
  app->add_option("--out", o->out, "Model file to write")->required();
  app->add_option("--seed", o->seed, "Random seed");
  app->add_flag("--no-context", o->no_context, "Train without context dimensions");
  app->add_option("--loss-out", o->loss_out, "Per-epoch mean loss TSV");
  o->model.add(app);
  app->callback([&action, &err, o] {
    action = [&err, o] {
      const UsageCube cube = load_cube(o->data, o->mapping);
      ModelConfig cfg = o->model.config(o->seed);
      const FactorModel model = o->no_context ? train_nocontext(cube, cfg) : train(cube, cfg);
      save_model(model, o->out);
      if (!o->loss_out.empty()) {
        write_file(o->loss_out, [&](std::ostream& f) {
          f << "epoch\tloss\n";
          for (std::size_t e = 0; e < model.loss_trace().size(); ++e) f << e + 1 << '\t' << fmt(model.loss_trace()[e]) << '\n';
        });
      }
      err << "train: " << model.num_users() << " users, " << model.num_apps() << " apps, version "
          << model_fingerprint(model) << '\n';
    };
  });
}

void add_recommend(CLI::App& root, Action& action, std::ostream& out) {
  struct Opts {
    std::string model, data, user, context, display, profile, out;
    std::size_t n = 21;
    bool include_installed = false;
    bool no_fallback = false;
    Format format = Format::tsv;
  };
  auto o = std::make_shared<Opts>();
  auto* app = root.add_subcommand("recommend", "Top-n apps for a user in a context");
  app->add_option("--model", o->model, "Model file")->required();
  app->add_option("--data", o->data, "Usage tuples used for explanations and cold start");
  app->add_option("--user", o->user, "User id")->required();
  app->add_option("--context", o->context, "Context as dim=value pairs");
  app->add_option("--profile", o->profile, "key=value file of context defaults");
  app->add_option("--display", o->display, "Display labels as dim=value pairs, e.g. city=Madrid");
  app->add_option("--n", o->n, "Number of apps");
  app->add_flag("--include-installed", o->include_installed, "Keep apps the user already uses");
  app->add_flag("--no-fallback", o->no_fallback, "Fail for users unknown to the model");
  app->add_option("--out", o->out, "Output path");
  add_format(app, o->format);
  app->callback([&action, &out, o] {
    action = [&out, o] {
      ServerConfig cfg;
      cfg.model_path = o->model;
      cfg.data_path = o->data;
      cfg.fallback = !o->no_fallback;
      cfg.context_defaults = context_defaults(o->profile);
      cfg.max_n = std::max(cfg.max_n, o->n);
      const Service service(cfg);
      json req{{"user", o->user}, {"n", o->n}, {"exclude_installed", !o->include_installed}};
      if (!o->context.empty()) req["context"] = o->context;
      if (!o->display.empty()) req["display"] = o->display;
      const auto resp = service.recommend(req.dump());
      const json body = json::parse(resp.body);
      if (resp.status == 400) throw ConfigError(body.value("error", "bad request"));
      if (resp.status == 404) throw ColdStartError(body.value("error", "unknown user"));
      if (resp.status != 200) throw Error(body.value("error", "request failed"));
      Sink sink(o->out, out);
      if (o->format == Format::json) {
        *sink << body.dump(2) << '\n';
        return;
      }
      if (body["cold_start"].get<bool>()) *sink << "# cold start: unknown user, popularity fallback\n";
      *sink << "rank\tapp\tcategory\tscore\texplanation\n";
      for (const auto& item : body["items"]) {
        *sink << item["rank"].get<std::size_t>() << '\t' << item["app"].get<std::string>() << '\t'
              << item["category"].get<std::string>() << '\t' << fmt(item["score"].get<double>()) << '\t'
              << item["explanation"].get<std::string>() << '\n';
      }
    };
  });
}

void add_explain(CLI::App& root, Action& action, std::ostream& out) {
  struct Opts {
    std::string data, mapping, context, display, profile, dims, df = "cardinality", out;
    std::vector<std::string> apps;
    std::size_t max_factors = 3;
    double significance = 0.1;
    bool all = false;
    Format format = Format::tsv;
  };
  auto o = std::make_shared<Opts>();
  auto* app = root.add_subcommand("explain", "Contextual explanation for apps in a context");
  app->add_option("--data", o->data, "Usage tuples TSV")->required();
  app->add_option("--mapping", o->mapping, "Column mapping for --data");
  app->add_option("--app", o->apps, "App id (repeatable)")->required();
  app->add_option("--context", o->context, "Context as dim=value pairs");
  app->add_option("--profile", o->profile, "key=value file of context defaults");
  app->add_option("--display", o->display, "Display labels as dim=value pairs");
  app->add_option("--dims", o->dims, "Dimensions to test, comma separated");
  app->add_option("--df", o->df, "Degrees of freedom rule")->check(CLI::IsMember({"cardinality", "conventional", "paper"}));
  app->add_option("--max", o->max_factors, "Most factors to report");
  app->add_option("--significance", o->significance, "p-value threshold");
  app->add_flag("--all", o->all, "List every evaluated dimension, not only the selected ones");
  app->add_option("--out", o->out, "Output path");
  add_format(app, o->format);
  app->callback([&action, &out, o] {
    action = [&out, o] {
      const UsageCube cube = load_cube(o->data, o->mapping);
      const ContextVector ctx = resolve_context(o->context, o->profile);
      const ContextVector display = parse_context(o->display);
      ExplainOptions opts;
      opts.max_factors = o->max_factors;
      opts.significance = o->significance;
      opts.df_convention = *parse_df_convention(o->df);
      if (!o->dims.empty()) opts.dims = parse_dim_list(o->dims);
      Sink sink(o->out, out);
      json reports = json::array();
      for (const auto& id : o->apps) {
        const AppId app_id(id);
        const ExplanationReport r = explain(cube, app_id, ctx, opts, display);
        std::vector<FactorStat> all;
        if (o->all) {
          if (const auto a = cube.find_app(app_id)) all = evaluate_factors(cube, *a, ctx, opts);
        }
        if (o->format == Format::json) {
          json j = r;
          if (o->all) j["candidates"] = all;
          reports.push_back(std::move(j));
          continue;
        }
        *sink << "app\t" << id << '\n' << "text\t" << r.text << '\n';
        *sink << "dim\tvalue\tobserved\texpected\tchi2\tdf\tp\tselected\n";
        const auto& rows = o->all ? all : r.selected;
        for (const auto& f : rows) {
          const bool chosen = std::find(r.selected.begin(), r.selected.end(), f) != r.selected.end();
          *sink << dim_name(f.dim) << '\t' << f.value << '\t' << f.observed << '\t' << fmt(f.expected) << '\t'
                << fmt(f.chi2) << '\t' << f.df << '\t' << fmt(f.p) << '\t' << (chosen ? "yes" : "no") << '\n';
        }
      }
      if (o->format == Format::json) *sink << (reports.size() == 1 ? reports[0] : reports).dump(2) << '\n';
    };
  });
}

void add_eval(CLI::App& root, Action& action, std::ostream& out) {
  struct Opts {
    std::string data, mapping, out;
    std::string seeds = "1,2,3", ks = "3,10,21", strategy = "per-user-random";
    std::string models = "context_tf,mf_nocontext,popularity,context_popularity";
    std::string reference = "context_tf";
    double test_fraction = 0.2;
    ModelFlags model;
    Format format = Format::tsv;
  };
  auto o = std::make_shared<Opts>();
  auto* app = root.add_subcommand("eval", "Offline comparison of models over seeded splits");
  app->add_option("--data", o->data, "Usage tuples TSV")->required();
  app->add_option("--mapping", o->mapping, "Column mapping for --data");
  app->add_option("--seeds", o->seeds, "Seeds, comma separated");
  app->add_option("--ks", o->ks, "Cutoffs, comma separated");
  app->add_option("--split", o->strategy, "Split strategy")->check(CLI::IsMember({"per-user-random", "temporal"}));
  app->add_option("--test-fraction", o->test_fraction, "Held-out share per user");
  app->add_option("--models", o->models,
                  "Models: context_tf, mf_nocontext, popularity, context_popularity, random");
  app->add_option("--reference", o->reference, "Model the lifts are computed for");
  app->add_option("--out", o->out, "Output path");
  o->model.add(app);
  add_format(app, o->format);
  app->callback([&action, &out, o] {
    action = [&out, o] {
      const UsageCube cube = load_cube(o->data, o->mapping);
      const ModelConfig cfg = o->model.config(ModelConfig{}.seed);
      std::vector<NamedFactory> available = default_factories(cfg);
      available.push_back({"random", [](const UsageCube& train, std::uint64_t seed) -> std::unique_ptr<Scorer> {
                             return std::make_unique<RandomScorer>(train, seed);
                           }});
      std::vector<NamedFactory> chosen;
      for (const auto& name : parse_name_list(o->models)) {
        const auto it = std::find_if(available.begin(), available.end(), [&](const auto& f) { return f.name == name; });
        if (it == available.end()) throw ConfigError("unknown model '" + name + "'");
        chosen.push_back(*it);
      }
      CompareOptions opts;
      opts.split.strategy = *parse_split_strategy(o->strategy);
      opts.split.test_fraction = o->test_fraction;
      opts.split.validate();
      opts.seeds = parse_number_list<std::uint64_t>(o->seeds, "seed");
      opts.ks = parse_number_list<std::size_t>(o->ks, "cutoff");
      opts.reference = o->reference;
      const EvalReport report = compare(chosen, cube, opts);
      Sink sink(o->out, out);
      if (o->format == Format::json) {
        *sink << json(report).dump(2) << '\n';
      } else {
        write_tsv(report, *sink);
      }
    };
  });
}

void add_analyze(CLI::App& root, Action& action, std::ostream& out) {
  struct Opts {
    std::string events, log, data, mapping, profiles, catalog, out;
    std::string rows = "category", cols = "location,isweekend", source = "events", svg;
    std::string rules;
    std::size_t top_n = 10;
    std::int64_t window = 24 * 3600;
    std::uint64_t min_installs = 10;
    int width = 800, height = 600;
    Format format = Format::tsv;
  };
  auto o = std::make_shared<Opts>();
  auto* app = root.add_subcommand("analyze", "Usage analytics reports");
  app->require_subcommand(1);

  auto inputs = [o](CLI::App* sub) {
    sub->add_option("--events", o->events, "Interaction events TSV");
    sub->add_option("--log", o->log, "Binary event log written by the server");
    sub->add_option("--out", o->out, "Output path");
    add_format(sub, o->format);
  };
  auto cube_input = [o](CLI::App* sub) {
    sub->add_option("--data", o->data, "Usage tuples TSV");
    sub->add_option("--mapping", o->mapping, "Column mapping for --data");
    sub->add_option("--source", o->source, "Count usage events or cube tuples")->check(CLI::IsMember({"events", "cube"}));
  };
  auto load_events = [o] {
    if (o->events.empty() && o->log.empty()) throw ConfigError("give --events and/or --log");
    std::vector<InteractionEvent> events;
    if (!o->events.empty()) events = read_events(o->events);
    if (!o->log.empty()) {
      auto logged = read_event_log(o->log).events;
      events.insert(events.end(), logged.begin(), logged.end());
    }
    return prepare_for_analytics(std::move(events));
  };
  auto emit = [o, &out](const auto& report) {
    Sink sink(o->out, out);
    if (o->format == Format::json) {
      *sink << json(report).dump(2) << '\n';
    } else {
      write_tsv(report, *sink);
    }
  };
  auto table = [o, load_events] {
    const RowSelector rows = RowSelector::parse(o->rows);
    const std::vector<Dim> cols = parse_dim_list(o->cols);
    if (o->source == "cube") {
      if (o->data.empty()) throw ConfigError("--source cube needs --data");
      return contingency(load_cube(o->data, o->mapping), rows, cols);
    }
    return contingency(load_events(), rows, cols);
  };

  auto* funnel_cmd = app->add_subcommand("funnel", "Shown, viewed, installed and used conversion");
  inputs(funnel_cmd);
  funnel_cmd->add_option("--window", o->window, "Direct-use window in seconds");
  funnel_cmd->add_option("--min-installs", o->min_installs, "Installs needed for a category row");
  funnel_cmd->callback([&action, o, load_events, emit] {
    action = [o, load_events, emit] {
      FunnelOptions opts;
      opts.direct_use_window_seconds = o->window;
      opts.min_category_installs = o->min_installs;
      emit(funnel(load_events(), opts));
    };
  });

  auto* conversion_cmd = app->add_subcommand("conversion", "Per-category view to install conversion");
  inputs(conversion_cmd);
  conversion_cmd->add_option("--window", o->window, "Direct-use window in seconds");
  conversion_cmd->add_option("--min-installs", o->min_installs, "Installs needed for a category row");
  conversion_cmd->callback([&action, &out, o, load_events] {
    action = [&out, o, load_events] {
      FunnelOptions opts;
      opts.direct_use_window_seconds = o->window;
      const auto rows = category_conversion(load_events(), o->min_installs, opts);
      Sink sink(o->out, out);
      if (o->format == Format::json) {
        *sink << json(rows).dump(2) << '\n';
      } else {
        write_tsv(std::span<const CategoryFunnel>(rows), *sink);
      }
    };
  });

  auto* mosaic_cmd = app->add_subcommand("mosaic", "Mosaic layout of a contingency table");
  inputs(mosaic_cmd);
  cube_input(mosaic_cmd);
  mosaic_cmd->add_option("--rows", o->rows, "app, category or a dimension");
  mosaic_cmd->add_option("--cols", o->cols, "Column dimensions, comma separated");
  mosaic_cmd->add_option("--svg", o->svg, "Also write the mosaic as SVG");
  mosaic_cmd->add_option("--width", o->width, "SVG width");
  mosaic_cmd->add_option("--height", o->height, "SVG height");
  mosaic_cmd->callback([&action, o, table, emit] {
    action = [o, table, emit] {
      const MosaicLayout layout = mosaic_export(table());
      if (!o->svg.empty()) {
        write_file(o->svg, [&](std::ostream& f) { f << render_mosaic_svg(layout, o->width, o->height); });
      }
      emit(layout);
    };
  });

  auto* contingency_cmd = app->add_subcommand("contingency", "Observed, expected and residual counts");
  inputs(contingency_cmd);
  cube_input(contingency_cmd);
  contingency_cmd->add_option("--rows", o->rows, "app, category or a dimension");
  contingency_cmd->add_option("--cols", o->cols, "Column dimensions, comma separated");
  contingency_cmd->callback([&action, table, emit] { action = [table, emit] { emit(table()); }; });

  auto* uninstall_cmd = app->add_subcommand("uninstall", "Time from install to uninstall");
  inputs(uninstall_cmd);
  uninstall_cmd->callback([&action, load_events, emit] {
    action = [load_events, emit] { emit(uninstall_ttl(load_events())); };
  });

  auto* wtf_cmd = app->add_subcommand("wtf", "Recommendations that violate profile rules");
  inputs(wtf_cmd);
  wtf_cmd->add_option("--profiles", o->profiles, "User profiles TSV");
  wtf_cmd->add_option("--catalog", o->catalog, "App catalog TSV");
  wtf_cmd->add_option("--rules", o->rules, "Rules, comma separated: language_mismatch, profile_tag_mismatch");
  wtf_cmd->add_option("--top-n", o->top_n, "Items per list to check");
  wtf_cmd->callback([&action, o, load_events, emit] {
    action = [o, load_events, emit] {
      const auto rules = make_wtf_rules(parse_name_list(o->rules));
      const auto events = load_events();
      emit(wtf_score(shown_lists(events), load_profiles(o->profiles), load_catalog(o->catalog), rules, o->top_n));
    };
  });

  auto* location_cmd = app->add_subcommand("location", "Usage share at home, work and elsewhere");
  inputs(location_cmd);
  cube_input(location_cmd);
  location_cmd->callback([&action, o, load_events, emit] {
    action = [o, load_events, emit] {
      if (o->source == "cube") {
        if (o->data.empty()) throw ConfigError("--source cube needs --data");
        emit(location_share(load_cube(o->data, o->mapping)));
      } else {
        emit(location_share(load_events()));
      }
    };
  });
}

void add_simulate(CLI::App& root, Action& action, std::ostream& out, std::ostream& err) {
  auto* app = root.add_subcommand("simulate", "Synthetic worlds with planted effects");
  app->require_subcommand(1);

  struct UsageOpts {
    WorldFlags world;
    std::uint64_t seed = 1;
    std::size_t events = 10000;
    std::string out_dir;
  };
  auto u = std::make_shared<UsageOpts>();
  auto* usage = app->add_subcommand("usage", "Raw device samples, profiles, catalog, cities, weather and truth");
  u->world.add(usage);
  usage->add_option("--seed", u->seed, "Random seed");
  usage->add_option("--events", u->events, "Usage runs to generate");
  usage->add_option("--out-dir", u->out_dir, "Output directory")->required();
  usage->callback([&action, &err, u] {
    action = [&err, u] {
      const GeneratedUsage g = generate_usage(u->world.build(u->seed), u->events);
      fs::create_directories(u->out_dir);
      const fs::path dir(u->out_dir);
      write_file((dir / "samples.tsv").string(), [&](std::ostream& f) { write_raw_samples(g.samples, f); });
      write_file((dir / "profiles.tsv").string(), [&](std::ostream& f) { write_profiles(g.profiles, f); });
      write_file((dir / "catalog.tsv").string(), [&](std::ostream& f) { write_catalog(g.catalog, f); });
      write_file((dir / "cities.tsv").string(), [&](std::ostream& f) { write_city_centers(g.cities, f); });
      write_file((dir / "weather.tsv").string(), [&](std::ostream& f) { write_weather_table(g.weather, f); });
      write_file((dir / "failures.txt").string(), [&](std::ostream& f) {
        for (const auto& id : g.retrieval_failures) f << id.str() << '\n';
      });
      write_file((dir / "truth.json").string(), [&](std::ostream& f) { f << json(g.truth).dump(2) << '\n'; });
      err << "simulate usage: " << g.samples.size() << " samples for " << g.profiles.size() << " users in "
          << u->out_dir << '\n';
    };
  });

  struct SessionOpts {
    WorldFlags world;
    SessionSimConfig sim;
    std::uint64_t seed = 1;
    std::size_t sessions = 1000;
    std::size_t stop_views = 0, stop_installs = 0;
    std::string model, out, catalog_out;
  };
  auto s = std::make_shared<SessionOpts>();
  auto* sessions = app->add_subcommand("sessions", "Recommendation sessions as an interaction event log");
  s->world.add(sessions);
  sessions->add_option("--seed", s->seed, "Random seed");
  sessions->add_option("--sessions", s->sessions, "Most sessions to simulate");
  sessions->add_option("--list-size", s->sim.list_size, "Apps shown per session");
  sessions->add_option("--p-view", s->sim.p_view, "P(view) per shown app");
  sessions->add_option("--p-install", s->sim.p_install, "P(install) per view");
  sessions->add_option("--p-direct", s->sim.p_direct, "P(use within the window) per install");
  sessions->add_option("--window", s->sim.direct_window_seconds, "Direct-use window in seconds");
  sessions->add_option("--p-late-use", s->sim.p_late_use, "P(later use) when not used directly");
  sessions->add_option("--p-uninstall", s->sim.p_uninstall, "P(uninstall) per install");
  sessions->add_option("--stop-after-views", s->stop_views, "Stop once this many views happened");
  sessions->add_option("--stop-after-installs", s->stop_installs, "Stop once this many installs happened");
  sessions->add_option("--model", s->model, "Model whose top apps are shown to known users");
  sessions->add_option("--out", s->out, "Events TSV output (default stdout)");
  sessions->add_option("--catalog-out", s->catalog_out, "Also write the world's catalog");
  sessions->callback([&action, &out, &err, s] {
    action = [&out, &err, s] {
      const WorldSpec spec = s->world.build(s->seed);
      SessionSimConfig cfg = s->sim;
      cfg.seed = s->seed;
      if (s->stop_views > 0) cfg.stop_after_views = s->stop_views;
      if (s->stop_installs > 0) cfg.stop_after_installs = s->stop_installs;
      std::optional<FactorModel> model;
      if (!s->model.empty()) model = load_model(s->model);
      const auto events = simulate_sessions(spec, cfg, s->sessions, model ? &*model : nullptr);
      Sink sink(s->out, out);
      write_events(events, *sink);
      if (!s->catalog_out.empty()) {
        write_file(s->catalog_out, [&](std::ostream& f) { write_catalog(world_catalog(spec), f); });
      }
      err << "simulate sessions: " << events.size() << " events\n";
    };
  });
}

std::atomic<Server*> g_server{nullptr};

extern "C" void on_signal(int) {
  if (Server* s = g_server.load()) s->stop();
}

void add_serve(CLI::App& root, Action& action, std::ostream& err) {
  struct Opts {
    ServerConfig cfg;
    std::string rules, profile, df = "cardinality";
    bool no_fallback = false;
  };
  auto o = std::make_shared<Opts>();
  auto* app = root.add_subcommand("serve", "Run the HTTP recommendation service");
  auto& c = o->cfg;
  app->add_option("--host", c.host, "Listen address")->envname("CTXREC_HOST");
  app->add_option("--port", c.port, "Listen port, 0 for any")->envname("CTXREC_PORT");
  app->add_option("--threads", c.threads, "Worker threads")->envname("CTXREC_THREADS");
  app->add_option("--model", c.model_path, "Model file")->envname("CTXREC_MODEL");
  app->add_option("--data", c.data_path, "Usage tuples for explanations and cold start")->envname("CTXREC_DATA");
  app->add_option("--event-log", c.event_log_path, "Append-only feedback log")->envname("CTXREC_EVENT_LOG");
  app->add_option("--events", c.events_path, "Events TSV preloaded for analytics")->envname("CTXREC_EVENTS");
  app->add_option("--profiles", c.profiles_path, "User profiles TSV")->envname("CTXREC_PROFILES");
  app->add_option("--catalog", c.catalog_path, "App catalog TSV")->envname("CTXREC_CATALOG");
  app->add_option("--ui-dir", c.ui_dir, "Static files served under /ui")->envname("CTXREC_UI_DIR");
  app->add_flag("--no-fallback", o->no_fallback, "404 for users unknown to the model")->envname("CTXREC_NO_FALLBACK");
  app->add_option("--n", c.default_n, "Default list length")->envname("CTXREC_DEFAULT_N");
  app->add_option("--max-n", c.max_n, "Largest accepted n");
  app->add_option("--profile", o->profile, "key=value file of context defaults");
  app->add_option("--wtf-rules", o->rules, "WTF rules, comma separated");
  app->add_option("--df", o->df, "Degrees of freedom rule")->check(CLI::IsMember({"cardinality", "conventional", "paper"}));
  app->callback([&action, &err, o] {
    action = [&err, o] {
      ServerConfig cfg = o->cfg;
      cfg.fallback = !o->no_fallback;
      cfg.context_defaults = context_defaults(o->profile);
      cfg.wtf_rules = parse_name_list(o->rules);
      cfg.explain.df_convention = *parse_df_convention(o->df);
      if (cfg.default_n < 1 || cfg.default_n > cfg.max_n) throw ConfigError("--n must be between 1 and --max-n");
      Server server(cfg);
      const int port = server.bind();
      err << "serving on " << cfg.host << ':' << port << '\n' << std::flush;
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      server.listen();
      g_server = nullptr;
    };
  });
}

// Appends `--key=value` for every config entry whose option was not given
// on the command line.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].starts_with("--config=")) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  for (const auto& [key, value] : read_key_values(path)) {
    const std::string flag = "--" + key;
    const bool given = std::any_of(args.begin(), args.end(),
                                   [&](const std::string& a) { return a == flag || a.starts_with(flag + "="); });
    if (!given) args.push_back(flag + "=" + value);
  }
  return args;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string row = trim(line);
    if (row.empty()) continue;
    const auto eq = row.find('=');
    if (eq == std::string::npos || trim(row.substr(0, eq)).empty()) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
    }
    out.emplace_back(trim(row.substr(0, eq)), trim(row.substr(eq + 1)));
  }
  return out;
}

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Context-aware app recommendation workbench", "ctxrec"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "key=value file supplying option defaults");
  app.fallthrough();

  Action action;
  add_ingest(app, action, out, err);
  add_train(app, action, err);
  add_recommend(app, action, out);
  add_explain(app, action, out);
  add_eval(app, action, out);
  add_analyze(app, action, out);
  add_simulate(app, action, out, err);
  add_serve(app, action, err);

  try {
    std::vector<std::string> args = expand_config(raw_args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* shown = &app;
    for (const CLI::App* sub = &app; sub != nullptr;) {
      const auto subs = sub->get_subcommands();
      sub = subs.empty() ? nullptr : subs.front();
      if (sub) shown = sub;
    }
    err << shown->help();
    return kUsageError;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }

  try {
    if (action) action();
    return kOk;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kNumericError;
  } catch (const UndefinedStatisticError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kNumericError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
}

}  // namespace ctxrec::cli
