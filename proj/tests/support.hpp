#pragma once

#include <algorithm>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ctxrec/domain.hpp"
#include "ctxrec/ingest.hpp"

namespace ctxrec::testing {

inline ContextVector ctx(std::string_view pairs) { return parse_context(pairs, neutral_context()); }

inline UsageTuple tuple(const std::string& user, const std::string& app, std::string_view pairs,
                        std::uint64_t count, const std::string& category = "tools") {
  UsageTuple t;
  t.user = UserId(user);
  t.app = AppId(app);
  t.category = category;
  t.context = ctx(pairs);
  t.count = count;
  return t;
}

inline UsageCube cube_of(const std::vector<UsageTuple>& tuples) {
  UsageCube cube;
  for (const auto& t : tuples) cube.add(t);
  return cube;
}

// A valid context with every closed dimension drawn uniformly.
inline ContextVector random_context(std::mt19937_64& rng) {
  ContextVector v;
  for (Dim d : all_dims()) {
    if (d == Dim::country) {
      static constexpr const char* kCountries[] = {"ES", "DE", "GB", "unknown"};
      v.set(d, kCountries[std::uniform_int_distribution<int>(0, 3)(rng)]);
      continue;
    }
    const auto& values = dimension(d).values;
    v.set(d, std::string(values[std::uniform_int_distribution<std::size_t>(0, values.size() - 1)(rng)]));
  }
  return v;
}

// Small random cube for the explanation oracle: up to 5 apps, up to 3
// varying dimensions, counts up to 20.
struct FuzzedCube {
  std::vector<UsageTuple> tuples;
  std::vector<Dim> dims;
};

inline FuzzedCube fuzz_cube(std::mt19937_64& rng) {
  static const std::vector<Dim> kCandidates = {Dim::daytime, Dim::weekday, Dim::isweekend, Dim::location,
                                               Dim::city,    Dim::country, Dim::weather};
  FuzzedCube f;
  std::vector<Dim> pool = kCandidates;
  std::shuffle(pool.begin(), pool.end(), rng);
  f.dims.assign(pool.begin(), pool.begin() + std::uniform_int_distribution<int>(1, 3)(rng));
  const int n_apps = std::uniform_int_distribution<int>(1, 5)(rng);
  const int n = std::uniform_int_distribution<int>(1, 30)(rng);
  for (int i = 0; i < n; ++i) {
    UsageTuple t;
    t.user = UserId("u" + std::to_string(rng() % 4));
    t.app = AppId("a" + std::to_string(rng() % n_apps));
    const ContextVector r = random_context(rng);
    t.context = neutral_context();
    for (Dim d : f.dims) t.context.set(d, r.get(d));
    t.count = std::uniform_int_distribution<std::uint64_t>(1, 20)(rng);
    f.tuples.push_back(std::move(t));
  }
  return f;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("ctxrec-test-" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace ctxrec::testing
