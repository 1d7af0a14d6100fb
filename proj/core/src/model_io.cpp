#include <cstring>
#include <fstream>
#include <iterator>

#include "ctxrec/model.hpp"

namespace ctxrec {
namespace {

constexpr char kMagic[8] = {'C', 'A', 'R', 'S', 'M', 'D', 'L', '1'};

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  return h;
}

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    u64(bits);
  }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void raw(std::span<const char> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }
  void doubles(std::span<const double> values) {
    for (double v : values) f64(v);
  }
  std::vector<std::uint8_t>& bytes() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    const auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    const auto b = take(n);
    return {b.begin(), b.end()};
  }
  // Element count that must fit in the remaining bytes at `min_size` each.
  std::size_t count(std::size_t min_size) {
    const std::uint32_t n = u32();
    if (min_size > 0 && n > remaining() / min_size) truncated();
    return n;
  }
  void doubles(std::span<double> out) {
    if (out.size() > remaining() / 8) truncated();
    for (double& v : out) v = f64();
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > remaining()) truncated();
    const auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  [[noreturn]] static void truncated() { throw FormatError("model file is truncated"); }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_model(const FactorModel& m) {
  Writer w;
  w.raw(kMagic);
  w.u32(kModelFormatVersion);

  const ModelConfig& c = m.config();
  w.u32(static_cast<std::uint32_t>(c.latent_dim));
  w.f64(c.learning_rate);
  w.f64(c.regularization);
  w.u64(c.epochs);
  w.u64(c.negatives_per_positive);
  w.f64(c.confidence_alpha);
  w.u8(static_cast<std::uint8_t>(c.sampling));
  w.u64(c.seed);

  w.u32(static_cast<std::uint32_t>(c.context_dims.size()));
  for (std::size_t j = 0; j < c.context_dims.size(); ++j) {
    w.u8(static_cast<std::uint8_t>(c.context_dims[j]));
    w.u32(static_cast<std::uint32_t>(m.dim_values()[j].size()));
    for (const auto& label : m.dim_values()[j]) w.str(label);
  }

  w.u32(static_cast<std::uint32_t>(m.num_users()));
  for (std::uint32_t u = 0; u < m.num_users(); ++u) w.str(m.user(u).str());
  w.u32(static_cast<std::uint32_t>(m.num_apps()));
  for (std::uint32_t a = 0; a < m.num_apps(); ++a) {
    w.str(m.app(a).str());
    w.str(m.category(a));
    w.u64(m.popularity(a));
  }
  for (std::uint32_t u = 0; u < m.num_users(); ++u) {
    const auto apps = m.installed(u);
    w.u32(static_cast<std::uint32_t>(apps.size()));
    for (std::uint32_t a : apps) w.u32(a);
  }

  for (std::uint32_t u = 0; u < m.num_users(); ++u) w.doubles(m.user_row(u));
  for (std::uint32_t a = 0; a < m.num_apps(); ++a) w.doubles(m.item_row(a));
  for (std::size_t j = 0; j < c.context_dims.size(); ++j) {
    for (std::size_t r = 0; r < m.dim_values()[j].size(); ++r) w.doubles(m.context_row(j, r));
  }
  for (std::uint32_t a = 0; a < m.num_apps(); ++a) w.f64(m.bias(a));

  w.u32(static_cast<std::uint32_t>(m.loss_trace().size()));
  w.doubles(m.loss_trace());

  w.u64(fnv1a(w.bytes()));
  return std::move(w.bytes());
}

void save_model(const FactorModel& model, std::ostream& out) {
  const auto bytes = serialize_model(model);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed to write model");
}

void save_model(const FactorModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path + " for writing");
  save_model(model, out);
}

FactorModel load_model(std::istream& in) {
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  Reader r(bytes);
  const auto magic = r.take(sizeof kMagic);
  if (std::memcmp(magic.data(), kMagic, sizeof kMagic) != 0) {
    throw FormatError("not a model file (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version > kModelFormatVersion) {
    throw UnsupportedVersionError("model format version " + std::to_string(version) +
                                  " is newer than supported version " +
                                  std::to_string(kModelFormatVersion));
  }
  if (version == 0) throw FormatError("invalid model format version 0");
  if (bytes.size() < sizeof kMagic + 4 + 8) throw FormatError("model file is truncated");
  const std::size_t body = bytes.size() - 8;
  const std::span<const std::uint8_t> all(bytes);
  Reader tail(all.subspan(body));
  if (tail.u64() != fnv1a(all.first(body))) throw FormatError("model checksum mismatch");
  r = Reader(all.first(body));
  r.take(sizeof kMagic + 4);

  FactorModel m;
  ModelConfig& c = m.config_;
  c.latent_dim = r.u32();
  c.learning_rate = r.f64();
  c.regularization = r.f64();
  c.epochs = r.u64();
  c.negatives_per_positive = r.u64();
  c.confidence_alpha = r.f64();
  const std::uint8_t sampling = r.u8();
  if (sampling > 1) throw FormatError("unknown negative sampling mode");
  c.sampling = static_cast<NegativeSampling>(sampling);
  c.seed = r.u64();
  if (c.latent_dim == 0) throw FormatError("latent dimension is zero");

  c.context_dims.clear();
  const std::size_t n_dims = r.count(5);
  for (std::size_t j = 0; j < n_dims; ++j) {
    const std::uint8_t d = r.u8();
    if (d >= kNumDims) throw FormatError("unknown context dimension id");
    c.context_dims.push_back(static_cast<Dim>(d));
    std::vector<std::string> labels(r.count(4));
    std::unordered_map<std::string, int> rows;
    for (std::size_t v = 0; v < labels.size(); ++v) {
      labels[v] = r.str();
      rows.emplace(labels[v], static_cast<int>(v));
    }
    m.dim_values_.push_back(std::move(labels));
    m.dim_rows_.push_back(std::move(rows));
  }

  const std::size_t n_users = r.count(4);
  for (std::size_t u = 0; u < n_users; ++u) {
    UserId id(r.str());
    m.user_index_.emplace(id, static_cast<std::uint32_t>(u));
    m.users_.push_back(std::move(id));
  }
  const std::size_t n_apps = r.count(16);
  for (std::size_t a = 0; a < n_apps; ++a) {
    AppId id(r.str());
    m.app_index_.emplace(id, static_cast<std::uint32_t>(a));
    m.apps_.push_back(std::move(id));
    m.categories_.push_back(r.str());
    m.popularity_.push_back(r.u64());
  }
  m.installed_.resize(n_users);
  for (auto& apps : m.installed_) {
    apps.resize(r.count(4));
    for (auto& a : apps) {
      a = r.u32();
      if (a >= n_apps) throw FormatError("installed app index out of range");
    }
  }

  const std::size_t d = c.latent_dim;
  m.user_factors_ = Matrix(n_users, d);
  m.item_factors_ = Matrix(n_apps, d);
  r.doubles(m.user_factors_.data());
  r.doubles(m.item_factors_.data());
  for (const auto& labels : m.dim_values_) {
    Matrix w(labels.size(), d);
    r.doubles(w.data());
    m.context_factors_.push_back(std::move(w));
  }
  m.biases_.resize(n_apps);
  r.doubles(m.biases_);
  m.loss_trace_.resize(r.count(8));
  r.doubles(m.loss_trace_);
  if (r.remaining() != 0) throw FormatError("trailing bytes in model file");
  return m;
}

FactorModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open model file " + path);
  return load_model(in);
}

std::string bytes_fingerprint(std::span<const std::uint8_t> bytes) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::uint64_t h = fnv1a(bytes);
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kHex[h & 0xF];
    h >>= 4;
  }
  return out;
}

std::string model_fingerprint(const FactorModel& model) {
  return bytes_fingerprint(serialize_model(model));
}

}  // namespace ctxrec
