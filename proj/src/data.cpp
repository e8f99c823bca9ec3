#include "abc3/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

#include "abc3/error.hpp"

namespace abc3 {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream));
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  size_t start = 0;
  while (true) {
    const size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// Stream of standard normals (Box-Muller) over a 64-bit engine; avoids the
// unspecified std::normal_distribution algorithm so pools match across
// standard libraries.
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : engine_(seed) {}
  double uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

VectorXd random_fourier_draw(const MatrixXd& X, std::uint64_t seed, const SyntheticOptions& o) {
  NormalStream rs(seed);
  const Index d = X.cols();
  const int m = o.features;
  MatrixXd omega(d, m);
  VectorXd phase(m), weight(m);
  for (int k = 0; k < m; ++k) {
    for (Index j = 0; j < d; ++j) omega(j, k) = rs.normal() / o.lengthscale;
    phase[k] = 2.0 * std::numbers::pi * rs.uniform();
    weight[k] = rs.normal();
  }
  const MatrixXd proj = (X * omega).rowwise() + phase.transpose();
  return std::sqrt(2.0 / m) * (proj.array().cos().matrix() * weight);
}

}  // namespace

FeatureStats feature_stats(const MatrixXd& X) {
  FeatureStats s;
  s.mean = X.colwise().mean().transpose();
  s.sd.resize(X.cols());
  for (Index j = 0; j < X.cols(); ++j) {
    const double var = (X.col(j).array() - s.mean[j]).square().mean();
    s.sd[j] = var > 0.0 ? std::sqrt(var) : 0.0;
  }
  return s;
}

MatrixXd apply_stats(const MatrixXd& X, const FeatureStats& stats) {
  MatrixXd out(X.rows(), X.cols());
  for (Index j = 0; j < X.cols(); ++j) {
    if (stats.sd[j] > 0.0)
      out.col(j) = (X.col(j).array() - stats.mean[j]) / stats.sd[j];
    else
      out.col(j).setZero();
  }
  return out;
}

CovariatePool normalize(CovariatePool pool) {
  pool.X = apply_stats(pool.X_raw, feature_stats(pool.X_raw));
  return pool;
}

CovariatePool parse_csv(std::string_view text, const std::string& name, const CsvOptions& options) {
  std::vector<std::string_view> lines;
  size_t start = 0;
  while (start < text.size()) {
    size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = trim(text.substr(start, nl - start));
    if (!line.empty()) lines.push_back(line);
    start = nl + 1;
  }
  if (lines.empty()) throw InputError(name + ": empty CSV");

  const auto header = split_fields(lines[0]);
  std::vector<int> x_col;
  int y0_col = -1, y1_col = -1;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    const auto h = header[c];
    if (h == "y0") {
      y0_col = c;
    } else if (h == "y1") {
      y1_col = c;
    } else if (h.size() > 1 && h[0] == 'x') {
      int k = -1;
      auto [p, ec] = std::from_chars(h.data() + 1, h.data() + h.size(), k);
      if (ec != std::errc() || p != h.data() + h.size() || k < 0)
        throw InputError(name + ": unrecognized header column '" + std::string(h) + "'");
      if (static_cast<int>(x_col.size()) <= k) x_col.resize(k + 1, -1);
      x_col[k] = c;
    } else {
      throw InputError(name + ": unrecognized header column '" + std::string(h) + "'");
    }
  }
  for (size_t k = 0; k < x_col.size(); ++k)
    if (x_col[k] < 0) throw InputError(name + ": missing column x" + std::to_string(k));
  if (x_col.empty()) throw InputError(name + ": no covariate columns (x0..)");
  if (y0_col < 0) throw InputError(name + ": missing column y0");
  if (y1_col < 0 && !options.null_hypothesis)
    throw InputError(name + ": missing column y1 (pass the null-hypothesis flag to copy y0)");

  const Index n = static_cast<Index>(lines.size()) - 1;
  if (n < 2) throw InputError(name + ": need at least 2 data rows");
  const Index d = static_cast<Index>(x_col.size());

  CovariatePool pool;
  pool.name = name;
  pool.X_raw.resize(n, d);
  pool.y0.resize(n);
  pool.y1.resize(n);
  for (Index r = 0; r < n; ++r) {
    const auto fields = split_fields(lines[r + 1]);
    if (fields.size() != header.size()) {
      std::ostringstream os;
      os << name << ": row " << (r + 1) << " has " << fields.size() << " fields, expected "
         << header.size();
      throw InputError(os.str());
    }
    auto cell = [&](int c) {
      const auto f = fields[c];
      double v = 0.0;
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || p != f.data() + f.size() || !std::isfinite(v)) {
        std::ostringstream os;
        os << name << ": row " << (r + 1) << " column " << header[c] << ": invalid value '" << f
           << "'";
        throw InputError(os.str());
      }
      return v;
    };
    for (Index k = 0; k < d; ++k) pool.X_raw(r, k) = cell(x_col[k]);
    pool.y0[r] = cell(y0_col);
    pool.y1[r] = (y1_col >= 0 && !options.null_hypothesis) ? cell(y1_col) : pool.y0[r];
    if (y1_col >= 0 && options.null_hypothesis) (void)cell(y1_col);
  }
  pool.dist = VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  return normalize(std::move(pool));
}

CovariatePool load_csv(const std::filesystem::path& path, const CsvOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), path.stem().string(), options);
}

std::string format_csv(const CovariatePool& pool) {
  std::string out;
  for (Index k = 0; k < pool.X_raw.cols(); ++k) out += "x" + std::to_string(k) + ",";
  out += "y0,y1\n";
  for (Index r = 0; r < pool.X_raw.rows(); ++r) {
    for (Index k = 0; k < pool.X_raw.cols(); ++k) out += format_double(pool.X_raw(r, k)) + ",";
    out += format_double(pool.y0[r]) + "," + format_double(pool.y1[r]) + "\n";
  }
  return out;
}

void write_csv(const CovariatePool& pool, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << format_csv(pool);
}

Split split(const CovariatePool& pool, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
    throw ConfigError("train fraction must lie in (0, 1)");
  const Index n = pool.size();
  const auto n_train = static_cast<Index>(std::llround(spec.train_fraction * static_cast<double>(n)));
  if (n_train <= 0 || n_train >= n) throw ConfigError("split leaves train or test empty");

  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(stream_seed(spec.seed, 0x5011));
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(order[i], order[j]);
  }

  Split out;
  out.train_index.assign(order.begin(), order.begin() + n_train);
  out.test_index.assign(order.begin() + n_train, order.end());
  auto build = [&](const std::vector<Index>& rows, const std::string& suffix) {
    CovariatePool p;
    p.name = pool.name + suffix;
    const auto m = static_cast<Index>(rows.size());
    p.X_raw.resize(m, pool.X_raw.cols());
    p.y0.resize(m);
    p.y1.resize(m);
    for (Index r = 0; r < m; ++r) {
      p.X_raw.row(r) = pool.X_raw.row(rows[r]);
      p.y0[r] = pool.y0[rows[r]];
      p.y1[r] = spec.null_hypothesis ? pool.y0[rows[r]] : pool.y1[rows[r]];
    }
    p.dist = VectorXd::Constant(m, 1.0 / static_cast<double>(m));
    return p;
  };
  out.train = build(out.train_index, "/train");
  out.test = build(out.test_index, "/test");
  const FeatureStats stats = feature_stats(out.train.X_raw);
  out.train.X = apply_stats(out.train.X_raw, stats);
  out.test.X = apply_stats(out.test.X_raw, stats);
  return out;
}

SyntheticKind parse_synthetic_kind(std::string_view name) {
  if (name == "smooth-gp") return SyntheticKind::SmoothGp;
  if (name == "linear") return SyntheticKind::Linear;
  if (name == "null") return SyntheticKind::Null;
  throw ConfigError("unknown synthetic kind '" + std::string(name) +
                    "' (valid: smooth-gp, linear, null)");
}

std::string to_string(SyntheticKind kind) {
  switch (kind) {
    case SyntheticKind::SmoothGp:
      return "smooth-gp";
    case SyntheticKind::Linear:
      return "linear";
    case SyntheticKind::Null:
      return "null";
  }
  return "unknown";
}

VectorXd synthetic_linear_beta(Index d, std::uint64_t seed, int arm) {
  NormalStream rs(stream_seed(seed, 0xbe7a0 + static_cast<std::uint64_t>(arm)));
  VectorXd beta(d);
  for (Index j = 0; j < d; ++j) beta[j] = rs.normal();
  return beta;
}

CovariatePool gen_synthetic(SyntheticKind kind, Index n, Index d, std::uint64_t seed,
                            const SyntheticOptions& options) {
  if (n < 4) throw ConfigError("synthetic pool needs N >= 4");
  if (d < 1) throw ConfigError("synthetic pool needs d >= 1");
  if (options.noise < 0.0 || options.lengthscale <= 0.0 || options.features < 1)
    throw ConfigError("invalid synthetic options");

  CovariatePool pool;
  pool.name = "synthetic-" + to_string(kind);
  NormalStream xs(stream_seed(seed, 0xc0ff));
  pool.X_raw.resize(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) pool.X_raw(i, j) = xs.normal();

  NormalStream noise(stream_seed(seed, 0x4015e));
  auto add_noise = [&](VectorXd v) {
    for (Index i = 0; i < v.size(); ++i) v[i] += options.noise * noise.normal();
    return v;
  };
  switch (kind) {
    case SyntheticKind::SmoothGp:
      pool.y0 = add_noise(random_fourier_draw(pool.X_raw, stream_seed(seed, 0xf0), options));
      pool.y1 = add_noise(random_fourier_draw(pool.X_raw, stream_seed(seed, 0xf1), options));
      break;
    case SyntheticKind::Linear:
      pool.y0 = add_noise(pool.X_raw * synthetic_linear_beta(d, seed, 0));
      pool.y1 = add_noise(pool.X_raw * synthetic_linear_beta(d, seed, 1));
      break;
    case SyntheticKind::Null:
      pool.y0 = add_noise(random_fourier_draw(pool.X_raw, stream_seed(seed, 0xf0), options));
      pool.y1 = pool.y0;
      break;
  }
  pool.dist = VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  return normalize(std::move(pool));
}

}  // namespace abc3
