#include "paiconv/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <sstream>

namespace paiconv {
namespace {

using Point = std::array<double, 3>;

Point sample_sphere(Rng& rng) {
  for (;;) {
    const double x = rng.normal(), y = rng.normal(), z = rng.normal();
    const double n = std::sqrt(x * x + y * y + z * z);
    if (n > 1e-12) return {x / n, y / n, z / n};
  }
}

Point sample_cube(Rng& rng) {
  const auto face = rng.below(6);
  const std::size_t axis = face / 2;
  Point p{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
  p[axis] = face % 2 ? 1.0 : -1.0;
  return p;
}

Point sample_torus(Rng& rng) {
  constexpr double kMajor = 1.0, kMinor = 0.4;
  for (;;) {
    const double u = rng.uniform(0.0, 2.0 * M_PI);
    const double v = rng.uniform(0.0, 2.0 * M_PI);
    // Surface area element is proportional to (R + r cos v).
    if (rng.uniform() * (kMajor + kMinor) <= kMajor + kMinor * std::cos(v)) {
      const double ring = kMajor + kMinor * std::cos(v);
      return {ring * std::cos(u), ring * std::sin(u), kMinor * std::sin(v)};
    }
  }
}

Point sample_cylinder(Rng& rng) {
  // Radius 1, z in [-1, 1]: side area 4*pi, caps 2*pi together.
  const double theta = rng.uniform(0.0, 2.0 * M_PI);
  if (rng.uniform() < 2.0 / 3.0) return {std::cos(theta), std::sin(theta), rng.uniform(-1.0, 1.0)};
  const double r = std::sqrt(rng.uniform());
  return {r * std::cos(theta), r * std::sin(theta), rng.uniform() < 0.5 ? -1.0 : 1.0};
}

Point sample_octahedron(Rng& rng) {
  double a = rng.uniform(), b = rng.uniform();
  if (a + b > 1.0) {
    a = 1.0 - a;
    b = 1.0 - b;
  }
  Point p{a, b, 1.0 - a - b};
  for (auto& v : p)
    if (rng.uniform() < 0.5) v = -v;
  return p;
}

using Sampler = Point (*)(Rng&);

const std::map<std::string, Sampler>& samplers() {
  static const std::map<std::string, Sampler> m = {
      {"sphere", sample_sphere},     {"cube", sample_cube},
      {"torus", sample_torus},       {"cylinder", sample_cylinder},
      {"octahedron", sample_octahedron},
  };
  return m;
}

bool parse_double(std::string_view tok, double& out) {
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return ec == std::errc() && ptr == tok.data() + tok.size() && std::isfinite(out);
}

bool parse_size(std::string_view tok, std::size_t& out) {
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return ec == std::errc() && ptr == tok.data() + tok.size();
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

/// Reads non-blank, comment-stripped lines while tracking line numbers.
class LineReader {
 public:
  LineReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  bool next(std::vector<std::string_view>& tokens) {
    while (std::getline(in_, line_)) {
      ++number_;
      if (auto hash = line_.find('#'); hash != std::string::npos) line_.erase(hash);
      tokens = split_ws(line_);
      if (!tokens.empty()) return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(source_, number_, what); }
  std::size_t line() const noexcept { return number_; }

 private:
  std::istream& in_;
  std::string source_;
  std::string line_;
  std::size_t number_ = 0;
};

}  // namespace

void Dataset::validate() const {
  for (const auto& s : samples) {
    if (s.label >= class_names.size())
      throw ContractError("dataset: label " + std::to_string(s.label) + " out of range");
  }
}

const std::vector<std::string>& synthetic_class_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& [name, _] : samplers()) v.push_back(name);
    return v;
  }();
  return names;
}

Dataset synth_shapes(const std::vector<std::string>& classes, std::size_t n_points,
                     std::size_t count_per_class, Rng& rng) {
  if (n_points < 8) throw ContractError("synth_shapes: need at least 8 points per cloud");
  if (classes.empty()) throw ContractError("synth_shapes: no classes given");
  std::vector<Sampler> chosen;
  for (const auto& name : classes) {
    auto it = samplers().find(name);
    if (it == samplers().end()) throw ContractError("synth_shapes: unknown class '" + name + "'");
    chosen.push_back(it->second);
  }
  Dataset ds;
  ds.class_names = classes;
  for (std::size_t c = 0; c < chosen.size(); ++c) {
    for (std::size_t s = 0; s < count_per_class; ++s) {
      PointCloud cloud{Matrix(n_points, 3), std::nullopt};
      for (std::size_t i = 0; i + 1 < n_points; i += 2) {
        const Point p = chosen[c](rng);
        for (std::size_t a = 0; a < 3; ++a) {
          cloud.coords(i, a) = p[a];
          cloud.coords(i + 1, a) = -p[a];
        }
      }
      if (n_points % 2) {
        const Point p = chosen[c](rng);
        for (std::size_t a = 0; a < 3; ++a) cloud.coords(n_points - 1, a) = p[a];
      }
      ds.samples.push_back({normalize_unit_sphere(cloud), c});
    }
  }
  return ds;
}

TrainTestSplit synth_train_test(const std::vector<std::string>& classes, std::size_t n_points,
                                std::size_t train_per_class, std::size_t test_per_class,
                                std::uint64_t seed) {
  Rng rng = Rng(seed).stream(Stream::kData);
  TrainTestSplit split;
  split.train = synth_shapes(classes, n_points, train_per_class, rng);
  split.test = synth_shapes(classes, n_points, test_per_class, rng);
  return split;
}

Mesh parse_off(std::istream& in, const std::string& source) {
  LineReader reader(in, source);
  std::vector<std::string_view> tok;
  if (!reader.next(tok)) reader.fail("empty file, expected OFF header");
  if (tok[0].substr(0, 3) != "OFF") reader.fail("expected OFF header");

  std::vector<std::string_view> counts;
  if (tok[0].size() > 3) counts.push_back(tok[0].substr(3));
  counts.insert(counts.end(), tok.begin() + 1, tok.end());
  if (counts.empty()) {
    if (!reader.next(tok)) reader.fail("missing vertex/face counts");
    counts = tok;
  }
  std::size_t nv = 0, nf = 0;
  if (counts.size() < 2 || !parse_size(counts[0], nv) || !parse_size(counts[1], nf))
    reader.fail("malformed vertex/face counts");

  Mesh mesh;
  mesh.vertices = Matrix(nv, 3);
  for (std::size_t v = 0; v < nv; ++v) {
    if (!reader.next(tok)) reader.fail("expected " + std::to_string(nv) + " vertices, got " + std::to_string(v));
    if (tok.size() < 3) reader.fail("vertex needs 3 coordinates");
    for (std::size_t a = 0; a < 3; ++a)
      if (!parse_double(tok[a], mesh.vertices(v, a))) reader.fail("bad vertex coordinate '" + std::string(tok[a]) + "'");
  }
  for (std::size_t f = 0; f < nf; ++f) {
    if (!reader.next(tok)) reader.fail("expected " + std::to_string(nf) + " faces, got " + std::to_string(f));
    std::size_t k = 0;
    if (!parse_size(tok[0], k) || k < 3 || tok.size() < k + 1) reader.fail("malformed face");
    std::vector<std::uint32_t> ids(k);
    for (std::size_t j = 0; j < k; ++j) {
      std::size_t id = 0;
      if (!parse_size(tok[j + 1], id) || id >= nv) reader.fail("face vertex index out of range");
      ids[j] = static_cast<std::uint32_t>(id);
    }
    for (std::size_t j = 1; j + 1 < k; ++j) mesh.faces.push_back({ids[0], ids[j], ids[j + 1]});
  }
  return mesh;
}

Mesh parse_off_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  return parse_off(f, path);
}

PointCloud sample_mesh(const Mesh& mesh, std::size_t n, Rng& rng) {
  const Matrix& v = mesh.vertices;
  std::vector<double> cumulative(mesh.faces.size());
  double total = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& [a, b, c] = mesh.faces[f];
    double e1[3], e2[3];
    for (std::size_t k = 0; k < 3; ++k) {
      e1[k] = v(b, k) - v(a, k);
      e2[k] = v(c, k) - v(a, k);
    }
    const double cx = e1[1] * e2[2] - e1[2] * e2[1];
    const double cy = e1[2] * e2[0] - e1[0] * e2[2];
    const double cz = e1[0] * e2[1] - e1[1] * e2[0];
    total += 0.5 * std::sqrt(cx * cx + cy * cy + cz * cz);
    cumulative[f] = total;
  }
  if (!(total > 0.0)) throw ContractError("sample_mesh: mesh has zero surface area");

  PointCloud cloud{Matrix(n, 3), std::nullopt};
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.uniform() * total;
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), x);
    const std::size_t f = std::min<std::size_t>(it - cumulative.begin(), mesh.faces.size() - 1);
    double r1 = rng.uniform(), r2 = rng.uniform();
    if (r1 + r2 > 1.0) {
      r1 = 1.0 - r1;
      r2 = 1.0 - r2;
    }
    const auto& [a, b, c] = mesh.faces[f];
    for (std::size_t k = 0; k < 3; ++k)
      cloud.coords(i, k) = v(a, k) + r1 * (v(b, k) - v(a, k)) + r2 * (v(c, k) - v(a, k));
  }
  return cloud;
}

PointCloud parse_xyz(std::istream& in, const std::string& source) {
  LineReader reader(in, source);
  std::vector<std::string_view> tok;
  std::vector<double> values;
  std::size_t cols = 0, rows = 0;
  while (reader.next(tok)) {
    if (cols == 0) {
      if (tok.size() < 3) reader.fail("expected at least 3 columns (x y z)");
      cols = tok.size();
    } else if (tok.size() != cols) {
      reader.fail("expected " + std::to_string(cols) + " columns, got " + std::to_string(tok.size()));
    }
    for (auto t : tok) {
      double d = 0.0;
      if (!parse_double(t, d)) reader.fail("non-numeric token '" + std::string(t) + "'");
      values.push_back(d);
    }
    ++rows;
  }
  PointCloud cloud{Matrix(rows, 3), std::nullopt};
  if (cols > 3) cloud.features = Matrix(rows, cols - 3);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = values[r * cols + c];
      if (c < 3) cloud.coords(r, c) = d;
      else (*cloud.features)(r, c - 3) = d;
    }
  }
  return cloud;
}

PointCloud parse_xyz_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  return parse_xyz(f, path);
}

void write_xyz(const PointCloud& cloud, std::ostream& out) {
  out << std::setprecision(17);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    out << cloud.coords(i, 0) << ' ' << cloud.coords(i, 1) << ' ' << cloud.coords(i, 2);
    if (cloud.features)
      for (double f : cloud.features->row(i)) out << ' ' << f;
    out << '\n';
  }
}

void write_xyz_file(const PointCloud& cloud, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write '" + path + "'");
  write_xyz(cloud, f);
}

PointCloud normalize_unit_sphere(const PointCloud& cloud) {
  const std::size_t n = cloud.size();
  if (n == 0) throw ContractError("normalize_unit_sphere: empty cloud");
  double centroid[3] = {0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < 3; ++a) centroid[a] += cloud.coords(i, a);
  for (double& c : centroid) c /= static_cast<double>(n);

  PointCloud out = cloud;
  double max_norm = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t a = 0; a < 3; ++a) {
      out.coords(i, a) -= centroid[a];
      sq += out.coords(i, a) * out.coords(i, a);
    }
    max_norm = std::max(max_norm, std::sqrt(sq));
  }
  if (max_norm > 0.0)
    for (double& v : out.coords.data()) v /= max_norm;
  return out;
}

void AugmentConfig::validate() const {
  if (!(scale_lo > 0.0 && scale_hi >= scale_lo)) throw ContractError("augment: bad scale range");
  if (!(translate_hi >= translate_lo)) throw ContractError("augment: bad translate range");
  if (!(jitter_std >= 0.0)) throw ContractError("augment: jitter_std must be >= 0");
}

PointCloud augment(const PointCloud& cloud, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  PointCloud out = cloud;
  const double scale = rng.uniform(cfg.scale_lo, cfg.scale_hi);
  double shift[3];
  for (double& t : shift) t = rng.uniform(cfg.translate_lo, cfg.translate_hi);
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t a = 0; a < 3; ++a) {
      const double jitter = cfg.jitter_std > 0.0 ? cfg.jitter_std * rng.normal() : 0.0;
      out.coords(i, a) = out.coords(i, a) * scale + shift[a] + jitter;
    }
  }
  return out;
}

Dataset load_manifest(const std::string& path, std::size_t n_points, Rng& rng) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open manifest '" + path + "'");
  const std::filesystem::path base = std::filesystem::path(path).parent_path();

  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  std::size_t number = 0;
  while (std::getline(f, line)) {
    ++number;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size())
      throw ParseError(path, number, "expected 'path<TAB>label'");
    std::string label = line.substr(tab + 1);
    while (!label.empty() && std::isspace(static_cast<unsigned char>(label.back()))) label.pop_back();
    entries.emplace_back(line.substr(0, tab), label);
  }

  Dataset ds;
  for (const auto& [_, label] : entries) ds.class_names.push_back(label);
  std::sort(ds.class_names.begin(), ds.class_names.end());
  ds.class_names.erase(std::unique(ds.class_names.begin(), ds.class_names.end()), ds.class_names.end());

  for (const auto& [file, label] : entries) {
    std::filesystem::path p(file);
    if (p.is_relative()) p = base / p;
    PointCloud cloud;
    if (p.extension() == ".off") {
      cloud = sample_mesh(parse_off_file(p.string()), n_points, rng);
    } else {
      cloud = parse_xyz_file(p.string());
    }
    if (cloud.size() == 0) throw std::runtime_error("empty point cloud in '" + p.string() + "'");
    const auto label_id = std::lower_bound(ds.class_names.begin(), ds.class_names.end(), label) -
                          ds.class_names.begin();
    ds.samples.push_back({normalize_unit_sphere(cloud), static_cast<std::size_t>(label_id)});
  }
  return ds;
}

}  // namespace paiconv
