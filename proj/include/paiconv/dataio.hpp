#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "paiconv/neighbors.hpp"
#include "paiconv/rng.hpp"

namespace paiconv {

/// Malformed input file; the message carries the 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

struct Sample {
  PointCloud cloud;
  std::size_t label = 0;
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::string> class_names;

  std::size_t size() const noexcept { return samples.size(); }
  std::size_t num_classes() const noexcept { return class_names.size(); }
  void validate() const;
};

/// Shape classes understood by synth_shapes.
const std::vector<std::string>& synthetic_class_names();

/// Samples `count_per_class` clouds of `n_points` points on each named
/// analytic surface, normalized to the unit sphere. Points are drawn in
/// antipodal pairs so the centroid of every symmetric shape is the origin.
Dataset synth_shapes(const std::vector<std::string>& classes, std::size_t n_points,
                     std::size_t count_per_class, Rng& rng);

struct TrainTestSplit {
  Dataset train;
  Dataset test;
};

/// Train and test sets drawn from one seeded data stream, train first.
TrainTestSplit synth_train_test(const std::vector<std::string>& classes, std::size_t n_points,
                                std::size_t train_per_class, std::size_t test_per_class,
                                std::uint64_t seed);

struct Mesh {
  Matrix vertices;                                  // V x 3
  std::vector<std::array<std::uint32_t, 3>> faces;  // triangles after fan triangulation
};

/// ASCII OFF reader. Accepts the "OFF<counts>" single-line header variant
/// found in ModelNet and '#' comments; polygons are fan-triangulated.
Mesh parse_off(std::istream& in, const std::string& source = "<off>");
Mesh parse_off_file(const std::string& path);

/// Area-weighted face choice, then uniform barycentric sampling.
PointCloud sample_mesh(const Mesh& mesh, std::size_t n, Rng& rng);

/// Lines "x y z [feature ...]"; '#' lines and blank lines are skipped. All
/// data lines must have the same column count.
PointCloud parse_xyz(std::istream& in, const std::string& source = "<xyz>");
PointCloud parse_xyz_file(const std::string& path);
void write_xyz(const PointCloud& cloud, std::ostream& out);
void write_xyz_file(const PointCloud& cloud, const std::string& path);

/// Subtracts the centroid and divides by the largest point norm. A cloud of
/// coincident points is only centered (scale 1).
PointCloud normalize_unit_sphere(const PointCloud& cloud);

struct AugmentConfig {
  double scale_lo = 2.0 / 3.0;
  double scale_hi = 3.0 / 2.0;
  double translate_lo = -0.2;
  double translate_hi = 0.2;
  double jitter_std = 0.01;

  void validate() const;
};

/// One isotropic scale per cloud, then one translation per axis per cloud,
/// then per-coordinate Gaussian jitter.
PointCloud augment(const PointCloud& cloud, const AugmentConfig& cfg, Rng& rng);

/// Tab-separated "path<TAB>label" lines; relative paths resolve against the
/// manifest's directory. Labels are class names, numbered in sorted order.
/// .off files are sampled with `n_points` points, .xyz files are read as-is;
/// both are normalized to the unit sphere.
Dataset load_manifest(const std::string& path, std::size_t n_points, Rng& rng);

}  // namespace paiconv
