#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "proptrain/formula.hpp"
#include "proptrain/regions.hpp"
#include "proptrain/rng.hpp"

namespace proptrain {

// ---------------------------------------------------------------------------
// datasets
// ---------------------------------------------------------------------------

struct LabeledDataset {
  Matrix inputs;            // N x m, rows within `domain`
  std::vector<int> labels;  // classification targets
  Matrix targets;           // regression targets (N x n); empty for classification
  bool classification = true;
  int num_classes = 0;
  Box domain;

  int size() const { return inputs.rows; }

  std::span<const double> input(int i) const { return inputs.row_span(i); }

  std::span<const double> target_row(int i) const {
    static const std::vector<double> none;
    if (classification) return {none.data(), std::size_t(0)};
    return targets.row_span(i);
  }
};

// ---------------------------------------------------------------------------
// IDX files (big-endian headers, 0x803 for images, 0x801 for labels)
// ---------------------------------------------------------------------------

namespace idx {

inline std::uint32_t read_be32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("idx: truncated header");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

inline void write_be32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<char*>(b), 4);
}

struct Images {
  int count = 0, rows = 0, cols = 0;
  std::vector<unsigned char> pixels;
};

inline Images read_images(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("idx: cannot open " + path);
  std::uint32_t magic = read_be32(is);
  if (magic != 0x00000803u)
    throw std::runtime_error("idx: bad image magic number in " + path);
  Images im;
  im.count = int(read_be32(is));
  im.rows = int(read_be32(is));
  im.cols = int(read_be32(is));
  im.pixels.resize(std::size_t(im.count) * im.rows * im.cols);
  is.read(reinterpret_cast<char*>(im.pixels.data()), std::streamsize(im.pixels.size()));
  if (std::size_t(is.gcount()) != im.pixels.size())
    throw std::runtime_error("idx: image payload size mismatch in " + path);
  return im;
}

inline std::vector<unsigned char> read_labels(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("idx: cannot open " + path);
  std::uint32_t magic = read_be32(is);
  if (magic != 0x00000801u)
    throw std::runtime_error("idx: bad label magic number in " + path);
  int count = int(read_be32(is));
  std::vector<unsigned char> labels(static_cast<std::size_t>(count), 0);
  is.read(reinterpret_cast<char*>(labels.data()), std::streamsize(labels.size()));
  if (std::size_t(is.gcount()) != labels.size())
    throw std::runtime_error("idx: label payload size mismatch in " + path);
  return labels;
}

inline void write_images(const std::string& path, int rows, int cols,
                         const std::vector<unsigned char>& pixels) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("idx: cannot write " + path);
  int count = int(pixels.size()) / (rows * cols);
  write_be32(os, 0x00000803u);
  write_be32(os, std::uint32_t(count));
  write_be32(os, std::uint32_t(rows));
  write_be32(os, std::uint32_t(cols));
  os.write(reinterpret_cast<const char*>(pixels.data()), std::streamsize(pixels.size()));
}

inline void write_labels(const std::string& path, const std::vector<unsigned char>& labels) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("idx: cannot write " + path);
  write_be32(os, 0x00000801u);
  write_be32(os, std::uint32_t(labels.size()));
  os.write(reinterpret_cast<const char*>(labels.data()), std::streamsize(labels.size()));
}

}  // namespace idx

// Loads an IDX image/label pair, scales pixels to [0,1] and optionally keeps
// a deterministic stratified subset (per-class round robin over seeded
// per-class shuffles).
inline LabeledDataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                                     int subset_size, std::uint64_t seed) {
  idx::Images im = idx::read_images(images_path);
  std::vector<unsigned char> labels = idx::read_labels(labels_path);
  if (int(labels.size()) != im.count)
    throw std::runtime_error("idx: image/label count mismatch");

  int num_classes = 0;
  for (unsigned char l : labels) num_classes = std::max(num_classes, int(l) + 1);

  std::vector<int> chosen;
  if (subset_size <= 0 || subset_size >= im.count) {
    chosen.resize(std::size_t(im.count));
    for (int i = 0; i < im.count; ++i) chosen[std::size_t(i)] = i;
  } else {
    std::vector<std::vector<int>> per_class;
    per_class.resize(std::size_t(num_classes));
    for (int i = 0; i < im.count; ++i) per_class[labels[std::size_t(i)]].push_back(i);
    for (int c = 0; c < num_classes; ++c) {
      Rng rng = Rng::stream(seed, {0x5B, std::uint64_t(c)});
      auto& v = per_class[std::size_t(c)];
      for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
    }
    std::vector<std::size_t> cursor(std::size_t(num_classes), 0);
    int c = 0;
    while (int(chosen.size()) < subset_size) {
      auto& v = per_class[std::size_t(c)];
      if (cursor[std::size_t(c)] < v.size()) chosen.push_back(v[cursor[std::size_t(c)]++]);
      c = (c + 1) % num_classes;
    }
  }

  const int dim = im.rows * im.cols;
  LabeledDataset d;
  d.classification = true;
  d.num_classes = num_classes;
  d.inputs = Matrix(int(chosen.size()), dim);
  d.labels.resize(chosen.size());
  for (std::size_t r = 0; r < chosen.size(); ++r) {
    const unsigned char* src = im.pixels.data() + std::size_t(chosen[r]) * dim;
    double* dst = d.inputs.row(int(r));
    for (int i = 0; i < dim; ++i) dst[i] = double(src[i]) / 255.0;
    d.labels[r] = int(labels[std::size_t(chosen[r])]);
  }
  d.domain = Box(std::vector<double>(std::size_t(dim), 0.0), std::vector<double>(std::size_t(dim), 1.0));
  return d;
}

// ---------------------------------------------------------------------------
// synthetic digit corpus (IDX-format stand-in when no real data is present)
// ---------------------------------------------------------------------------

namespace detail {

inline const std::array<std::array<const char*, 7>, 10>& digit_glyphs() {
  static const std::array<std::array<const char*, 7>, 10> glyphs = {{
      {".#####.", "#.....#", "#.....#", "#.....#", "#.....#", "#.....#", ".#####."},
      {"...#...", "..##...", "...#...", "...#...", "...#...", "...#...", "..###.."},
      {".#####.", "#.....#", "......#", "..###..", ".#.....", "#......", "#######"},
      {".#####.", "......#", "......#", "..####.", "......#", "......#", ".#####."},
      {"#....#.", "#....#.", "#....#.", "#######", ".....#.", ".....#.", ".....#."},
      {"#######", "#......", "#......", "######.", "......#", "......#", "######."},
      {".#####.", "#......", "#......", "######.", "#.....#", "#.....#", ".#####."},
      {"#######", "......#", ".....#.", "....#..", "...#...", "..#....", "..#...."},
      {".#####.", "#.....#", "#.....#", ".#####.", "#.....#", "#.....#", ".#####."},
      {".#####.", "#.....#", "#.....#", ".######", "......#", "......#", ".#####."},
  }};
  return glyphs;
}

}  // namespace detail

// Writes a deterministic 28x28 ten-class digit corpus in IDX format:
// scaled glyphs with random placement, intensity jitter and pixel noise.
inline void generate_synthetic_digit_idx(const std::string& images_path,
                                         const std::string& labels_path, int count,
                                         std::uint64_t seed) {
  const int side = 28, scale = 3, glyph = 7;
  std::vector<unsigned char> pixels(std::size_t(count) * side * side, 0);
  std::vector<unsigned char> labels(static_cast<std::size_t>(count), 0);
  for (int s = 0; s < count; ++s) {
    Rng rng = Rng::stream(seed, {0xD161, std::uint64_t(s)});
    int digit = int(rng.below(10));
    labels[std::size_t(s)] = static_cast<unsigned char>(digit);
    const auto& rows = detail::digit_glyphs()[std::size_t(digit)];
    int max_off = side - glyph * scale;  // 7
    int ox = int(rng.below(std::uint64_t(max_off + 1)));
    int oy = int(rng.below(std::uint64_t(max_off + 1)));
    double intensity = rng.uniform(0.65, 1.0);
    unsigned char* img = pixels.data() + std::size_t(s) * side * side;
    for (int gy = 0; gy < glyph; ++gy)
      for (int gx = 0; gx < glyph; ++gx) {
        if (rows[std::size_t(gy)][gx] != '#') continue;
        for (int dy = 0; dy < scale; ++dy)
          for (int dx = 0; dx < scale; ++dx) {
            int y = oy + gy * scale + dy, x = ox + gx * scale + dx;
            img[y * side + x] = static_cast<unsigned char>(std::lround(255.0 * intensity));
          }
      }
    for (int i = 0; i < side * side; ++i) {
      double v = img[i] / 255.0 + rng.uniform(0.0, 0.15);
      img[i] = static_cast<unsigned char>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
    }
  }
  idx::write_images(images_path, side, side, pixels);
  idx::write_labels(labels_path, labels);
}

// ---------------------------------------------------------------------------
// drone controller case study
// ---------------------------------------------------------------------------
//
// State vector [v_x, v_y, omega, theta, x, y]; the scalar control output
// lives in [0.181, 0.193] with 0.187 as the neutral action.

namespace alsomitra {

enum Component : int { VX = 0, VY = 1, OMEGA = 2, THETA = 3, X = 4, Y = 5 };

inline Box domain() {
  return Box({0.967568147, -0.607397104, -0.356972794, -0.96847853, 0.482420778, -41.68140527},
             {3.489893068, -0.043021391, 0.049180223, -0.068002517, 41.714716998, 4.19723352});
}

constexpr double kOutputLo = 0.181;
constexpr double kOutputHi = 0.193;
constexpr double kNeutral = 0.187;
constexpr double kPitchBandCentre = -0.7665;  // midpoint of the appropriate pitch band

// Smooth synthetic teacher: pitch down (larger output) above the y = -x
// trajectory, neutral on it, pitch up below; small pitch-angle correction.
inline double teacher(std::span<const double> s) {
  double line_err = s[Y] + s[X];
  double pitch_err = s[THETA] - kPitchBandCentre;
  double e = kNeutral + 0.006 * std::tanh(0.5 * line_err + 0.2 * pitch_err);
  return std::clamp(e, kOutputLo, kOutputHi);
}

}  // namespace alsomitra

inline LabeledDataset gen_alsomitra(int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("gen_alsomitra: n must be >= 1");
  Box dom = alsomitra::domain();
  LabeledDataset d;
  d.classification = false;
  d.domain = dom;
  d.inputs = Matrix(n, 6);
  d.targets = Matrix(n, 1);
  for (int s = 0; s < n; ++s) {
    Rng rng = Rng::stream(seed, {0xA150, std::uint64_t(s)});
    double* row = d.inputs.row(s);
    for (int i = 0; i < 6; ++i) row[i] = rng.uniform(dom.lo[std::size_t(i)], dom.hi[std::size_t(i)]);
    d.targets.at(s, 0) = alsomitra::teacher(d.inputs.row_span(s));
  }
  return d;
}

inline void save_alsomitra_csv(const LabeledDataset& d, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "v_x,v_y,omega,theta,x,y,e\n";
  for (int r = 0; r < d.size(); ++r) {
    for (int i = 0; i < 6; ++i) os << detail::format_double(d.inputs.at(r, i)) << ',';
    os << detail::format_double(d.targets.at(r, 0)) << '\n';
  }
}

inline LabeledDataset load_alsomitra_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(is, line) || line != "v_x,v_y,omega,theta,x,y,e")
    throw std::runtime_error("unexpected csv header in " + path);
  std::vector<std::array<double, 7>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::array<double, 7> row{};
    std::stringstream ss(line);
    std::string cell;
    for (int i = 0; i < 7; ++i) {
      if (!std::getline(ss, cell, ',')) throw std::runtime_error("short csv row in " + path);
      row[std::size_t(i)] = std::strtod(cell.c_str(), nullptr);
    }
    rows.push_back(row);
  }
  LabeledDataset d;
  d.classification = false;
  d.domain = alsomitra::domain();
  d.inputs = Matrix(int(rows.size()), 6);
  d.targets = Matrix(int(rows.size()), 1);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (int i = 0; i < 6; ++i) d.inputs.at(int(r), i) = rows[r][std::size_t(i)];
    d.targets.at(int(r), 0) = rows[r][6];
  }
  return d;
}

// ---------------------------------------------------------------------------
// properties
// ---------------------------------------------------------------------------

struct PropertyDef {
  std::string name;
  FormulaPtr precondition;   // over candidate/anchor inputs only
  FormulaPtr postcondition;  // may reference outputs
  std::map<std::string, double> params;
};

inline void validate_property(const PropertyDef& p, int in_dim, int out_dim, int target_dim) {
  if (references_outputs(*p.precondition))
    throw std::invalid_argument("property '" + p.name + "': precondition may not reference outputs");
  DimRequirements pre = required_dims(*p.precondition);
  if (pre.target > 0)
    throw std::invalid_argument("property '" + p.name + "': precondition may not reference targets");
  DimRequirements post = required_dims(*p.postcondition);
  if (pre.input > in_dim || post.input > in_dim)
    throw std::invalid_argument("property '" + p.name + "': input index exceeds dimensionality");
  if (post.output > out_dim)
    throw std::invalid_argument("property '" + p.name + "': output index exceeds dimensionality");
  if (post.target > target_dim)
    throw std::invalid_argument("property '" + p.name + "': target index exceeds dimensionality");
}

// || f(x) - f(x') ||_inf <= delta over the eps-cube around the anchor
inline PropertyDef property_std_robustness(double eps, double delta, int in_dim, int out_dim) {
  if (eps <= 0.0 || delta <= 0.0)
    throw std::invalid_argument("std_robustness: eps and delta must be > 0");
  using namespace dsl;
  std::vector<FormulaPtr> bounds;
  bounds.reserve(std::size_t(in_dim) * 2);
  for (int i = 0; i < in_dim; ++i) {
    bounds.push_back(leq(sub(anchor_in(i), lit(eps)), in(i)));
    bounds.push_back(leq(in(i), add(anchor_in(i), lit(eps))));
  }
  std::vector<TermPtr> diffs;
  diffs.reserve(std::size_t(out_dim));
  for (int i = 0; i < out_dim; ++i) diffs.push_back(sub(out(i), anchor_out(i)));
  PropertyDef p;
  p.name = "std_robustness";
  p.precondition = land(std::move(bounds));
  p.postcondition = leq(norm(std::move(diffs), NormOrder::Inf), lit(delta));
  p.params = {{"eps", eps}, {"delta", delta}};
  return p;
}

// the four drone controller properties; movingfast_literal selects the
// v_x reading of the speed predicate (empty under the state domain) instead
// of the feasible v_y reading
inline PropertyDef property_phi(int k, bool movingfast_literal = false, double lipschitz = 0.3) {
  using namespace dsl;
  using namespace alsomitra;
  auto far_above_line = leq(sub(lit(2.0), anchor_in(X)), in(Y));
  auto close_to_line = land(leq(sub(lit(-2.0), anchor_in(X)), in(Y)),
                            leq(in(Y), sub(lit(2.0), anchor_in(X))));
  auto appropriate_pitch = land(leq(lit(-0.786), in(THETA)), leq(in(THETA), lit(-0.747)));
  auto above_and_close = land(leq(sub(lit(0.0), anchor_in(X)), in(Y)),
                              leq(in(Y), sub(lit(2.0), anchor_in(X))));
  auto pitching_down_quickly = leq(in(OMEGA), lit(-0.12));
  auto moving_fast = movingfast_literal ? leq(in(VX), lit(-0.3)) : leq(in(VY), lit(-0.3));

  PropertyDef p;
  p.params = {{"lipschitz", lipschitz}, {"movingfast_literal", movingfast_literal ? 1.0 : 0.0}};
  switch (k) {
    case 1:
      p.name = "phi1";
      p.precondition = far_above_line;
      p.postcondition = leq(lit(kNeutral), out(0));
      return p;
    case 2:
      p.name = "phi2";
      p.precondition = land(close_to_line, appropriate_pitch);
      p.postcondition = land(leq(lit(0.184), out(0)), leq(out(0), lit(0.19)));
      return p;
    case 3:
      p.name = "phi3";
      p.precondition = land({above_and_close, pitching_down_quickly, moving_fast});
      p.postcondition = leq(out(0), lit(kNeutral));
      return p;
    case 4: {
      p.name = "phi4";
      p.precondition = close_to_line;
      std::vector<TermPtr> dx;
      for (int i = 0; i < 6; ++i) dx.push_back(sub(in(i), anchor_in(i)));
      std::vector<TermPtr> dy{sub(out(0), anchor_out(0))};
      p.postcondition = leq(norm(std::move(dy), NormOrder::Two),
                            mul(lit(lipschitz), norm(std::move(dx), NormOrder::Two)));
      return p;
    }
    default:
      throw std::invalid_argument("property_phi: k must be 1..4");
  }
}

// 1-d toy: outputs over the unit interval must stay below 1
inline PropertyDef property_toy_bound(double bound = 1.0) {
  using namespace dsl;
  PropertyDef p;
  p.name = "toy_bound";
  p.precondition = land(leq(lit(0.0), in(0)), leq(in(0), lit(1.0)));
  p.postcondition = leq(out(0), lit(bound));
  p.params = {{"bound", bound}};
  return p;
}

// y = 1.5 x on [0, 1]: an unconstrained fit exceeds the toy bound near x = 1
inline LabeledDataset gen_toy(int n, std::uint64_t seed) {
  LabeledDataset d;
  d.classification = false;
  d.domain = Box({0.0}, {1.0});
  d.inputs = Matrix(n, 1);
  d.targets = Matrix(n, 1);
  for (int s = 0; s < n; ++s) {
    Rng rng = Rng::stream(seed, {0x707, std::uint64_t(s)});
    double x = rng.uniform();
    d.inputs.at(s, 0) = x;
    d.targets.at(s, 0) = 1.5 * x;
  }
  return d;
}

// ---------------------------------------------------------------------------
// collision-avoidance translation fixture
// ---------------------------------------------------------------------------
//
// Inputs [rho, theta, psi, v_own, v_int]: a distant and significantly slower
// intruder (rho >= 55947.691, v_own >= 1145, v_int <= 60) must never make the
// clear-of-conflict score maximal.  The scenario domain caps v_int at 60, so
// the translated box keeps the full domain upper bounds; `alt_domain` widens
// v_int to exercise genuine upper-bound tightening.

struct AcasPhi2Fixture {
  FormulaPtr precondition, postcondition;
  Box domain;
  Box alt_domain;
  BoxSet expected{Box{}};
};

inline AcasPhi2Fixture acasxu_phi2_fixture() {
  using namespace dsl;
  const double pi = 3.141593;
  Box dom({0.0, -pi, -pi, 100.0, 0.0}, {60760.0, pi, pi, 1200.0, 60.0});
  Box alt({0.0, -pi, -pi, 100.0, 0.0}, {60760.0, pi, pi, 1200.0, 1200.0});

  AcasPhi2Fixture fx;
  fx.domain = dom;
  fx.alt_domain = alt;
  fx.precondition = land({leq(lit(55947.691), in(0)), leq(lit(1145.0), in(3)), leq(in(4), lit(60.0))});
  fx.postcondition =
      lor({lt(out(0), out(1)), lt(out(0), out(2)), lt(out(0), out(3)), lt(out(0), out(4))});
  fx.expected = BoxSet(dom);
  Box b = dom;
  b.lo[0] = 55947.691;
  b.lo[3] = 1145.0;
  fx.expected.add(b);
  return fx;
}

}  // namespace proptrain
