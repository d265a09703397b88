#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "weakstrong/error.hpp"
#include "weakstrong/image.hpp"
#include "weakstrong/rng.hpp"
#include "weakstrong/tensor.hpp"

namespace weakstrong {

// Clinical 5-level grouping of Gleason scores.
enum class GleasonGroup { g6 = 0, g7_34 = 1, g7_43 = 2, g8 = 3, g9_10 = 4 };

inline const char* group_name(GleasonGroup g) {
  switch (g) {
    case GleasonGroup::g6: return "<=6";
    case GleasonGroup::g7_34: return "7=3+4";
    case GleasonGroup::g7_43: return "7=4+3";
    case GleasonGroup::g8: return "8";
    case GleasonGroup::g9_10: return "9-10";
  }
  return "?";
}

// Patterns: 0 = benign, otherwise Gleason pattern 3..5.
inline bool is_high_pattern(int pattern) { return pattern >= 4; }

inline std::size_t pattern_index(int pattern) {
  switch (pattern) {
    case 0: return 0;
    case 3: return 1;
    case 4: return 2;
    case 5: return 3;
  }
  throw ValueError("pattern_index: pattern must be 0, 3, 4 or 5");
}

constexpr std::array<int, 4> kPatterns{0, 3, 4, 5};
constexpr int kLabelLow = 0;
constexpr int kLabelHigh = 1;

// One patch analog. strong_label is present only for source-domain (S)
// instances, weak_label only for bag members (W); a weak label repeats the
// owning bag's label and may contradict true_pattern.
struct Instance {
  std::vector<double> features;
  int true_pattern = 0;
  std::optional<int> strong_label;
  std::optional<int> weak_label;
  int bag_id = -1;
  Image image;  // image substrate only; empty in feature mode
};

// One slide analog.
struct Bag {
  int bag_id = -1;
  std::vector<Instance> instances;
  int primary_pattern = 3;
  int secondary_pattern = 3;
  int gleason_score = 6;  // primary + secondary
  GleasonGroup group = GleasonGroup::g6;
  int weak_label = kLabelLow;  // low iff gleason_score <= 7
};

struct PatternStats {
  std::vector<double> mean;
  std::vector<double> std_dev;
};

// x -> A x + b on strong-source features. Empty tensors mean identity.
struct AffineShift {
  Tensor2D a;
  std::vector<double> b;

  bool is_identity() const { return a.empty() && b.empty(); }
};

// Two-stain composition parameters for the patch renderer: pixels are built
// as exp(-(c_h * H + c_e * E)) in optical-density space, so the rendered
// patches genuinely live on a two-vector stain basis.
struct StainParams {
  std::array<double, 3> hematoxylin{0.65, 0.70, 0.29};
  std::array<double, 3> eosin{0.07, 0.99, 0.11};
  double background_h = 0.05;
  double background_e = 0.22;
  double nucleus_h = 1.15;
  double blob_sigma = 1.6;
  double intensity = 1.0;
};

struct ImageGenParams {
  std::size_t patch_size = 16;
  StainParams weak_stain{};
  StainParams strong_stain{};
  std::array<double, 4> density{0.06, 0.30, 0.55, 0.80};  // benign, p3, p4, p5
  double density_jitter = 0.05;
  std::size_t candidate_patches = 0;  // > instances_per_bag enables blue-ratio selection
};

enum class Substrate { features, images };

struct GenConfig {
  std::size_t n_bags = 80;
  std::size_t instances_per_bag = 24;
  double primary_fraction = 0.6;
  double benign_fraction = 0.2;
  // weights over GleasonGroup in enum order
  std::array<double, 5> group_weights{0.18, 0.24, 0.14, 0.20, 0.24};
  std::size_t input_dim = 8;
  std::array<PatternStats, 4> pattern_stats{};  // benign, p3, p4, p5
  AffineShift shift{};
  std::size_t n_strong = 600;
  std::array<double, 4> strong_pattern_weights{0.25, 0.25, 0.25, 0.25};
  Substrate substrate = Substrate::features;
  ImageGenParams image{};
  std::uint64_t seed = 1;

  std::size_t benign_count() const {
    return static_cast<std::size_t>(std::lround(benign_fraction * static_cast<double>(instances_per_bag)));
  }
  std::size_t primary_count() const {
    return static_cast<std::size_t>(std::lround(primary_fraction * static_cast<double>(instances_per_bag)));
  }

  void validate() const;
};

namespace detail {

inline double det_via_elimination(Tensor2D m) {
  const std::size_t n = m.rows;
  double det = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(m.at(r, col)) > std::abs(m.at(pivot, col))) pivot = r;
    }
    if (std::abs(m.at(pivot, col)) < 1e-12) return 0.0;
    if (pivot != col) {
      for (std::size_t j = 0; j < n; ++j) std::swap(m.at(pivot, j), m.at(col, j));
      det = -det;
    }
    det *= m.at(col, col);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = m.at(r, col) / m.at(col, col);
      for (std::size_t j = col; j < n; ++j) m.at(r, j) -= f * m.at(col, j);
    }
  }
  return det;
}

// stable weighted choice over cumulative weights
inline std::size_t weighted_choice(Rng& rng, const double* weights, std::size_t n) {
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += weights[i];
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < n; ++i) {
    u -= weights[i];
    if (u < 0.0) return i;
  }
  return n - 1;
}

constexpr std::uint64_t kBagTag = 0xba600000000ULL;
constexpr std::uint64_t kStrongTag = 0x57a0000000ULL;
constexpr std::uint64_t kProjectionTag = 0x9a03;

}  // namespace detail

inline void GenConfig::validate() const {
  if (n_bags < 1) throw ConfigError("gen.n_bags: must be >= 1");
  if (instances_per_bag < 3) throw ConfigError("gen.instances_per_bag: must be >= 3");
  if (primary_fraction < 0.0 || primary_fraction > 1.0) {
    throw ConfigError("gen.primary_fraction: must be in [0, 1]");
  }
  if (benign_fraction < 0.0 || benign_fraction > 1.0) {
    throw ConfigError("gen.benign_fraction: must be in [0, 1]");
  }
  if (primary_fraction + benign_fraction > 1.0) {
    throw ConfigError("gen.primary_fraction + gen.benign_fraction: must be <= 1");
  }
  if (benign_count() + primary_count() + 1 > instances_per_bag) {
    throw ConfigError("gen.instances_per_bag: composition leaves no room for a secondary-pattern instance");
  }
  double wsum = 0.0;
  for (double w : group_weights) {
    if (w < 0.0) throw ConfigError("gen.group_weights: entries must be >= 0");
    wsum += w;
  }
  if (wsum <= 0.0) throw ConfigError("gen.group_weights: must not all be zero");
  if (input_dim < 1) throw ConfigError("gen.input_dim: must be >= 1");
  for (const PatternStats& ps : pattern_stats) {
    if (ps.mean.size() != input_dim || ps.std_dev.size() != input_dim) {
      throw ConfigError("gen.pattern_stats: mean/std length must equal gen.input_dim");
    }
    for (double s : ps.std_dev) {
      if (s < 0.0) throw ConfigError("gen.pattern_stats: std entries must be >= 0");
    }
  }
  if (!shift.is_identity()) {
    if (shift.a.rows != input_dim || shift.a.cols != input_dim) {
      throw ConfigError("gen.shift.a: must be input_dim x input_dim");
    }
    if (shift.b.size() != input_dim) throw ConfigError("gen.shift.b: must have input_dim entries");
    if (std::abs(detail::det_via_elimination(shift.a)) < 1e-9) {
      throw ConfigError("gen.shift.a: matrix is singular");
    }
  }
  for (double w : strong_pattern_weights) {
    if (w < 0.0) throw ConfigError("gen.strong_pattern_weights: entries must be >= 0");
  }
  if (substrate == Substrate::images) {
    if (image.patch_size < 4) throw ConfigError("gen.image.patch_size: must be >= 4");
    for (double d : image.density) {
      if (d < 0.0 || d > 1.0) throw ConfigError("gen.image.density: entries must be in [0, 1]");
    }
    if (image.candidate_patches != 0 && image.candidate_patches < instances_per_bag) {
      throw ConfigError("gen.image.candidate_patches: must be 0 or >= gen.instances_per_bag");
    }
  }
}

// Mildly separated Gaussian pattern classes along the first two feature
// axes. Desk-scale defaults for the integration benchmark.
inline std::array<PatternStats, 4> default_pattern_stats(std::size_t input_dim) {
  auto stats = [&](double m0, double m1) {
    PatternStats ps;
    ps.mean.assign(input_dim, 0.0);
    ps.mean[0] = m0;
    if (input_dim > 1) ps.mean[1] = m1;
    ps.std_dev.assign(input_dim, 1.1);
    return ps;
  };
  return {stats(-2.2, 0.35),   // benign
          stats(-0.9, -0.20),  // pattern 3
          stats(0.9, 0.20),    // pattern 4
          stats(2.2, -0.35)};  // pattern 5
}

// Rotation/scale in the two discriminative axes plus an offset: the
// committed covariate shift applied to the strong source. Strong enough to
// matter, mild enough that strong data still transfers.
inline AffineShift default_affine_shift(std::size_t input_dim) {
  AffineShift shift;
  Tensor2D a = Tensor2D::identity(input_dim);
  if (input_dim > 1) {
    const double angle = 16.0 * std::numbers::pi / 180.0;
    const double s = 1.12;
    a.at(0, 0) = s * std::cos(angle);
    a.at(0, 1) = -s * std::sin(angle);
    a.at(1, 0) = s * std::sin(angle);
    a.at(1, 1) = s * std::cos(angle);
  }
  shift.a = a;
  shift.b.assign(input_dim, 0.0);
  shift.b[0] = 0.5;
  if (input_dim > 1) shift.b[1] = -0.35;
  return shift;
}

inline GenConfig default_gen_config() {
  GenConfig cfg;
  cfg.pattern_stats = default_pattern_stats(cfg.input_dim);
  cfg.shift = default_affine_shift(cfg.input_dim);
  return cfg;
}

// ---------------------------------------------------------------------------
// Patch pipeline

// Per-pixel Blue Ratio map: BR = (100 B / (1 + R + G)) * (256 / (1 + R + G + B)).
inline Tensor2D blue_ratio(const Image& img) {
  Tensor2D out(img.height, img.width);
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    const double r = img.data[i * 3 + 0];
    const double g = img.data[i * 3 + 1];
    const double b = img.data[i * 3 + 2];
    out.data[i] = (100.0 * b / (1.0 + r + g)) * (256.0 / (1.0 + r + g + b));
  }
  ensure_finite(out, "blue_ratio");
  return out;
}

inline double blue_ratio_score(const Image& img) {
  const Tensor2D map = blue_ratio(img);
  double s = 0.0;
  for (double v : map.data) s += v;
  return s / static_cast<double>(map.size());
}

// Indices of the n highest mean-BR patches, score-descending with stable
// ascending-index tie-break; all indices when fewer than n patches exist.
inline std::vector<std::size_t> select_top_patches(const std::vector<Image>& patches,
                                                   std::size_t n) {
  if (patches.empty()) throw ValueError("select_top_patches: empty patch list");
  if (n < 1) throw ValueError("select_top_patches: n must be >= 1");
  std::vector<double> scores(patches.size());
  for (std::size_t i = 0; i < patches.size(); ++i) scores[i] = blue_ratio_score(patches[i]);
  std::vector<std::size_t> idx(patches.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(std::min(n, idx.size()));
  return idx;
}

// Background tissue tone plus Gaussian "nuclei" blobs in the hematoxylin
// channel; nucleus count scales with density. A few wide low-amplitude
// eosin bumps stand in for cytoplasm texture, which also keeps the OD
// covariance rank 2 so stain estimation has a plane to find. Pixels are
// exact two-stain compositions and stay continuous.
inline Image render_synthetic_patch(Rng& rng, double nuclei_density, const StainParams& stain,
                                    std::size_t size = 16) {
  if (nuclei_density < 0.0 || nuclei_density > 1.0) {
    throw ValueError("render_synthetic_patch: density must be in [0, 1]");
  }
  const std::size_t max_blobs =
      static_cast<std::size_t>(std::lround(0.055 * static_cast<double>(size * size)));
  const std::size_t n_blobs =
      static_cast<std::size_t>(std::lround(nuclei_density * static_cast<double>(max_blobs)));

  struct Blob {
    double x, y, amp, sigma;
  };
  const auto draw_blob = [&](double amp_base, double amp_jitter, double sigma_base) {
    Blob b;
    b.x = rng.uniform(0.0, static_cast<double>(size));
    b.y = rng.uniform(0.0, static_cast<double>(size));
    b.amp = amp_base * rng.uniform(1.0 - amp_jitter, 1.0 + amp_jitter);
    b.sigma = sigma_base * rng.uniform(0.85, 1.15);
    return b;
  };
  std::vector<Blob> nuclei;
  for (std::size_t i = 0; i < n_blobs; ++i) {
    nuclei.push_back(draw_blob(stain.nucleus_h, 0.2, stain.blob_sigma));
  }
  std::vector<Blob> cytoplasm;
  for (std::size_t i = 0; i < 3; ++i) {
    cytoplasm.push_back(draw_blob(0.4 * stain.background_e, 0.5,
                                  static_cast<double>(size) / 3.0));
  }

  Image img(size, size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const auto bump_sum = [&](const std::vector<Blob>& blobs) {
        double s = 0.0;
        for (const Blob& b : blobs) {
          const double dx = static_cast<double>(x) - b.x;
          const double dy = static_cast<double>(y) - b.y;
          s += b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
        }
        return s;
      };
      const double ch = stain.background_h + bump_sum(nuclei);
      const double ce = stain.background_e + bump_sum(cytoplasm);
      for (std::size_t c = 0; c < 3; ++c) {
        const double od = stain.intensity * (ch * stain.hematoxylin[c] + ce * stain.eosin[c]);
        img.at(y, x, c) = 256.0 * std::exp(-od) - 1.0;
      }
    }
  }
  clamp_channels(img);
  return img;
}

// Fixed random projection used as the flatten-and-project adapter from image
// patches to classifier features. Derived deterministically from the dataset
// seed so training and scoring agree without persisting the matrix.
inline Tensor2D make_projection(std::uint64_t seed, std::size_t patch_size,
                                std::size_t input_dim) {
  Rng rng = Rng(seed).derive(detail::kProjectionTag);
  const std::size_t flat = patch_size * patch_size * 3;
  return rng_normal(rng, flat, input_dim, 0.0, 1.0 / std::sqrt(static_cast<double>(flat)));
}

inline std::vector<double> project_image(const Image& img, const Tensor2D& projection) {
  if (img.data.size() != projection.rows) {
    throw DimensionError("project_image: image size " + std::to_string(img.data.size()) +
                         " does not match projection rows " + std::to_string(projection.rows));
  }
  std::vector<double> out(projection.cols, 0.0);
  for (std::size_t i = 0; i < projection.rows; ++i) {
    const double v = img.data[i] / 255.0 - 0.5;
    if (v == 0.0) continue;
    for (std::size_t j = 0; j < projection.cols; ++j) out[j] += v * projection.at(i, j);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generators

namespace detail {

inline void choose_patterns(GleasonGroup g, Rng& rng, int& primary, int& secondary) {
  switch (g) {
    case GleasonGroup::g6:
      primary = 3; secondary = 3; return;
    case GleasonGroup::g7_34:
      primary = 3; secondary = 4; return;
    case GleasonGroup::g7_43:
      primary = 4; secondary = 3; return;
    case GleasonGroup::g8: {
      static constexpr std::array<std::pair<int, int>, 3> opts{{{4, 4}, {3, 5}, {5, 3}}};
      const auto& p = opts[rng.uniform_index(opts.size())];
      primary = p.first; secondary = p.second; return;
    }
    case GleasonGroup::g9_10: {
      static constexpr std::array<std::pair<int, int>, 3> opts{{{4, 5}, {5, 4}, {5, 5}}};
      const auto& p = opts[rng.uniform_index(opts.size())];
      primary = p.first; secondary = p.second; return;
    }
  }
  throw ValueError("choose_patterns: bad group");
}

inline GleasonGroup group_of(int primary, int secondary) {
  const int score = primary + secondary;
  if (score <= 6) return GleasonGroup::g6;
  if (score == 7) return primary == 3 ? GleasonGroup::g7_34 : GleasonGroup::g7_43;
  if (score == 8) return GleasonGroup::g8;
  return GleasonGroup::g9_10;
}

inline std::vector<double> sample_features(const GenConfig& cfg, int pattern, Rng& rng) {
  const PatternStats& ps = cfg.pattern_stats[pattern_index(pattern)];
  std::vector<double> f(cfg.input_dim);
  for (std::size_t d = 0; d < cfg.input_dim; ++d) f[d] = rng.normal(ps.mean[d], ps.std_dev[d]);
  return f;
}

inline std::vector<double> apply_shift(const AffineShift& shift, const std::vector<double>& x) {
  if (shift.is_identity()) return x;
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    double s = shift.b[i];
    for (std::size_t j = 0; j < x.size(); ++j) s += shift.a.at(i, j) * x[j];
    out[i] = s;
  }
  return out;
}

inline Image render_for_pattern(const GenConfig& cfg, int pattern, const StainParams& stain,
                                Rng& rng) {
  const double base = cfg.image.density[pattern_index(pattern)];
  const double jitter = rng.uniform(-cfg.image.density_jitter, cfg.image.density_jitter);
  const double density = std::min(1.0, std::max(0.0, base + jitter));
  Image img = render_synthetic_patch(rng, density, stain, cfg.image.patch_size);
  quantize(img);  // persisted datasets carry 8-bit images
  return img;
}

}  // namespace detail

// Weak (target-domain) bags: every member instance inherits the bag label,
// so secondary-pattern instances in 7=3+4 bags carry a structurally wrong
// weak label. Per-bag derived streams keep generation order-independent.
inline std::vector<Bag> generate_weak_dataset(const GenConfig& cfg) {
  cfg.validate();
  const Rng root(cfg.seed);
  Tensor2D projection;
  if (cfg.substrate == Substrate::images) {
    projection = make_projection(cfg.seed, cfg.image.patch_size, cfg.input_dim);
  }
  std::vector<Bag> bags;
  bags.reserve(cfg.n_bags);
  for (std::size_t bi = 0; bi < cfg.n_bags; ++bi) {
    Rng rng = root.derive(detail::kBagTag + bi);
    Bag bag;
    bag.bag_id = static_cast<int>(bi);
    const auto gi = detail::weighted_choice(rng, cfg.group_weights.data(), cfg.group_weights.size());
    bag.group = static_cast<GleasonGroup>(gi);
    detail::choose_patterns(bag.group, rng, bag.primary_pattern, bag.secondary_pattern);
    bag.gleason_score = bag.primary_pattern + bag.secondary_pattern;
    bag.weak_label = bag.gleason_score <= 7 ? kLabelLow : kLabelHigh;

    const std::size_t total = (cfg.substrate == Substrate::images &&
                               cfg.image.candidate_patches > cfg.instances_per_bag)
                                  ? cfg.image.candidate_patches
                                  : cfg.instances_per_bag;
    const std::size_t n_benign = static_cast<std::size_t>(
        std::lround(cfg.benign_fraction * static_cast<double>(total)));
    const std::size_t n_primary = static_cast<std::size_t>(
        std::lround(cfg.primary_fraction * static_cast<double>(total)));
    const std::size_t n_secondary = total - std::min(total, n_benign + n_primary);

    std::vector<int> patterns;
    patterns.reserve(total);
    for (std::size_t i = 0; i < n_primary; ++i) patterns.push_back(bag.primary_pattern);
    for (std::size_t i = 0; i < n_secondary; ++i) patterns.push_back(bag.secondary_pattern);
    while (patterns.size() < total) patterns.push_back(0);

    std::vector<Instance> members;
    members.reserve(total);
    for (int pattern : patterns) {
      Instance inst;
      inst.bag_id = bag.bag_id;
      inst.true_pattern = pattern;
      inst.weak_label = bag.weak_label;
      if (cfg.substrate == Substrate::images) {
        inst.image = detail::render_for_pattern(cfg, pattern, cfg.image.weak_stain, rng);
        inst.features = project_image(inst.image, projection);
      } else {
        inst.features = detail::sample_features(cfg, pattern, rng);
      }
      members.push_back(std::move(inst));
    }

    if (members.size() > cfg.instances_per_bag) {
      // blue-ratio prioritization: keep the most nuclei-dense candidates
      std::vector<Image> imgs;
      imgs.reserve(members.size());
      for (const Instance& m : members) imgs.push_back(m.image);
      const auto keep = select_top_patches(imgs, cfg.instances_per_bag);
      std::vector<Instance> kept;
      kept.reserve(keep.size());
      for (std::size_t k : keep) kept.push_back(std::move(members[k]));
      members = std::move(kept);
    }
    bag.instances = std::move(members);
    bags.push_back(std::move(bag));
  }
  return bags;
}

// Strong (source-domain) instances: locally correct labels, features mapped
// through the affine shift (feature mode) or rendered with the source stain
// (image mode).
inline std::vector<Instance> generate_strong_dataset(const GenConfig& cfg) {
  cfg.validate();
  const Rng root(cfg.seed);
  Tensor2D projection;
  if (cfg.substrate == Substrate::images) {
    projection = make_projection(cfg.seed, cfg.image.patch_size, cfg.input_dim);
  }
  std::vector<Instance> out;
  out.reserve(cfg.n_strong);
  for (std::size_t i = 0; i < cfg.n_strong; ++i) {
    Rng rng = root.derive(detail::kStrongTag + i);
    const auto pi = detail::weighted_choice(rng, cfg.strong_pattern_weights.data(),
                                            cfg.strong_pattern_weights.size());
    Instance inst;
    inst.true_pattern = kPatterns[pi];
    inst.strong_label = is_high_pattern(inst.true_pattern) ? kLabelHigh : kLabelLow;
    if (cfg.substrate == Substrate::images) {
      inst.image = detail::render_for_pattern(cfg, inst.true_pattern, cfg.image.strong_stain, rng);
      inst.features = detail::apply_shift(cfg.shift, project_image(inst.image, projection));
    } else {
      inst.features = detail::apply_shift(cfg.shift, detail::sample_features(cfg, inst.true_pattern, rng));
    }
    out.push_back(std::move(inst));
  }
  return out;
}

struct Dataset {
  GenConfig config;
  std::vector<Bag> bags;
  std::vector<Instance> strong;
};

inline Dataset generate_dataset(const GenConfig& cfg) {
  Dataset d;
  d.config = cfg;
  d.bags = generate_weak_dataset(cfg);
  d.strong = generate_strong_dataset(cfg);
  return d;
}

}  // namespace weakstrong
