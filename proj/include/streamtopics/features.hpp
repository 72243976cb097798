#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "streamtopics/config.hpp"
#include "streamtopics/errors.hpp"
#include "streamtopics/image.hpp"
#include "streamtopics/rng.hpp"
#include "streamtopics/textio.hpp"
#include "streamtopics/word_stream.hpp"

namespace stm {

inline double luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

inline std::vector<double> luma_image(const Frame& frame) {
  std::vector<double> out(frame.pixels.size());
  for (std::size_t i = 0; i < frame.pixels.size(); ++i)
    out[i] = luma(frame.pixels[i][0], frame.pixels[i][1], frame.pixels[i][2]);
  return out;
}

/// Hue bin in [0, bins); achromatic pixels land in bin 0.
inline std::uint32_t hue_bin(std::uint8_t r, std::uint8_t g, std::uint8_t b, std::uint32_t bins) {
  const int hi = std::max({r, g, b});
  const int lo = std::min({r, g, b});
  const int chroma = hi - lo;
  if (chroma == 0) return 0;
  double sector;  // hue in [0, 6)
  if (hi == r)
    sector = std::fmod((static_cast<double>(g) - b) / chroma + 6.0, 6.0);
  else if (hi == g)
    sector = (static_cast<double>(b) - r) / chroma + 2.0;
  else
    sector = (static_cast<double>(r) - g) / chroma + 4.0;
  const auto bin = static_cast<std::uint32_t>(sector * bins / 6.0);
  return std::min(bin, bins - 1);
}

inline std::uint32_t intensity_bin(double luma_value, std::uint32_t bins) {
  const auto bin = static_cast<std::uint32_t>(luma_value * bins / 256.0);
  return std::min(bin, bins - 1);
}

struct GridPoint {
  std::uint32_t x = 0;
  std::uint32_t y = 0;
};

inline std::vector<GridPoint> grid_points(std::uint32_t width, std::uint32_t height,
                                          std::uint32_t grid_step) {
  if (grid_step == 0) throw ConfigError("grid_step must be positive");
  std::vector<GridPoint> points;
  for (std::uint32_t y = 0; y < height; y += grid_step)
    for (std::uint32_t x = 0; x < width; x += grid_step) points.push_back({x, y});
  return points;
}

/// One hue word and one intensity word per grid point. Hue words occupy
/// [0, hue_bins), intensity words [hue_bins, hue_bins + intensity_bins).
inline std::vector<WordObservation> pixel_words(const Frame& frame, std::uint32_t grid_step,
                                                std::uint32_t hue_bins, std::uint32_t intensity_bins,
                                                std::uint32_t t) {
  std::vector<WordObservation> words;
  for (const GridPoint& p : grid_points(frame.width, frame.height, grid_step)) {
    const auto& px = frame.at(p.x, p.y);
    words.push_back({hue_bin(px[0], px[1], px[2], hue_bins), p.x, p.y, t});
    words.push_back({hue_bins + intensity_bin(luma(px[0], px[1], px[2]), intensity_bins), p.x, p.y, t});
  }
  return words;
}

/// Oriented even/odd Gaussian-derivative pairs combined by energy:
/// 4 orientations (0, 45, 90, 135 degrees) x 3 scales (sigma 1, 2, 4),
/// giving 12 response channels ordered scale-major. Kernels are zero-mean
/// and L1-normalized; image access clamps to the edge.
class TextonFilterBank {
 public:
  static constexpr std::size_t kOrientations = 4;
  static constexpr std::size_t kScales = 3;
  static constexpr std::size_t kDim = kOrientations * kScales;

  TextonFilterBank() {
    // exact axis/diagonal direction cosines keep 90-degree rotations clean
    const double s = std::sqrt(0.5);
    const double dirs[kOrientations][2] = {{1.0, 0.0}, {s, s}, {0.0, 1.0}, {-s, s}};
    const double sigmas[kScales] = {1.0, 2.0, 4.0};
    for (double sigma : sigmas)
      for (const auto& dir : dirs) filters_.push_back(make_filter(sigma, dir[0], dir[1]));
  }

  std::uint32_t max_radius() const {
    std::uint32_t r = 0;
    for (const auto& f : filters_) r = std::max(r, static_cast<std::uint32_t>(f.radius));
    return r;
  }

  /// Filter energies at (x, y) of a luma raster.
  std::vector<double> response(const std::vector<double>& luma_values, std::uint32_t width,
                               std::uint32_t height, std::uint32_t x, std::uint32_t y) const {
    std::vector<double> out(filters_.size());
    for (std::size_t f = 0; f < filters_.size(); ++f) {
      const Filter& filt = filters_[f];
      const int r = filt.radius;
      double even = 0.0, odd = 0.0;
      std::size_t w = 0;
      for (int dy = -r; dy <= r; ++dy) {
        const std::int64_t yy = clamp_coord(static_cast<std::int64_t>(y) + dy, height);
        for (int dx = -r; dx <= r; ++dx, ++w) {
          const std::int64_t xx = clamp_coord(static_cast<std::int64_t>(x) + dx, width);
          const double v = luma_values[static_cast<std::size_t>(yy) * width + xx];
          even += filt.even[w] * v;
          odd += filt.odd[w] * v;
        }
      }
      out[f] = std::sqrt(even * even + odd * odd);
    }
    return out;
  }

 private:
  struct Filter {
    int radius = 0;
    std::vector<double> even, odd;  // (2r+1)^2, row major
  };

  static std::int64_t clamp_coord(std::int64_t v, std::uint32_t size) {
    return std::clamp<std::int64_t>(v, 0, static_cast<std::int64_t>(size) - 1);
  }

  static Filter make_filter(double sigma, double cx, double cy) {
    Filter f;
    f.radius = static_cast<int>(std::ceil(3.0 * sigma));
    const int r = f.radius;
    const std::size_t side = static_cast<std::size_t>(2 * r + 1);
    f.even.resize(side * side);
    f.odd.resize(side * side);
    const double s2 = sigma * sigma;
    std::size_t w = 0;
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx, ++w) {
        const double u = cx * dx + cy * dy;
        const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * s2));
        f.even[w] = (u * u / (s2 * s2) - 1.0 / s2) * g;  // d2G/du2
        f.odd[w] = -(u / s2) * g;                        // dG/du
      }
    center_and_scale(f.even);
    center_and_scale(f.odd);
    return f;
  }

  static void center_and_scale(std::vector<double>& kernel) {
    double mean = 0.0;
    for (double v : kernel) mean += v;
    mean /= static_cast<double>(kernel.size());
    double l1 = 0.0;
    for (double& v : kernel) {
      v -= mean;
      l1 += std::abs(v);
    }
    if (l1 > 0.0)
      for (double& v : kernel) v /= l1;
  }

  std::vector<Filter> filters_;
};

/// Filter-bank responses sampled on the word grid. The frame must be larger
/// than the widest filter support.
inline std::vector<std::vector<double>> filter_responses(const Frame& frame,
                                                         std::uint32_t grid_step,
                                                         const TextonFilterBank& bank) {
  const std::uint32_t support = 2 * bank.max_radius() + 1;
  if (frame.width < support || frame.height < support)
    throw ConfigError("frame smaller than the filter support (" + std::to_string(support) + "px)");
  const std::vector<double> lum = luma_image(frame);
  std::vector<std::vector<double>> responses;
  for (const GridPoint& p : grid_points(frame.width, frame.height, grid_step))
    responses.push_back(bank.response(lum, frame.width, frame.height, p.x, p.y));
  return responses;
}

struct Codebook {
  std::vector<std::vector<double>> centers;

  bool trained() const { return !centers.empty(); }
  std::size_t size() const { return centers.size(); }
  std::size_t dim() const { return centers.empty() ? 0 : centers.front().size(); }
};

inline double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    d += diff * diff;
  }
  return d;
}

/// Nearest center by squared Euclidean distance, lowest index on ties.
inline std::uint32_t quantize(const std::vector<double>& v, const Codebook& book) {
  if (!book.trained()) throw ModelError("quantize: codebook is not trained");
  if (v.size() != book.dim()) throw ModelError("quantize: vector dimension mismatch");
  std::uint32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::uint32_t i = 0; i < book.centers.size(); ++i) {
    const double d = squared_distance(v, book.centers[i]);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

/// Seeded k-means++ initialization followed by Lloyd iterations (capped).
/// Empty clusters are reseeded to the point farthest from its center.
inline Codebook train_codebook(const std::vector<std::vector<double>>& vectors, std::uint32_t k,
                               std::uint64_t seed, std::uint32_t max_iters = 50) {
  if (k == 0) throw ConfigError("train_codebook: k must be positive");
  if (vectors.empty()) throw ConfigError("train_codebook: no training vectors");
  const std::size_t dim = vectors.front().size();
  for (const auto& v : vectors)
    if (v.size() != dim) throw ConfigError("train_codebook: inconsistent dimensions");
  {
    auto sorted = vectors;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    if (sorted.size() < k)
      throw ConfigError("train_codebook: fewer than k distinct training vectors");
  }

  Rng rng(seed, /*stream=*/0x6b6d65616e73ull);
  Codebook book;
  book.centers.push_back(vectors[rng.below(vectors.size())]);
  std::vector<double> dist2(vectors.size());
  while (book.centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < vectors.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : book.centers)
        best = std::min(best, squared_distance(vectors[i], c));
      dist2[i] = best;
      total += best;
    }
    const double u = rng.uniform() * total;
    double acc = 0.0;
    std::size_t pick = vectors.size() - 1;
    for (std::size_t i = 0; i < vectors.size(); ++i) {
      acc += dist2[i];
      if (u < acc) {
        pick = i;
        break;
      }
    }
    book.centers.push_back(vectors[pick]);
  }

  std::vector<std::uint32_t> assign(vectors.size(), 0);
  for (std::uint32_t iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < vectors.size(); ++i) {
      const std::uint32_t nearest = quantize(vectors[i], book);
      if (nearest != assign[i]) {
        assign[i] = nearest;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;

    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < vectors.size(); ++i) {
      for (std::size_t d = 0; d < dim; ++d) sums[assign[i]][d] += vectors[i][d];
      ++counts[assign[i]];
    }
    for (std::uint32_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // farthest point from its own center restarts the empty cluster
        std::size_t far_i = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < vectors.size(); ++i) {
          const double d = squared_distance(vectors[i], book.centers[assign[i]]);
          if (d > far_d && counts[assign[i]] > 1) {
            far_d = d;
            far_i = i;
          }
        }
        --counts[assign[far_i]];
        for (std::size_t d = 0; d < dim; ++d) sums[assign[far_i]][d] -= vectors[far_i][d];
        assign[far_i] = c;
        counts[c] = 1;
        sums[c] = vectors[far_i];
      }
    }
    for (std::uint32_t c = 0; c < k; ++c)
      for (std::size_t d = 0; d < dim; ++d)
        book.centers[c][d] = sums[c][d] / static_cast<double>(counts[c]);
  }
  return book;
}

inline void write_codebook(std::ostream& out, const Codebook& book) {
  if (!book.trained()) throw ModelError("write_codebook: codebook is not trained");
  out << "STMCODEBOOK v1 K=" << book.size() << " dim=" << book.dim() << '\n';
  for (const auto& center : book.centers) {
    for (std::size_t d = 0; d < center.size(); ++d) {
      if (d) out << ' ';
      out << detail::format_g17(center[d]);
    }
    out << '\n';
  }
}

inline Codebook parse_codebook(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("codebook line 1: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::istringstream header(line);
  std::string magic, version, k_field, dim_field;
  header >> magic >> version >> k_field >> dim_field;
  if (magic != "STMCODEBOOK" || version != "v1" || k_field.rfind("K=", 0) != 0 ||
      dim_field.rfind("dim=", 0) != 0 || !header.eof())
    throw ParseError("codebook line 1: bad header");
  const std::uint64_t k = Config::parse_u64(k_field.substr(2), "K");
  const std::uint64_t dim = Config::parse_u64(dim_field.substr(4), "dim");
  if (k == 0 || dim == 0) throw ParseError("codebook line 1: empty codebook");

  Codebook book;
  for (std::uint64_t i = 0; i < k; ++i) {
    if (!std::getline(in, line))
      throw ParseError("codebook line " + std::to_string(i + 2) + ": missing row");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream row(line);
    std::vector<double> center(dim);
    for (std::uint64_t d = 0; d < dim; ++d)
      if (!(row >> center[d]))
        throw ParseError("codebook line " + std::to_string(i + 2) + ": bad row");
    std::string extra;
    if (row >> extra)
      throw ParseError("codebook line " + std::to_string(i + 2) + ": trailing fields");
    book.centers.push_back(std::move(center));
  }
  return book;
}

inline Codebook parse_codebook_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open codebook file '" + path + "'");
  return parse_codebook(in);
}

struct BackgroundParams {
  std::uint32_t components = 3;
  double match_sigma = 2.5;
  double bg_fraction = 0.7;
  double learning_rate = 0.01;
  double var_floor = 4.0;
  double init_var = 225.0;

  void validate() const {
    if (components == 0) throw ConfigError("background model: components must be positive");
    if (!(match_sigma > 0.0)) throw ConfigError("background model: match_sigma must be positive");
    if (!(bg_fraction > 0.0) || bg_fraction > 1.0)
      throw ConfigError("background model: bg_fraction must lie in (0,1]");
    if (!(learning_rate > 0.0) || learning_rate > 1.0)
      throw ConfigError("background model: learning_rate must lie in (0,1]");
    if (!(var_floor > 0.0)) throw ConfigError("background model: var_floor must be positive");
    if (init_var < var_floor) throw ConfigError("background model: init_var below var_floor");
  }
};

/// Per-pixel mixture-of-Gaussians background subtraction over luma. Each
/// update matches the pixel to a component within match_sigma deviations,
/// reinforces it (or replaces the weakest when nothing matches), and labels
/// the pixel foreground unless its match lies inside the cumulative-weight
/// background prefix. All pixels start unmodeled, so the first frame is
/// entirely foreground.
class BackgroundModel {
 public:
  struct Component {
    double weight = 0.0;
    double mean = 0.0;
    double var = 0.0;
  };

  BackgroundModel(std::uint32_t width, std::uint32_t height, BackgroundParams params = {})
      : width_(width), height_(height), params_(params) {
    params_.validate();
    if (width_ == 0 || height_ == 0)
      throw ConfigError("background model: empty frame dimensions");
    components_.resize(static_cast<std::size_t>(width_) * height_ * params_.components,
                       Component{0.0, 0.0, params_.init_var});
  }

  std::uint32_t width() const { return width_; }
  std::uint32_t height() const { return height_; }
  const Component& component(std::uint32_t x, std::uint32_t y, std::uint32_t i) const {
    return components_[(static_cast<std::size_t>(y) * width_ + x) * params_.components + i];
  }

  /// Returns the foreground mask (1 = foreground) and adapts the model.
  std::vector<std::uint8_t> update(const Frame& frame) {
    if (frame.width != width_ || frame.height != height_)
      throw ConfigError("background model: frame dimensions changed");
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(width_) * height_, 0);
    const std::uint32_t m = params_.components;
    for (std::size_t p = 0; p < mask.size(); ++p) {
      Component* comps = &components_[p * m];
      const double v = luma(frame.pixels[p][0], frame.pixels[p][1], frame.pixels[p][2]);

      int matched = -1;
      for (std::uint32_t i = 0; i < m; ++i) {
        if (comps[i].weight <= 0.0) continue;
        const double dev = v - comps[i].mean;
        if (dev * dev <= params_.match_sigma * params_.match_sigma * comps[i].var) {
          matched = static_cast<int>(i);
          break;
        }
      }

      // background prefix is judged on the pre-update mixture
      bool foreground = true;
      if (matched >= 0) {
        double cumulative = 0.0;
        for (int i = 0; i <= matched; ++i) cumulative += comps[i].weight;
        const double before = cumulative - comps[matched].weight;
        foreground = before > params_.bg_fraction;
      }
      mask[p] = foreground ? 1 : 0;

      const double lr = params_.learning_rate;
      if (matched >= 0) {
        for (std::uint32_t i = 0; i < m; ++i)
          comps[i].weight = (1.0 - lr) * comps[i].weight + (i == static_cast<std::uint32_t>(matched) ? lr : 0.0);
        Component& c = comps[matched];
        c.mean += lr * (v - c.mean);
        const double dev = v - c.mean;
        c.var = std::max((1.0 - lr) * c.var + lr * dev * dev, params_.var_floor);
      } else {
        std::uint32_t weakest = m - 1;
        for (std::uint32_t i = 0; i < m; ++i)
          if (comps[i].weight < comps[weakest].weight) weakest = i;
        comps[weakest] = Component{lr, v, params_.init_var};
      }

      double total = 0.0;
      for (std::uint32_t i = 0; i < m; ++i) total += comps[i].weight;
      for (std::uint32_t i = 0; i < m; ++i) comps[i].weight /= total;
      std::stable_sort(comps, comps + m, [](const Component& a, const Component& b) {
        return a.weight / std::sqrt(a.var) > b.weight / std::sqrt(b.var);
      });
    }
    return mask;
  }

 private:
  std::uint32_t width_ = 0;
  std::uint32_t height_ = 0;
  BackgroundParams params_;
  std::vector<Component> components_;
};

/// Foreground words always survive; background words survive independently
/// with probability bg_density_ratio. One uniform draw is consumed per
/// background word, none for foreground words.
inline std::vector<WordObservation> mask_subsample(const std::vector<WordObservation>& words,
                                                   const std::vector<std::uint8_t>& mask,
                                                   std::uint32_t width, std::uint32_t height,
                                                   double bg_density_ratio, Rng& rng) {
  if (bg_density_ratio < 0.0 || bg_density_ratio > 1.0)
    throw ConfigError("bg_density_ratio must lie in [0,1]");
  if (mask.size() != static_cast<std::size_t>(width) * height)
    throw ConfigError("mask does not match frame dimensions");
  std::vector<WordObservation> kept;
  for (const WordObservation& w : words) {
    if (w.x >= width || w.y >= height)
      throw ConfigError("word position outside the mask");
    if (mask[static_cast<std::size_t>(w.y) * width + w.x]) {
      kept.push_back(w);
    } else if (rng.uniform() < bg_density_ratio) {
      kept.push_back(w);
    }
  }
  return kept;
}

struct ExtractConfig {
  std::uint32_t grid_step = 16;
  std::uint32_t hue_bins = 12;
  std::uint32_t intensity_bins = 8;
  std::uint32_t texton_codewords = 1000;
  std::uint32_t kmeans_iters = 50;
  std::uint32_t max_training_vectors = 100000;
  std::uint32_t diff_bins = 0;  // 0 disables the frame-difference channel
  bool use_background_model = false;
  double bg_density_ratio = 0.25;
  BackgroundParams background;
  std::uint64_t seed = 0;

  static ExtractConfig from_config(const Config& cfg) {
    cfg.restrict_to({"grid_step", "hue_bins", "intensity_bins", "texton_codewords",
                     "kmeans_iters", "max_training_vectors", "diff_bins", "use_background_model",
                     "bg_density_ratio", "bg_components", "bg_match_sigma", "bg_fraction",
                     "bg_learning_rate", "bg_var_floor", "bg_init_var", "seed"});
    ExtractConfig ec;
    ec.grid_step = cfg.get_u32("grid_step", ec.grid_step);
    ec.hue_bins = cfg.get_u32("hue_bins", ec.hue_bins);
    ec.intensity_bins = cfg.get_u32("intensity_bins", ec.intensity_bins);
    ec.texton_codewords = cfg.get_u32("texton_codewords", ec.texton_codewords);
    ec.kmeans_iters = cfg.get_u32("kmeans_iters", ec.kmeans_iters);
    ec.max_training_vectors = cfg.get_u32("max_training_vectors", ec.max_training_vectors);
    ec.diff_bins = cfg.get_u32("diff_bins", ec.diff_bins);
    ec.use_background_model = cfg.get_bool("use_background_model", ec.use_background_model);
    ec.bg_density_ratio = cfg.get_double("bg_density_ratio", ec.bg_density_ratio);
    ec.background.components = cfg.get_u32("bg_components", ec.background.components);
    ec.background.match_sigma = cfg.get_double("bg_match_sigma", ec.background.match_sigma);
    ec.background.bg_fraction = cfg.get_double("bg_fraction", ec.background.bg_fraction);
    ec.background.learning_rate = cfg.get_double("bg_learning_rate", ec.background.learning_rate);
    ec.background.var_floor = cfg.get_double("bg_var_floor", ec.background.var_floor);
    ec.background.init_var = cfg.get_double("bg_init_var", ec.background.init_var);
    ec.seed = cfg.get_u64("seed", ec.seed);
    ec.validate();
    return ec;
  }

  void validate() const {
    if (grid_step == 0) throw ConfigError("grid_step must be positive");
    if (hue_bins == 0 || intensity_bins == 0) throw ConfigError("bin counts must be positive");
    if (texton_codewords == 0) throw ConfigError("texton_codewords must be positive");
    if (kmeans_iters == 0) throw ConfigError("kmeans_iters must be positive");
    if (max_training_vectors < texton_codewords)
      throw ConfigError("max_training_vectors below texton_codewords");
    if (bg_density_ratio < 0.0 || bg_density_ratio > 1.0)
      throw ConfigError("bg_density_ratio must lie in [0,1]");
    background.validate();
  }

  VocabularyLayout layout() const {
    std::vector<VocabChannel> channels{{"hue", hue_bins},
                                       {"intensity", intensity_bins},
                                       {"texton", texton_codewords}};
    if (diff_bins > 0) channels.push_back({"diff", diff_bins});
    return VocabularyLayout(channels);
  }
};

/// Frame-to-words pipeline: grid pixel words, codebook-quantized texton
/// words, an optional frame-difference channel, and optional background
/// subsampling. Train (or install) the codebook before extracting.
class WordExtractor {
 public:
  explicit WordExtractor(ExtractConfig cfg)
      : cfg_(cfg), layout_(cfg.layout()), rng_(cfg.seed, /*stream=*/0x7375627361ull) {
    cfg_.validate();
  }

  const VocabularyLayout& layout() const { return layout_; }
  const Codebook& codebook() const { return codebook_; }
  std::size_t training_size() const { return training_.size(); }

  /// Collects filter responses for codebook training (capped).
  void accumulate_training(const Frame& frame) {
    if (codebook_.trained()) throw ModelError("extractor: codebook already trained");
    for (auto& response : filter_responses(frame, cfg_.grid_step, bank_)) {
      if (training_.size() >= cfg_.max_training_vectors) return;
      training_.push_back(std::move(response));
    }
  }

  void train() {
    codebook_ = train_codebook(training_, cfg_.texton_codewords, cfg_.seed, cfg_.kmeans_iters);
    training_.clear();
    training_.shrink_to_fit();
  }

  void set_codebook(Codebook book) {
    if (!book.trained() || book.size() != cfg_.texton_codewords ||
        book.dim() != TextonFilterBank::kDim)
      throw ConfigError("extractor: codebook does not match the configuration");
    codebook_ = std::move(book);
  }

  /// Words for one frame, in grid order: hue, intensity, texton, then the
  /// difference word once a previous frame exists.
  std::vector<WordObservation> extract(const Frame& frame, std::uint32_t t) {
    if (!codebook_.trained()) throw ModelError("extractor: codebook is not trained");
    const std::vector<double> lum = luma_image(frame);
    const std::uint32_t support = 2 * bank_.max_radius() + 1;
    if (frame.width < support || frame.height < support)
      throw ConfigError("frame smaller than the filter support (" + std::to_string(support) + "px)");

    const std::uint32_t hue_off = layout_.offset(0);
    const std::uint32_t int_off = layout_.offset(1);
    const std::uint32_t texton_off = layout_.offset(2);
    const bool diff_on = cfg_.diff_bins > 0;
    const bool have_prev = diff_on && prev_width_ == frame.width && prev_height_ == frame.height;

    std::vector<WordObservation> words;
    for (const GridPoint& p : grid_points(frame.width, frame.height, cfg_.grid_step)) {
      const auto& px = frame.at(p.x, p.y);
      const double lv = lum[static_cast<std::size_t>(p.y) * frame.width + p.x];
      words.push_back({hue_off + hue_bin(px[0], px[1], px[2], cfg_.hue_bins), p.x, p.y, t});
      words.push_back({int_off + intensity_bin(lv, cfg_.intensity_bins), p.x, p.y, t});
      const auto response = bank_.response(lum, frame.width, frame.height, p.x, p.y);
      words.push_back({texton_off + quantize(response, codebook_), p.x, p.y, t});
      if (have_prev) {
        const double d = std::abs(lv - prev_luma_[static_cast<std::size_t>(p.y) * frame.width + p.x]);
        words.push_back({layout_.offset(3) + intensity_bin(d, cfg_.diff_bins), p.x, p.y, t});
      }
    }
    if (diff_on) {
      prev_luma_ = lum;
      prev_width_ = frame.width;
      prev_height_ = frame.height;
    }

    if (cfg_.use_background_model) {
      if (!background_ || background_->width() != frame.width ||
          background_->height() != frame.height)
        background_.emplace(frame.width, frame.height, cfg_.background);
      const std::vector<std::uint8_t> mask = background_->update(frame);
      words = mask_subsample(words, mask, frame.width, frame.height, cfg_.bg_density_ratio, rng_);
    }
    return words;
  }

 private:
  ExtractConfig cfg_;
  VocabularyLayout layout_;
  TextonFilterBank bank_;
  std::vector<std::vector<double>> training_;
  Codebook codebook_;
  std::optional<BackgroundModel> background_;
  std::vector<double> prev_luma_;
  std::uint32_t prev_width_ = 0;
  std::uint32_t prev_height_ = 0;
  Rng rng_;
};

}  // namespace stm
