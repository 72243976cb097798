#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "streamtopics/config.hpp"
#include "streamtopics/errors.hpp"
#include "streamtopics/rng.hpp"
#include "streamtopics/topic_model.hpp"
#include "streamtopics/word_stream.hpp"

namespace stm {

/// Half-open frame window [t_start, t_end) during which a fraction
/// `intensity` of the drawn words is replaced by draws from `probs`.
struct AnomalyWindow {
  std::uint32_t t_start = 0;
  std::uint32_t t_end = 0;
  double intensity = 1.0;
  std::vector<double> probs;
};

struct BackgroundTopic {
  double weight = 1.0;
  std::vector<double> probs;
};

struct SynthSpec {
  std::uint32_t vocab_size = 0;
  std::uint32_t frames = 0;
  std::uint32_t width = 640;
  std::uint32_t height = 480;
  std::uint32_t cell_size = 128;
  std::uint32_t words_per_frame = 0;
  std::uint64_t seed = 0;
  std::vector<BackgroundTopic> topics;
  std::vector<AnomalyWindow> windows;

  void validate() const {
    if (vocab_size == 0) throw ConfigError("synth spec: V must be positive");
    if (frames == 0) throw ConfigError("synth spec: T must be positive");
    if (words_per_frame == 0) throw ConfigError("synth spec: words_per_frame must be positive");
    if (width == 0 || height == 0) throw ConfigError("synth spec: frame geometry must be positive");
    if (cell_size == 0) throw ConfigError("synth spec: cell_size must be positive");
    if (topics.empty()) throw ConfigError("synth spec: at least one background topic required");
    for (std::size_t i = 0; i < topics.size(); ++i) {
      if (!(topics[i].weight > 0.0))
        throw ConfigError("synth spec: topic." + std::to_string(i) + ".weight must be positive");
      check_dist(topics[i].probs, "topic." + std::to_string(i) + ".dist");
    }
    for (std::size_t j = 0; j < windows.size(); ++j) {
      const auto& w = windows[j];
      const std::string tag = "anomaly." + std::to_string(j);
      if (w.t_start >= w.t_end)
        throw ConfigError("synth spec: " + tag + " window is empty");
      if (w.t_end > frames)
        throw ConfigError("synth spec: " + tag + " window exceeds stream length");
      if (!(w.intensity > 0.0) || w.intensity > 1.0)
        throw ConfigError("synth spec: " + tag + ".intensity must lie in (0,1]");
      check_dist(w.probs, tag + ".dist");
      for (std::size_t i = 0; i < j; ++i)
        if (w.t_start < windows[i].t_end && windows[i].t_start < w.t_end)
          throw ConfigError("synth spec: anomaly windows overlap");
    }
  }

 private:
  void check_dist(const std::vector<double>& p, const std::string& tag) const {
    if (p.size() != vocab_size)
      throw ConfigError("synth spec: " + tag + " must have V entries");
    double sum = 0.0;
    for (double v : p) {
      if (!(v >= 0.0)) throw ConfigError("synth spec: " + tag + " has a negative entry");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw ConfigError("synth spec: " + tag + " does not sum to 1");
  }
};

namespace detail {

inline std::vector<double> parse_dist_text(const std::string& text, std::uint32_t vocab_size,
                                           const std::string& key) {
  std::vector<double> probs(vocab_size, 0.0);
  if (text.rfind("uniform(", 0) == 0) {
    if (text.back() != ')')
      throw ConfigError("config key '" + key + "': malformed uniform(...) range");
    const std::string inner = text.substr(8, text.size() - 9);
    const auto comma = inner.find(',');
    if (comma == std::string::npos)
      throw ConfigError("config key '" + key + "': uniform range needs two bounds");
    const std::uint64_t lo = Config::parse_u64(inner.substr(0, comma), key);
    const std::uint64_t hi = Config::parse_u64(inner.substr(comma + 1), key);
    if (lo > hi || hi >= vocab_size)
      throw ConfigError("config key '" + key + "': uniform range outside vocabulary");
    const double mass = 1.0 / static_cast<double>(hi - lo + 1);
    for (std::uint64_t v = lo; v <= hi; ++v) probs[v] = mass;
    return probs;
  }
  std::size_t begin = 0, idx = 0;
  while (begin <= text.size()) {
    const auto comma = text.find(',', begin);
    const std::string field =
        text.substr(begin, comma == std::string::npos ? std::string::npos : comma - begin);
    if (idx >= vocab_size)
      throw ConfigError("config key '" + key + "': more than V probabilities");
    try {
      std::size_t used = 0;
      probs[idx] = std::stod(field, &used);
      if (used != field.size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': bad probability '" + field + "'");
    }
    ++idx;
    if (comma == std::string::npos) break;
    begin = comma + 1;
  }
  if (idx != vocab_size)
    throw ConfigError("config key '" + key + "': expected V probabilities");
  return probs;
}

inline std::size_t indexed_family_size(const Config& cfg, const std::string& prefix) {
  std::size_t n = 0;
  for (const auto& [key, value] : cfg.entries())
    if (key.rfind(prefix, 0) == 0) {
      const auto dot = key.find('.', prefix.size());
      if (dot == std::string::npos)
        throw ConfigError("unknown config key '" + key + "'");
      const std::uint64_t idx = Config::parse_u64(key.substr(prefix.size(), dot - prefix.size()), key);
      n = std::max<std::size_t>(n, idx + 1);
    }
  return n;
}

}  // namespace detail

/// Reads a generator spec from flat key=value text. Topics are given as
/// topic.<i>.dist (and optional topic.<i>.weight); anomaly windows as
/// anomaly.<j>.start / end / intensity / dist. Distributions are either a
/// comma list of V probabilities or uniform(lo,hi) over a word id range.
inline SynthSpec parse_synth_spec(const Config& cfg) {
  cfg.restrict_to({"V", "T", "width", "height", "cell_size", "words_per_frame", "seed",
                   "topic.", "anomaly."});
  SynthSpec spec;
  if (!cfg.has("V")) throw ConfigError("synth spec: missing key 'V'");
  if (!cfg.has("T")) throw ConfigError("synth spec: missing key 'T'");
  if (!cfg.has("words_per_frame")) throw ConfigError("synth spec: missing key 'words_per_frame'");
  spec.vocab_size = cfg.get_u32("V", 0);
  spec.frames = cfg.get_u32("T", 0);
  spec.width = cfg.get_u32("width", spec.width);
  spec.height = cfg.get_u32("height", spec.height);
  spec.cell_size = cfg.get_u32("cell_size", spec.cell_size);
  spec.words_per_frame = cfg.get_u32("words_per_frame", 0);
  spec.seed = cfg.get_u64("seed", 0);

  const std::size_t n_topics = detail::indexed_family_size(cfg, "topic.");
  if (n_topics == 0) throw ConfigError("synth spec: no background topics defined");
  for (std::size_t i = 0; i < n_topics; ++i) {
    const std::string base = "topic." + std::to_string(i) + ".";
    if (!cfg.has(base + "dist"))
      throw ConfigError("synth spec: missing key '" + base + "dist'");
    BackgroundTopic topic;
    topic.weight = cfg.get_double(base + "weight", 1.0);
    topic.probs = detail::parse_dist_text(cfg.get_string(base + "dist", ""), spec.vocab_size,
                                          base + "dist");
    spec.topics.push_back(std::move(topic));
  }
  for (const auto& [key, value] : cfg.entries()) {
    if (key.rfind("topic.", 0) != 0) continue;
    const auto dot = key.find('.', 6);
    const std::string field = key.substr(dot + 1);
    if (field != "dist" && field != "weight")
      throw ConfigError("unknown config key '" + key + "'");
  }

  const std::size_t n_windows = detail::indexed_family_size(cfg, "anomaly.");
  for (std::size_t j = 0; j < n_windows; ++j) {
    const std::string base = "anomaly." + std::to_string(j) + ".";
    for (const char* field : {"start", "end", "intensity", "dist"})
      if (!cfg.has(base + field))
        throw ConfigError("synth spec: missing key '" + base + field + "'");
    AnomalyWindow window;
    window.t_start = cfg.get_u32(base + "start", 0);
    window.t_end = cfg.get_u32(base + "end", 0);
    window.intensity = cfg.get_double(base + "intensity", 1.0);
    window.probs = detail::parse_dist_text(cfg.get_string(base + "dist", ""), spec.vocab_size,
                                           base + "dist");
    spec.windows.push_back(std::move(window));
  }
  for (const auto& [key, value] : cfg.entries()) {
    if (key.rfind("anomaly.", 0) != 0) continue;
    const auto dot = key.find('.', 8);
    const std::string field = key.substr(dot + 1);
    if (field != "start" && field != "end" && field != "intensity" && field != "dist")
      throw ConfigError("unknown config key '" + key + "'");
  }
  spec.validate();
  return spec;
}

struct TruthEvent {
  std::uint32_t t_start = 0;
  std::uint32_t t_end = 0;  // exclusive
  double intensity = 0.0;
  std::uint32_t rank = 0;  // 1-based window index
};

struct GroundTruth {
  std::uint32_t frames = 0;
  std::uint32_t vocab_size = 0;
  std::vector<TruthEvent> events;
  std::vector<std::uint32_t> labels;  // per observation: topic index, windows after topics
};

struct SynthResult {
  WordStream stream;
  GroundTruth truth;
};

/// Expected word distribution at frame t: the background mixture, blended
/// with the window distribution at its intensity when t falls inside one.
inline std::vector<double> expected_word_distribution(const SynthSpec& spec, std::uint32_t t) {
  double weight_sum = 0.0;
  for (const auto& topic : spec.topics) weight_sum += topic.weight;
  std::vector<double> mix(spec.vocab_size, 0.0);
  for (const auto& topic : spec.topics)
    for (std::uint32_t v = 0; v < spec.vocab_size; ++v)
      mix[v] += topic.weight / weight_sum * topic.probs[v];
  for (const auto& w : spec.windows) {
    if (t < w.t_start || t >= w.t_end) continue;
    for (std::uint32_t v = 0; v < spec.vocab_size; ++v)
      mix[v] = (1.0 - w.intensity) * mix[v] + w.intensity * w.probs[v];
    break;
  }
  return mix;
}

namespace detail {

inline std::size_t draw_from_cdf(Rng& rng, const std::vector<double>& cdf) {
  const double u = rng.uniform() * cdf.back();
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
}

inline std::vector<double> cumulative(const std::vector<double>& p) {
  std::vector<double> cdf(p.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    cdf[i] = acc;
  }
  return cdf;
}

}  // namespace detail

/// Draws the stream. Per word the draw order is fixed (position, window
/// replacement test, mixture component, word) so outputs are reproducible
/// byte for byte given the seed.
inline SynthResult generate(const SynthSpec& spec) {
  spec.validate();
  SynthResult result;
  result.stream.layout = VocabularyLayout({{"synth", spec.vocab_size}});
  result.truth.frames = spec.frames;
  result.truth.vocab_size = spec.vocab_size;
  for (std::size_t j = 0; j < spec.windows.size(); ++j)
    result.truth.events.push_back({spec.windows[j].t_start, spec.windows[j].t_end,
                                   spec.windows[j].intensity,
                                   static_cast<std::uint32_t>(j + 1)});

  std::vector<double> weights;
  for (const auto& topic : spec.topics) weights.push_back(topic.weight);
  const std::vector<double> weight_cdf = detail::cumulative(weights);
  std::vector<std::vector<double>> topic_cdf;
  for (const auto& topic : spec.topics) topic_cdf.push_back(detail::cumulative(topic.probs));
  std::vector<std::vector<double>> window_cdf;
  for (const auto& w : spec.windows) window_cdf.push_back(detail::cumulative(w.probs));

  Rng rng(spec.seed);
  result.stream.observations.reserve(static_cast<std::size_t>(spec.frames) * spec.words_per_frame);
  result.truth.labels.reserve(result.stream.observations.capacity());
  for (std::uint32_t t = 0; t < spec.frames; ++t) {
    std::size_t window = spec.windows.size();
    for (std::size_t j = 0; j < spec.windows.size(); ++j)
      if (t >= spec.windows[j].t_start && t < spec.windows[j].t_end) {
        window = j;
        break;
      }
    for (std::uint32_t i = 0; i < spec.words_per_frame; ++i) {
      WordObservation obs;
      obs.t = t;
      obs.x = static_cast<std::uint32_t>(rng.below(spec.width));
      obs.y = static_cast<std::uint32_t>(rng.below(spec.height));
      bool anomalous = false;
      if (window < spec.windows.size())
        anomalous = rng.uniform() < spec.windows[window].intensity;
      std::uint32_t label;
      if (anomalous) {
        obs.word = static_cast<std::uint32_t>(detail::draw_from_cdf(rng, window_cdf[window]));
        label = static_cast<std::uint32_t>(spec.topics.size() + window);
      } else {
        const std::size_t c = detail::draw_from_cdf(rng, weight_cdf);
        obs.word = static_cast<std::uint32_t>(detail::draw_from_cdf(rng, topic_cdf[c]));
        label = static_cast<std::uint32_t>(c);
      }
      result.stream.observations.push_back(obs);
      result.truth.labels.push_back(label);
    }
  }
  return result;
}

inline void write_truth_json(std::ostream& out, const GroundTruth& truth) {
  nlohmann::ordered_json j;
  j["T"] = truth.frames;
  j["V"] = truth.vocab_size;
  j["events"] = nlohmann::ordered_json::array();
  for (const auto& e : truth.events) {
    nlohmann::ordered_json ev;
    ev["t_start"] = e.t_start;
    ev["t_end"] = e.t_end;
    ev["intensity"] = e.intensity;
    ev["rank"] = e.rank;
    j["events"].push_back(ev);
  }
  j["labels"] = truth.labels;
  out << j.dump(2) << '\n';
}

namespace detail {

inline std::uint32_t truth_u32(const nlohmann::json& v, const char* key) {
  if (v.is_number_unsigned()) {
    const std::uint64_t u = v.get<std::uint64_t>();
    if (u <= 0xffffffffull) return static_cast<std::uint32_t>(u);
  } else if (v.is_number_integer()) {
    const std::int64_t n = v.get<std::int64_t>();
    if (n >= 0 && n <= 0xffffffffll) return static_cast<std::uint32_t>(n);
  }
  throw ParseError(std::string("ground truth JSON: ") + key +
                   " must be a non-negative 32-bit integer");
}

}  // namespace detail

inline GroundTruth read_truth_json(std::istream& in) {
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("ground truth JSON: ") + e.what());
  }
  try {
    GroundTruth truth;
    truth.frames = detail::truth_u32(j.at("T"), "T");
    truth.vocab_size = detail::truth_u32(j.at("V"), "V");
    for (const auto& ev : j.at("events")) {
      TruthEvent e;
      e.t_start = detail::truth_u32(ev.at("t_start"), "t_start");
      e.t_end = detail::truth_u32(ev.at("t_end"), "t_end");
      e.intensity = ev.at("intensity").get<double>();
      e.rank = detail::truth_u32(ev.at("rank"), "rank");
      truth.events.push_back(e);
    }
    if (j.count("labels"))
      for (const auto& v : j.at("labels")) truth.labels.push_back(detail::truth_u32(v, "labels"));
    return truth;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("ground truth JSON: ") + e.what());
  }
}

/// Per-frame planted-event density: sum of intensities of windows covering t.
inline std::vector<double> event_density(const GroundTruth& truth) {
  std::vector<double> density(truth.frames, 0.0);
  for (const auto& e : truth.events)
    for (std::uint32_t t = e.t_start; t < e.t_end && t < truth.frames; ++t)
      density[t] += e.intensity;
  return density;
}

/// Canonical partition key: labels relabeled in order of first occurrence,
/// one digit per observation ("00102" etc).
inline std::string partition_key(const std::vector<std::int32_t>& labels) {
  std::string key;
  key.reserve(labels.size());
  std::map<std::int32_t, char> seen;
  for (std::int32_t label : labels) {
    auto it = seen.find(label);
    if (it == seen.end())
      it = seen.emplace(label, static_cast<char>('0' + seen.size())).first;
    key.push_back(it->second);
  }
  return key;
}

/// Exact collapsed posterior over label partitions for the reduced model:
/// all observations in one cell, radius (0,0). In that setting the sampler's
/// conditionals are the Gibbs kernel of
///   pi(B) ∝ gamma^|B| * prod_b Gamma(|b|+alpha)/Gamma(1+alpha) * DM(b)
/// with DM the symmetric Dirichlet-multinomial marginal of a block's words.
/// Enumerates every set partition (restricted growth strings), so instances
/// are capped at 8 observations over a vocabulary of at most 3 words.
inline std::map<std::string, double> exact_posterior(const std::vector<std::uint32_t>& words,
                                                     std::uint32_t vocab_size,
                                                     const Hyperparams& hyper) {
  hyper.validate();
  const std::size_t n = words.size();
  if (n == 0) throw ConfigError("exact_posterior: no observations");
  if (n > 8) throw ConfigError("exact_posterior: instance too large");
  if (vocab_size == 0 || vocab_size > 3)
    throw ConfigError("exact_posterior: vocabulary size out of range");
  for (std::uint32_t w : words)
    if (w >= vocab_size) throw ConfigError("exact_posterior: word out of range");

  const double log_gamma_rate = std::log(hyper.gamma);
  const double vb = static_cast<double>(vocab_size) * hyper.beta;

  const auto log_joint = [&](const std::vector<std::uint32_t>& rgs, std::uint32_t blocks) {
    double lp = static_cast<double>(blocks) * log_gamma_rate;
    for (std::uint32_t b = 0; b < blocks; ++b) {
      std::uint32_t size = 0;
      std::vector<std::uint32_t> counts(vocab_size, 0);
      for (std::size_t i = 0; i < n; ++i)
        if (rgs[i] == b) {
          ++size;
          ++counts[words[i]];
        }
      lp += std::lgamma(size + hyper.alpha) - std::lgamma(1.0 + hyper.alpha);
      lp += std::lgamma(vb) - std::lgamma(size + vb);
      for (std::uint32_t v = 0; v < vocab_size; ++v)
        lp += std::lgamma(counts[v] + hyper.beta) - std::lgamma(hyper.beta);
    }
    return lp;
  };

  // enumerate restricted growth strings: rgs[i] <= max(rgs[0..i-1]) + 1
  std::vector<std::string> keys;
  std::vector<double> logp;
  std::vector<std::uint32_t> rgs(n, 0);
  const auto visit = [&](const auto& self, std::size_t i, std::uint32_t prefix_max) -> void {
    if (i == n) {
      std::string key;
      for (std::uint32_t a : rgs) key.push_back(static_cast<char>('0' + a));
      keys.push_back(std::move(key));
      logp.push_back(log_joint(rgs, prefix_max + 1));
      return;
    }
    for (std::uint32_t a = 0; a <= prefix_max + 1; ++a) {
      rgs[i] = a;
      self(self, i + 1, std::max(prefix_max, a));
    }
  };
  rgs[0] = 0;
  visit(visit, 1, 0);

  const double max_lp = *std::max_element(logp.begin(), logp.end());
  double total = 0.0;
  for (double lp : logp) total += std::exp(lp - max_lp);
  std::map<std::string, double> posterior;
  for (std::size_t k = 0; k < keys.size(); ++k)
    posterior[keys[k]] = std::exp(logp[k] - max_lp) / total;
  return posterior;
}

}  // namespace stm
