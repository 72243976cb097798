#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "streamtopics/errors.hpp"
#include "streamtopics/textio.hpp"
#include "streamtopics/topic_model.hpp"

namespace stm {

/// Per-timestep topic distributions over the final active label set.
/// Only timesteps that carry at least one observation get a row; `frames`
/// lists them in ascending order. Retired labels never appear.
struct TopicTimeline {
  std::vector<std::uint32_t> frames;
  std::vector<std::uint32_t> labels;           // column -> topic label, ascending
  std::vector<std::vector<double>> dist;       // rows parallel to frames

  std::size_t rows() const { return frames.size(); }
  std::size_t columns() const { return labels.size(); }
};

struct Peak {
  std::uint32_t t = 0;
  double score = 0.0;
};

struct PerplexityReport {
  std::vector<double> marginal;
  std::vector<double> scores;
  std::vector<double> normalized_scores;
  std::vector<Peak> peaks;
};

inline TopicTimeline timeline_from_model(const TopicModel& model) {
  TopicTimeline timeline;
  timeline.frames = model.frames();
  timeline.labels = model.active_topics();
  std::vector<std::size_t> column(model.topic_capacity(), 0);
  for (std::size_t c = 0; c < timeline.labels.size(); ++c) column[timeline.labels[c]] = c;
  std::vector<std::size_t> row(timeline.frames.empty() ? 0 : timeline.frames.back() + 1, 0);
  for (std::size_t r = 0; r < timeline.frames.size(); ++r) row[timeline.frames[r]] = r;

  timeline.dist.assign(timeline.frames.size(), std::vector<double>(timeline.labels.size(), 0.0));
  std::vector<double> totals(timeline.frames.size(), 0.0);
  const auto& obs = model.observations();
  const auto& labels = model.assignments();
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const std::size_t r = row[obs[i].t];
    timeline.dist[r][column[static_cast<std::size_t>(labels[i])]] += 1.0;
    totals[r] += 1.0;
  }
  for (std::size_t r = 0; r < timeline.dist.size(); ++r)
    for (double& p : timeline.dist[r]) p /= totals[r];
  return timeline;
}

/// Dataset marginal: column means over the timeline's rows.
inline std::vector<double> marginal(const TopicTimeline& timeline) {
  if (timeline.rows() == 0) throw ModelError("marginal: empty timeline");
  std::vector<double> m(timeline.columns(), 0.0);
  for (const auto& row : timeline.dist)
    for (std::size_t k = 0; k < m.size(); ++k) m[k] += row[k];
  for (double& v : m) v /= static_cast<double>(timeline.rows());
  return m;
}

/// Perplexity S = exp(-sum_k row[k] log marginal[k]); zero row entries
/// contribute nothing. Terms are accumulated in sorted order so that any
/// consistent relabeling of topics reproduces the score bit for bit.
inline double perplexity(const std::vector<double>& row, const std::vector<double>& marg) {
  if (row.size() != marg.size()) throw ModelError("perplexity: row/marginal size mismatch");
  std::vector<std::pair<double, double>> terms;
  for (std::size_t k = 0; k < row.size(); ++k) {
    if (row[k] == 0.0) continue;
    if (!(marg[k] > 0.0))
      throw ModelError("perplexity: marginal has no mass where the row does");
    terms.emplace_back(row[k], marg[k]);
  }
  std::sort(terms.begin(), terms.end());
  double cross_entropy = 0.0;
  for (const auto& [p, q] : terms) cross_entropy -= p * std::log(q);
  return std::exp(cross_entropy);
}

/// Min-max scaling to [0,1]; a constant sequence maps to all zeros.
inline std::vector<double> normalize_scores(const std::vector<double>& scores) {
  if (scores.empty()) throw ModelError("normalize_scores: no scores");
  const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
  const double lo = *lo_it, hi = *hi_it;
  std::vector<double> out(scores.size(), 0.0);
  if (hi > lo)
    for (std::size_t i = 0; i < scores.size(); ++i) out[i] = (scores[i] - lo) / (hi - lo);
  return out;
}

/// Greedy non-maximum suppression: repeatedly take the highest remaining
/// score (earliest index on ties) whose index is more than min_separation
/// away from every already-selected peak.
inline std::vector<Peak> top_peaks(const std::vector<double>& scores, std::uint32_t max_peaks,
                                   std::uint32_t min_separation) {
  std::vector<std::uint32_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return scores[a] > scores[b]; });
  std::vector<Peak> peaks;
  for (std::uint32_t t : order) {
    if (peaks.size() >= max_peaks) break;
    bool suppressed = false;
    for (const Peak& p : peaks) {
      const std::uint32_t gap = t > p.t ? t - p.t : p.t - t;
      if (gap <= min_separation) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) peaks.push_back({t, scores[t]});
  }
  return peaks;
}

/// Kolmogorov-Smirnov statistic between two sequences read as distributions
/// over the shared index range: both are normalized to sum 1 and D is the
/// maximum absolute CDF gap.
inline double ks_statistic(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ConfigError("ks_statistic: sequences differ in length");
  if (a.empty()) throw ConfigError("ks_statistic: empty sequences");
  double total_a = 0.0, total_b = 0.0;
  for (double v : a) {
    if (!(v >= 0.0)) throw ConfigError("ks_statistic: negative entry");
    total_a += v;
  }
  for (double v : b) {
    if (!(v >= 0.0)) throw ConfigError("ks_statistic: negative entry");
    total_b += v;
  }
  if (!(total_a > 0.0) || !(total_b > 0.0))
    throw ConfigError("ks_statistic: sequence has zero total mass");
  double cdf_a = 0.0, cdf_b = 0.0, d = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    cdf_a += a[t] / total_a;
    cdf_b += b[t] / total_b;
    d = std::max(d, std::abs(cdf_a - cdf_b));
  }
  return d;
}

/// Scores every timeline row against the dataset marginal and extracts peaks.
/// Peak `t` values are row indices into the timeline (equal to the frame id
/// when no frame is empty).
inline PerplexityReport build_report(const TopicTimeline& timeline, std::uint32_t max_peaks,
                                     std::uint32_t min_separation) {
  PerplexityReport report;
  report.marginal = marginal(timeline);
  report.scores.reserve(timeline.rows());
  for (const auto& row : timeline.dist) report.scores.push_back(perplexity(row, report.marginal));
  report.normalized_scores = normalize_scores(report.scores);
  report.peaks = top_peaks(report.normalized_scores, max_peaks, min_separation);
  for (Peak& p : report.peaks) p.t = timeline.frames[p.t];
  return report;
}

inline void write_report_csv(std::ostream& out, const TopicTimeline& timeline,
                             const PerplexityReport& report) {
  out << "t,score,normalized_score";
  for (std::size_t k = 0; k < timeline.columns(); ++k) out << ",p_topic_" << k;
  out << '\n';
  for (std::size_t r = 0; r < timeline.rows(); ++r) {
    out << timeline.frames[r] << ',' << detail::format_g17(report.scores[r]) << ','
        << detail::format_g17(report.normalized_scores[r]);
    for (double p : timeline.dist[r]) out << ',' << detail::format_g17(p);
    out << '\n';
  }
}

/// Report rows as parsed back from CSV.
struct ReportData {
  std::vector<std::uint32_t> frames;
  std::vector<double> scores;
  std::vector<double> normalized_scores;
  std::vector<std::vector<double>> topics;  // rows parallel to frames

  std::size_t topic_count() const { return topics.empty() ? 0 : topics.front().size(); }
};

inline ReportData parse_report_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("report line 1: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header;
  std::size_t begin = 0;
  while (true) {
    const auto comma = line.find(',', begin);
    header.push_back(line.substr(begin, comma == std::string::npos ? std::string::npos : comma - begin));
    if (comma == std::string::npos) break;
    begin = comma + 1;
  }
  if (header.size() < 3 || header[0] != "t" || header[1] != "score" ||
      header[2] != "normalized_score")
    throw ParseError("report line 1: unexpected header");
  for (std::size_t k = 3; k < header.size(); ++k)
    if (header[k] != "p_topic_" + std::to_string(k - 3))
      throw ParseError("report line 1: unexpected header");
  const std::size_t columns = header.size();

  ReportData data;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    begin = 0;
    while (true) {
      const auto comma = line.find(',', begin);
      fields.push_back(
          line.substr(begin, comma == std::string::npos ? std::string::npos : comma - begin));
      if (comma == std::string::npos) break;
      begin = comma + 1;
    }
    if (fields.size() != columns)
      throw ParseError("report line " + std::to_string(line_no) + ": expected " +
                       std::to_string(columns) + " fields");
    const auto number = [&](const std::string& field) {
      try {
        std::size_t used = 0;
        const double v = std::stod(field, &used);
        if (used != field.size()) throw std::invalid_argument("");
        return v;
      } catch (const std::exception&) {
        throw ParseError("report line " + std::to_string(line_no) + ": bad number '" + field + "'");
      }
    };
    const double t = number(fields[0]);
    if (t < 0 || t != std::floor(t) || t > 0xffffffffu)
      throw ParseError("report line " + std::to_string(line_no) + ": bad frame index");
    data.frames.push_back(static_cast<std::uint32_t>(t));
    data.scores.push_back(number(fields[1]));
    data.normalized_scores.push_back(number(fields[2]));
    std::vector<double> row;
    for (std::size_t k = 3; k < columns; ++k) row.push_back(number(fields[k]));
    data.topics.push_back(std::move(row));
  }
  if (data.frames.empty()) throw ParseError("report has no data rows");
  return data;
}

inline void write_peaks_json(std::ostream& out, const std::vector<Peak>& peaks) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < peaks.size(); ++i) {
    nlohmann::ordered_json p;
    p["t"] = peaks[i].t;
    p["score"] = peaks[i].score;
    p["rank"] = i + 1;
    j.push_back(p);
  }
  out << j.dump(2) << '\n';
}

struct PeakMatch {
  std::uint32_t t = 0;
  double score = 0.0;
  std::uint32_t rank = 0;
  bool hit = false;
  std::int32_t window = -1;  // 1-based rank of the containing window, -1 on miss
};

struct EvalResult {
  double ks = 0.0;
  std::size_t matched_topic = 0;
  std::vector<PeakMatch> peaks;
};

/// Compares a report against planted windows: picks the topic with the most
/// in-window timeline mass, computes D between that topic's timeline and the
/// per-frame event density, and marks each peak hit or miss by containment.
inline EvalResult evaluate_report(const ReportData& report, const std::vector<double>& density,
                                  const std::vector<std::pair<std::uint32_t, std::uint32_t>>& windows,
                                  std::uint32_t max_peaks, std::uint32_t min_separation) {
  if (report.frames.size() != density.size())
    throw ConfigError("evaluate_report: report and ground truth lengths differ");
  if (report.topic_count() == 0) throw ConfigError("evaluate_report: report has no topic columns");

  const auto in_window = [&](std::uint32_t t) -> std::int32_t {
    for (std::size_t w = 0; w < windows.size(); ++w)
      if (t >= windows[w].first && t < windows[w].second)
        return static_cast<std::int32_t>(w + 1);
    return -1;
  };

  EvalResult result;
  std::vector<double> mass(report.topic_count(), 0.0);
  for (std::size_t r = 0; r < report.frames.size(); ++r)
    if (in_window(report.frames[r]) > 0)
      for (std::size_t k = 0; k < mass.size(); ++k) mass[k] += report.topics[r][k];
  result.matched_topic = static_cast<std::size_t>(
      std::max_element(mass.begin(), mass.end()) - mass.begin());

  std::vector<double> topic_timeline(report.frames.size());
  for (std::size_t r = 0; r < report.frames.size(); ++r)
    topic_timeline[r] = report.topics[r][result.matched_topic];
  result.ks = ks_statistic(topic_timeline, density);

  const std::vector<Peak> peaks = top_peaks(report.normalized_scores, max_peaks, min_separation);
  for (std::size_t i = 0; i < peaks.size(); ++i) {
    PeakMatch m;
    m.t = report.frames[peaks[i].t];
    m.score = peaks[i].score;
    m.rank = static_cast<std::uint32_t>(i + 1);
    m.window = in_window(m.t);
    m.hit = m.window > 0;
    result.peaks.push_back(m);
  }
  return result;
}

inline void write_eval_json(std::ostream& out, const EvalResult& result) {
  nlohmann::ordered_json j;
  j["ks_statistic"] = result.ks;
  j["matched_topic"] = result.matched_topic;
  j["peaks"] = nlohmann::ordered_json::array();
  for (const auto& p : result.peaks) {
    nlohmann::ordered_json m;
    m["t"] = p.t;
    m["score"] = p.score;
    m["rank"] = p.rank;
    m["hit"] = p.hit;
    if (p.hit)
      m["window"] = p.window;
    else
      m["window"] = nullptr;
    j["peaks"].push_back(m);
  }
  out << j.dump(2) << '\n';
}

}  // namespace stm
