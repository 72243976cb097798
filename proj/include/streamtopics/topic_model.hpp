#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "streamtopics/cell_grid.hpp"
#include "streamtopics/errors.hpp"
#include "streamtopics/rng.hpp"
#include "streamtopics/word_stream.hpp"

namespace stm {

/// Dirichlet/CRP prior parameters. alpha smooths cell topic distributions,
/// beta smooths topic word distributions, gamma is the new-topic rate.
struct Hyperparams {
  double alpha = 0.1;
  double beta = 10.0;
  double gamma = 1e-5;

  void validate() const {
    if (!(alpha > 0)) throw ConfigError("alpha must be positive");
    if (!(beta > 0)) throw ConfigError("beta must be positive");
    if (!(gamma > 0)) throw ConfigError("gamma must be positive");
  }
};

struct ModelConfig {
  std::uint32_t cell_size = 128;
  NeighborhoodSpec neighborhood{};
  Hyperparams prior{};
  std::uint32_t iters_per_step = 10;
  std::uint64_t seed = 0;
};

// Streaming topic model over spatiotemporal word observations.
//
// Sufficient statistics are pure counts: word-by-topic, per-topic totals,
// and per-cell topic counts. Labels are resampled one observation at a
// time from
//
//   P(z_i = k) ~ (n_{w_i,k} + beta) / (n_k + V beta) * (n_{k,nbr(i)} + alpha)
//   P(z_i = new) ~ gamma / V
//
// with observation i's own counts removed first (decrement before
// sampling). n_{k,nbr(i)} pools the cell topic counts over the
// spatiotemporal neighborhood of i's cell. Topics whose total count hits
// zero are retired immediately and their labels recycled, lowest first.
//
// Refinement follows the Uniform+Now schedule: each round resamples every
// observation in the current frame's cells plus all cells of one uniformly
// chosen past frame.
//
// Single-writer. Fixed seed means bit-identical assignments and
// checkpoints; rng stream 0 is claimed by the sampler.
class TopicModel {
 public:
  static constexpr std::int32_t kNewTopic = -1;

  TopicModel(VocabularyLayout layout, ModelConfig config)
      : layout_(std::move(layout)), cfg_(config), rng_(config.seed, 0) {
    cfg_.prior.validate();
    if (cfg_.cell_size == 0) throw ConfigError("cell_size must be positive");
    if (layout_.total_size() == 0) throw ConfigError("empty vocabulary");
    word_topic_.resize(layout_.total_size());
  }

  // --- streaming ingestion ---

  /// Ingests one observation and assigns it a label by a single draw from
  /// its conditional. Frames must arrive in non-decreasing order.
  std::uint32_t add_observation(const WordObservation& obs) {
    if (obs.word >= layout_.total_size())
      throw ModelError("observation word " + std::to_string(obs.word) + " >= V=" +
                       std::to_string(layout_.total_size()));
    if (any_obs_ && obs.t < cursor_)
      throw ModelError("out-of-order frame " + std::to_string(obs.t) + " after frame " +
                       std::to_string(cursor_));
    const std::uint32_t oid = static_cast<std::uint32_t>(obs_.size());
    obs_.push_back(obs);
    labels_.push_back(kNewTopic);
    const std::uint32_t slot = slot_for(cell_of(obs.x, obs.y, obs.t, cfg_.cell_size));
    sum_neighborhood(cells_[slot].idx, scratch_nbr_);
    const double total = fill_weights(obs.word, scratch_nbr_, scratch_w_);
    const std::int32_t z = draw_label(total, scratch_w_);
    const std::uint32_t label = inc_counts(oid, slot, z);
    cells_[slot].members.push_back(oid);
    cursor_ = std::max(cursor_, obs.t);
    any_obs_ = true;
    return label;
  }

  /// One Uniform+Now refinement pass; uses the configured round count.
  void refine_step(std::uint32_t now_frame) { refine_step(now_frame, cfg_.iters_per_step); }

  void refine_step(std::uint32_t now_frame, std::uint32_t rounds) {
    for (std::uint32_t r = 0; r < rounds; ++r) {
      const auto past_end = std::lower_bound(frames_.begin(), frames_.end(), now_frame);
      const std::size_t n_past = static_cast<std::size_t>(past_end - frames_.begin());
      bool has_past = n_past > 0;
      std::uint32_t past = 0;
      if (has_past) {
        past = frames_[static_cast<std::size_t>(rng_.below(n_past))];
        refine_log_.push_back(past);
      }
      resample_frame(now_frame);
      if (has_past) resample_frame(past);
    }
  }

  /// Resamples a single observation's label; returns the new label.
  std::uint32_t resample(std::size_t obs_index) {
    const auto& o = obs_.at(obs_index);
    const std::uint32_t slot =
        cell_lookup_.at(cell_of(o.x, o.y, o.t, cfg_.cell_size));
    dec_counts(static_cast<std::uint32_t>(obs_index), slot);
    sum_neighborhood(cells_[slot].idx, scratch_nbr_);
    const double total = fill_weights(o.word, scratch_nbr_, scratch_w_);
    const std::int32_t z = draw_label(total, scratch_w_);
    ++resamples_;
    return inc_counts(static_cast<std::uint32_t>(obs_index), slot, z);
  }

  // --- conditional queries ---
  // These are pure: observation i's own counts are subtracted virtually,
  // matching the decrement-before-sample discipline of the sampler.

  /// (n_vk + beta) / (n_k + V beta) on the current counts. New or empty
  /// topics evaluate to 1/V.
  double word_likelihood(std::uint32_t word, std::int32_t topic) const {
    if (word >= layout_.total_size()) throw ModelError("word out of range");
    const double beta = cfg_.prior.beta;
    const double vbeta = static_cast<double>(layout_.total_size()) * beta;
    std::uint32_t nvk = 0, nk = 0;
    if (topic >= 0 && static_cast<std::uint32_t>(topic) < capacity_) {
      nvk = word_topic_[word][static_cast<std::uint32_t>(topic)];
      nk = topic_total_[static_cast<std::uint32_t>(topic)];
    }
    return (nvk + beta) / (nk + vbeta);
  }

  /// Neighborhood prior mass for one topic: n_{k,nbr(i)} + alpha if the
  /// topic is active once observation i is excluded, gamma for kNewTopic,
  /// 0 otherwise.
  double neighborhood_weight(std::size_t obs_index, std::int32_t topic) const {
    if (topic == kNewTopic) return cfg_.prior.gamma;
    if (topic < 0 || static_cast<std::uint32_t>(topic) >= capacity_) return 0.0;
    const std::uint32_t k = static_cast<std::uint32_t>(topic);
    const std::int32_t self = labels_.at(obs_index);
    std::uint32_t nk = topic_total_[k];
    if (self == topic) --nk;
    if (nk == 0) return 0.0;
    std::vector<std::uint32_t> nbr;
    const auto& o = obs_[obs_index];
    sum_neighborhood(cell_of(o.x, o.y, o.t, cfg_.cell_size), nbr);
    std::uint32_t count = nbr[k];
    if (self == topic) --count;
    return count + cfg_.prior.alpha;
  }

  struct Conditional {
    std::vector<std::int32_t> labels;  // active labels ascending, then kNewTopic
    std::vector<double> probs;
  };

  /// Full conditional over active topics plus a new one, normalized.
  /// Bitwise invariant under topic relabeling (order-independent sum).
  Conditional conditional_distribution(std::size_t obs_index) const {
    const auto& o = obs_.at(obs_index);
    const std::int32_t self = labels_[obs_index];
    std::vector<std::uint32_t> nbr;
    sum_neighborhood(cell_of(o.x, o.y, o.t, cfg_.cell_size), nbr);

    const double beta = cfg_.prior.beta;
    const double vbeta = static_cast<double>(layout_.total_size()) * beta;
    const double alpha = cfg_.prior.alpha;

    Conditional cond;
    for (std::uint32_t k = 0; k < capacity_; ++k) {
      std::uint32_t nk = topic_total_[k];
      std::uint32_t nvk = word_topic_[o.word][k];
      std::uint32_t nn = nbr[k];
      if (self >= 0 && static_cast<std::uint32_t>(self) == k) {
        --nk;
        --nn;
        --nvk;
      }
      if (nk == 0) continue;
      cond.labels.push_back(static_cast<std::int32_t>(k));
      cond.probs.push_back((nvk + beta) / (nk + vbeta) * (nn + alpha));
    }
    cond.labels.push_back(kNewTopic);
    cond.probs.push_back(cfg_.prior.gamma / static_cast<double>(layout_.total_size()));

    std::vector<double> terms = cond.probs;
    std::sort(terms.begin(), terms.end());
    double total = 0.0;
    for (double w : terms) total += w;
    for (double& p : cond.probs) p /= total;
    return cond;
  }

  // --- inspection ---

  const VocabularyLayout& vocabulary() const { return layout_; }
  const ModelConfig& config() const { return cfg_; }
  const std::vector<WordObservation>& observations() const { return obs_; }
  const std::vector<std::int32_t>& assignments() const { return labels_; }
  std::uint64_t total_count() const { return total_; }
  std::uint32_t topic_capacity() const { return capacity_; }
  std::uint32_t frame_cursor() const { return cursor_; }
  bool empty() const { return !any_obs_; }
  const std::vector<std::uint32_t>& frames() const { return frames_; }
  std::uint64_t resample_count() const { return resamples_; }

  std::uint32_t topic_count(std::uint32_t k) const {
    return k < capacity_ ? topic_total_[k] : 0;
  }
  std::uint32_t word_topic_count(std::uint32_t v, std::uint32_t k) const {
    return (v < word_topic_.size() && k < capacity_) ? word_topic_[v][k] : 0;
  }
  std::uint32_t cell_topic_count(const CellIndex& c, std::uint32_t k) const {
    auto it = cell_lookup_.find(c);
    if (it == cell_lookup_.end() || k >= capacity_) return 0;
    return cells_[it->second].topic_counts[k];
  }

  std::vector<std::uint32_t> active_topics() const {
    std::vector<std::uint32_t> out;
    for (std::uint32_t k = 0; k < capacity_; ++k)
      if (topic_total_[k] > 0) out.push_back(k);
    return out;
  }
  std::uint32_t active_topic_count() const {
    std::uint32_t n = 0;
    for (std::uint32_t k = 0; k < capacity_; ++k)
      if (topic_total_[k] > 0) ++n;
    return n;
  }
  const std::set<std::uint32_t>& free_labels() const { return free_labels_; }

  /// Past frames chosen by the Uniform half of refine_step, in draw order.
  const std::vector<std::uint32_t>& refine_frame_log() const { return refine_log_; }
  void clear_refine_frame_log() { refine_log_.clear(); }

  // --- diagnostics ---

  /// Recomputes every table from the raw assignments and compares with the
  /// incrementally maintained state. Returns false and a description of
  /// the first mismatch if the tables are inconsistent.
  bool audit_counts(std::string* message = nullptr) const {
    auto fail = [&](const std::string& m) {
      if (message) *message = m;
      return false;
    };
    const std::uint32_t v_size = layout_.total_size();
    std::vector<std::vector<std::uint32_t>> wt(v_size, std::vector<std::uint32_t>(capacity_, 0));
    std::vector<std::uint32_t> totals(capacity_, 0);
    std::unordered_map<CellIndex, std::vector<std::uint32_t>, CellIndexHash> cell_counts;
    std::uint64_t n = 0;
    for (std::size_t i = 0; i < obs_.size(); ++i) {
      const std::int32_t z = labels_[i];
      if (z == kNewTopic) return fail("observation " + std::to_string(i) + " unassigned");
      if (z < 0 || static_cast<std::uint32_t>(z) >= capacity_)
        return fail("observation " + std::to_string(i) + " has label outside capacity");
      const auto k = static_cast<std::uint32_t>(z);
      ++wt[obs_[i].word][k];
      ++totals[k];
      ++n;
      auto c = cell_of(obs_[i].x, obs_[i].y, obs_[i].t, cfg_.cell_size);
      auto& vec = cell_counts[c];
      if (vec.empty()) vec.resize(capacity_, 0);
      ++vec[k];
    }
    for (std::uint32_t k = 0; k < capacity_; ++k) {
      if (totals[k] != topic_total_[k])
        return fail("topic total mismatch for label " + std::to_string(k));
      std::uint64_t col = 0;
      for (std::uint32_t v = 0; v < v_size; ++v) {
        if (wt[v][k] != word_topic_[v][k])
          return fail("word-topic count mismatch at v=" + std::to_string(v) +
                      " k=" + std::to_string(k));
        col += wt[v][k];
      }
      if (col != totals[k])
        return fail("word-topic column sum != topic total for label " + std::to_string(k));
    }
    if (n != total_) return fail("total observation count mismatch");
    std::uint64_t sum_k = 0;
    for (std::uint32_t k = 0; k < capacity_; ++k) sum_k += topic_total_[k];
    if (sum_k != total_) return fail("sum of topic totals != N");
    if (cell_counts.size() != cells_.size()) return fail("cell set mismatch");
    for (const auto& cell : cells_) {
      auto it = cell_counts.find(cell.idx);
      if (it == cell_counts.end()) return fail("stale cell in table");
      std::uint32_t cell_n = 0;
      for (std::uint32_t k = 0; k < capacity_; ++k) {
        if (it->second[k] != cell.topic_counts[k]) return fail("cell topic count mismatch");
        cell_n += it->second[k];
      }
      if (cell_n != cell.total || cell.total != cell.members.size())
        return fail("cell total mismatch");
    }
    for (std::uint32_t k = 0; k < capacity_; ++k) {
      const bool is_free = free_labels_.count(k) > 0;
      if (is_free != (topic_total_[k] == 0))
        return fail("free-label set inconsistent at label " + std::to_string(k));
    }
    return true;
  }

  /// Relabels topics by a bijection over [0, capacity). Diagnostic helper:
  /// conditional probabilities are invariant under this map.
  void relabel_topics(const std::vector<std::uint32_t>& perm) {
    if (perm.size() != capacity_) throw ConfigError("permutation size != topic capacity");
    std::vector<bool> seen(capacity_, false);
    for (auto p : perm) {
      if (p >= capacity_ || seen[p]) throw ConfigError("not a permutation");
      seen[p] = true;
    }
    auto apply_u32 = [&](std::vector<std::uint32_t>& v) {
      std::vector<std::uint32_t> out(v.size(), 0);
      for (std::uint32_t k = 0; k < capacity_; ++k) out[perm[k]] = v[k];
      for (std::size_t k = capacity_; k < v.size(); ++k) out[k] = v[k];
      v = std::move(out);
    };
    apply_u32(topic_total_);
    for (auto& row : word_topic_) apply_u32(row);
    for (auto& cell : cells_) apply_u32(cell.topic_counts);
    for (auto& z : labels_)
      if (z >= 0) z = static_cast<std::int32_t>(perm[static_cast<std::uint32_t>(z)]);
    std::set<std::uint32_t> free2;
    for (auto k : free_labels_) free2.insert(perm[k]);
    free_labels_ = std::move(free2);
  }

  // --- persistence ---

  void save_checkpoint(std::ostream& out) const {
    std::string payload;
    payload.reserve(64 + obs_.size() * 20);
    append_bytes(payload, "STMCKPT1", 8);
    append_u32(payload, 1);  // version
    append_u32(payload, layout_.total_size());
    append_u32(payload, static_cast<std::uint32_t>(layout_.channel_count()));
    for (std::size_t j = 0; j < layout_.channel_count(); ++j) {
      const auto& ch = layout_.channel(j);
      append_u32(payload, static_cast<std::uint32_t>(ch.name.size()));
      payload.append(ch.name);
      append_u32(payload, ch.size);
    }
    append_f64(payload, cfg_.prior.alpha);
    append_f64(payload, cfg_.prior.beta);
    append_f64(payload, cfg_.prior.gamma);
    append_u32(payload, cfg_.cell_size);
    append_u32(payload, cfg_.neighborhood.spatial_radius);
    append_u32(payload, cfg_.neighborhood.temporal_radius);
    append_u32(payload, cfg_.iters_per_step);
    append_u64(payload, cfg_.seed);
    std::ostringstream rng_text;
    rng_.save_state(rng_text);
    const std::string rng_state = rng_text.str();
    append_u32(payload, static_cast<std::uint32_t>(rng_state.size()));
    payload.append(rng_state);
    append_u32(payload, cursor_);
    payload.push_back(any_obs_ ? 1 : 0);
    append_u32(payload, capacity_);
    append_u64(payload, obs_.size());
    for (std::size_t i = 0; i < obs_.size(); ++i) {
      append_u32(payload, obs_[i].t);
      append_u32(payload, obs_[i].x);
      append_u32(payload, obs_[i].y);
      append_u32(payload, obs_[i].word);
      append_u32(payload, static_cast<std::uint32_t>(labels_[i]));
    }
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    std::uint64_t digest = fnv1a(payload);
    std::string tail;
    append_u64(tail, digest);
    out.write(tail.data(), static_cast<std::streamsize>(tail.size()));
    if (!out) throw ParseError("checkpoint write failed");
  }

  static TopicModel load_checkpoint(std::istream& in) {
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (blob.size() < 16) throw ParseError("checkpoint truncated");
    const std::string payload = blob.substr(0, blob.size() - 8);
    Reader tail(blob.substr(blob.size() - 8));
    if (tail.u64() != fnv1a(payload)) throw ParseError("checkpoint checksum mismatch");

    Reader r(payload);
    if (r.bytes(8) != "STMCKPT1") throw ParseError("not a checkpoint file");
    if (r.u32() != 1) throw ParseError("unsupported checkpoint version");
    const std::uint32_t v_total = r.u32();
    const std::uint32_t n_channels = r.u32();
    std::vector<VocabChannel> channels;
    for (std::uint32_t j = 0; j < n_channels; ++j) {
      const std::uint32_t len = r.u32();
      std::string name = r.bytes(len);
      channels.push_back({std::move(name), r.u32()});
    }
    VocabularyLayout layout(std::move(channels));
    if (layout.total_size() != v_total) throw ParseError("checkpoint vocabulary inconsistent");

    ModelConfig cfg;
    cfg.prior.alpha = r.f64();
    cfg.prior.beta = r.f64();
    cfg.prior.gamma = r.f64();
    cfg.cell_size = r.u32();
    cfg.neighborhood.spatial_radius = r.u32();
    cfg.neighborhood.temporal_radius = r.u32();
    cfg.iters_per_step = r.u32();
    cfg.seed = r.u64();

    TopicModel model(layout, cfg);
    const std::uint32_t rng_len = r.u32();
    std::istringstream rng_text(r.bytes(rng_len));
    model.rng_.load_state(rng_text);
    if (!rng_text) throw ParseError("checkpoint rng state unreadable");
    const std::uint32_t cursor = r.u32();
    const bool any = r.bytes(1)[0] != 0;
    const std::uint32_t capacity = r.u32();
    const std::uint64_t n_obs = r.u64();

    model.ensure_storage(capacity);
    model.capacity_ = capacity;
    for (std::uint64_t i = 0; i < n_obs; ++i) {
      WordObservation obs;
      obs.t = r.u32();
      obs.x = r.u32();
      obs.y = r.u32();
      obs.word = r.u32();
      const std::uint32_t label = r.u32();
      if (obs.word >= layout.total_size()) throw ParseError("checkpoint word out of range");
      if (label >= capacity) throw ParseError("checkpoint label out of range");
      if (model.any_obs_ && obs.t < model.cursor_)
        throw ParseError("checkpoint observations out of order");
      model.obs_.push_back(obs);
      model.labels_.push_back(static_cast<std::int32_t>(label));
      const std::uint32_t oid = static_cast<std::uint32_t>(model.obs_.size() - 1);
      const std::uint32_t slot =
          model.slot_for(cell_of(obs.x, obs.y, obs.t, cfg.cell_size));
      auto& cell = model.cells_[slot];
      ++model.word_topic_[obs.word][label];
      ++model.topic_total_[label];
      ++cell.topic_counts[label];
      ++cell.total;
      cell.members.push_back(oid);
      ++model.total_;
      model.cursor_ = std::max(model.cursor_, obs.t);
      model.any_obs_ = true;
    }
    if (!r.done()) throw ParseError("checkpoint has trailing bytes");
    if (model.any_obs_ != any || (any && model.cursor_ != cursor))
      throw ParseError("checkpoint frame cursor inconsistent");
    model.cursor_ = cursor;
    model.any_obs_ = any;
    for (std::uint32_t k = 0; k < capacity; ++k)
      if (model.topic_total_[k] == 0) model.free_labels_.insert(k);
    return model;
  }

 private:
  struct CellSlot {
    CellIndex idx;
    std::vector<std::uint32_t> topic_counts;  // sized storage_
    std::uint32_t total = 0;
    std::vector<std::uint32_t> members;  // observation ids, insertion order
  };

  // --- low-level count maintenance ---

  std::uint32_t slot_for(const CellIndex& c) {
    auto it = cell_lookup_.find(c);
    if (it != cell_lookup_.end()) return it->second;
    const std::uint32_t slot = static_cast<std::uint32_t>(cells_.size());
    cell_lookup_.emplace(c, slot);
    cells_.push_back(CellSlot{c, std::vector<std::uint32_t>(storage_, 0), 0, {}});
    frame_cells_[c.t].push_back(slot);
    if (frames_.empty() || frames_.back() < c.t) frames_.push_back(c.t);
    return slot;
  }

  void ensure_storage(std::uint32_t needed) {
    if (needed <= storage_) return;
    std::uint32_t grown = storage_ == 0 ? 16 : storage_;
    while (grown < needed) grown *= 2;
    storage_ = grown;
    topic_total_.resize(storage_, 0);
    for (auto& row : word_topic_) row.resize(storage_, 0);
    for (auto& cell : cells_) cell.topic_counts.resize(storage_, 0);
    scratch_nbr_.resize(storage_, 0);
    scratch_w_.resize(storage_, 0.0);
  }

  std::uint32_t allocate_label() {
    if (!free_labels_.empty()) {
      const std::uint32_t k = *free_labels_.begin();
      free_labels_.erase(free_labels_.begin());
      return k;
    }
    ensure_storage(capacity_ + 1);
    return capacity_++;
  }

  void dec_counts(std::uint32_t oid, std::uint32_t slot) {
    const std::int32_t z = labels_[oid];
    const auto k = static_cast<std::uint32_t>(z);
    const std::uint32_t v = obs_[oid].word;
    --word_topic_[v][k];
    --topic_total_[k];
    auto& cell = cells_[slot];
    --cell.topic_counts[k];
    --cell.total;
    --total_;
    labels_[oid] = kNewTopic;
    if (topic_total_[k] == 0) free_labels_.insert(k);  // retire
  }

  std::uint32_t inc_counts(std::uint32_t oid, std::uint32_t slot, std::int32_t desired) {
    const std::uint32_t k =
        desired == kNewTopic ? allocate_label() : static_cast<std::uint32_t>(desired);
    if (desired != kNewTopic && topic_total_[k] == 0) free_labels_.erase(k);
    const std::uint32_t v = obs_[oid].word;
    ++word_topic_[v][k];
    ++topic_total_[k];
    auto& cell = cells_[slot];
    ++cell.topic_counts[k];
    ++cell.total;
    ++total_;
    labels_[oid] = static_cast<std::int32_t>(k);
    return k;
  }

  // Sum of cell topic counts over the neighborhood of c. Missing cells
  // contribute nothing; future frames simply do not exist yet in
  // streaming operation.
  void sum_neighborhood(const CellIndex& c, std::vector<std::uint32_t>& out) const {
    out.assign(storage_, 0);
    const std::uint64_t rs = cfg_.neighborhood.spatial_radius;
    const std::uint64_t rt = cfg_.neighborhood.temporal_radius;
    const std::uint64_t x0 = c.cx > rs ? c.cx - rs : 0;
    const std::uint64_t y0 = c.cy > rs ? c.cy - rs : 0;
    const std::uint64_t t0 = c.t > rt ? c.t - rt : 0;
    const std::uint64_t x1 = std::min<std::uint64_t>(UINT32_MAX, c.cx + rs);
    const std::uint64_t y1 = std::min<std::uint64_t>(UINT32_MAX, c.cy + rs);
    const std::uint64_t t1 = std::min<std::uint64_t>(UINT32_MAX, c.t + rt);
    for (std::uint64_t t = t0; t <= t1; ++t) {
      for (std::uint64_t cy = y0; cy <= y1; ++cy) {
        for (std::uint64_t cx = x0; cx <= x1; ++cx) {
          auto it = cell_lookup_.find(CellIndex{static_cast<std::uint32_t>(cx),
                                                static_cast<std::uint32_t>(cy),
                                                static_cast<std::uint32_t>(t)});
          if (it == cell_lookup_.end()) continue;
          const auto& counts = cells_[it->second].topic_counts;
          for (std::uint32_t k = 0; k < capacity_; ++k) out[k] += counts[k];
        }
      }
    }
  }

  double fill_weights(std::uint32_t word, const std::vector<std::uint32_t>& nbr,
                      std::vector<double>& w) const {
    const double beta = cfg_.prior.beta;
    const double vbeta = static_cast<double>(layout_.total_size()) * beta;
    const double alpha = cfg_.prior.alpha;
    if (w.size() < storage_) w.resize(storage_, 0.0);
    double total = 0.0;
    const auto& col = word_topic_[word];
    for (std::uint32_t k = 0; k < capacity_; ++k) {
      if (topic_total_[k] == 0) {
        w[k] = 0.0;
        continue;
      }
      const double mass = (col[k] + beta) / (topic_total_[k] + vbeta) * (nbr[k] + alpha);
      w[k] = mass;
      total += mass;
    }
    return total;
  }

  std::int32_t draw_label(double total, const std::vector<double>& w) {
    const double w_new = cfg_.prior.gamma / static_cast<double>(layout_.total_size());
    const double u = rng_.uniform() * (total + w_new);
    double acc = 0.0;
    for (std::uint32_t k = 0; k < capacity_; ++k) {
      if (w[k] <= 0.0) continue;
      acc += w[k];
      if (u < acc) return static_cast<std::int32_t>(k);
    }
    return kNewTopic;
  }

  void resample_frame(std::uint32_t t) {
    auto it = frame_cells_.find(t);
    if (it == frame_cells_.end()) return;
    for (const std::uint32_t slot : it->second) process_cell(slot);
  }

  void process_cell(std::uint32_t slot) {
    sum_neighborhood(cells_[slot].idx, scratch_nbr_);
    // The running sum stays exact: only this cell's observations move, and
    // this cell is always inside its own neighborhood.
    const auto& members = cells_[slot].members;
    for (std::size_t m = 0; m < members.size(); ++m) {
      const std::uint32_t oid = members[m];
      const std::uint32_t zold = static_cast<std::uint32_t>(labels_[oid]);
      dec_counts(oid, slot);
      --scratch_nbr_[zold];
      const double total = fill_weights(obs_[oid].word, scratch_nbr_, scratch_w_);
      const std::int32_t z = draw_label(total, scratch_w_);
      const std::uint32_t znew = inc_counts(oid, slot, z);
      ++scratch_nbr_[znew];
      ++resamples_;
    }
  }

  // --- binary checkpoint helpers (little-endian, fixed width) ---

  static void append_bytes(std::string& out, const char* data, std::size_t n) {
    out.append(data, n);
  }
  static void append_u32(std::string& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.append(b, 4);
  }
  static void append_u64(std::string& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.append(b, 8);
  }
  static void append_f64(std::string& out, double v) {
    append_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  static std::uint64_t fnv1a(const std::string& data) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : data) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    return h;
  }

  class Reader {
   public:
    explicit Reader(std::string data) : data_(std::move(data)) {}
    std::string bytes(std::size_t n) {
      if (pos_ + n > data_.size()) throw ParseError("checkpoint truncated");
      std::string out = data_.substr(pos_, n);
      pos_ += n;
      return out;
    }
    std::uint32_t u32() {
      std::uint32_t v = 0;
      const std::string b = bytes(4);
      for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[i]);
      return v;
    }
    std::uint64_t u64() {
      std::uint64_t v = 0;
      const std::string b = bytes(8);
      for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[i]);
      return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    bool done() const { return pos_ == data_.size(); }

   private:
    std::string data_;
    std::size_t pos_ = 0;
  };

  VocabularyLayout layout_;
  ModelConfig cfg_;

  std::vector<WordObservation> obs_;
  std::vector<std::int32_t> labels_;

  std::vector<std::vector<std::uint32_t>> word_topic_;  // [word][label]
  std::vector<std::uint32_t> topic_total_;              // [label]
  std::uint64_t total_ = 0;
  std::uint32_t capacity_ = 0;  // label slots ever allocated
  std::uint32_t storage_ = 0;   // physical columns, >= capacity_
  std::set<std::uint32_t> free_labels_;

  std::unordered_map<CellIndex, std::uint32_t, CellIndexHash> cell_lookup_;
  std::vector<CellSlot> cells_;  // creation order
  std::unordered_map<std::uint32_t, std::vector<std::uint32_t>> frame_cells_;
  std::vector<std::uint32_t> frames_;  // ascending

  Rng rng_;
  std::uint32_t cursor_ = 0;
  bool any_obs_ = false;
  std::uint64_t resamples_ = 0;
  std::vector<std::uint32_t> refine_log_;

  std::vector<std::uint32_t> scratch_nbr_;
  std::vector<double> scratch_w_;
};

}  // namespace stm
