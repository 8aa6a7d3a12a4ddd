#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tcrl/autodiff.hpp"
#include "tcrl/core.hpp"
#include "tcrl/params.hpp"

namespace tcrl {

/// Time-major batch of contiguous slices. For `steps()` transitions there are
/// steps()+1 observations (the last is the bootstrap / final next observation).
template <class S>
struct SegmentBatch {
  std::vector<Matrix<S>> obs;      // steps + 1 entries, each batch x obs_dim
  std::vector<Matrix<S>> actions;  // steps entries, each batch x act_dim
  std::vector<Matrix<S>> rewards;  // steps entries, each batch x 1

  std::size_t steps() const { return actions.size(); }
  std::size_t batch() const { return obs.empty() ? 0 : static_cast<std::size_t>(obs[0].rows()); }
};

struct Transition {
  std::vector<double> obs;
  std::vector<double> action;
  double reward = 0.0;
  std::vector<double> next_obs;
  bool done = false;
};

struct Episode {
  std::vector<std::vector<double>> obs;  // length() + 1 entries
  std::vector<std::vector<double>> actions;
  std::vector<double> rewards;
  std::vector<char> dones;
  bool closed = false;

  std::size_t length() const { return actions.size(); }
};

/// Episode-aware uniform replay. Segments never straddle an episode boundary;
/// the open (in-progress) episode is sampled like any other.
class ReplayBuffer {
 public:
  struct Slice {
    std::size_t episode;
    std::size_t start;
  };

  ReplayBuffer(std::size_t obs_dim, std::size_t act_dim, std::size_t capacity = 0)
      : obs_dim_(obs_dim), act_dim_(act_dim), capacity_(capacity) {}

  std::size_t obs_dim() const { return obs_dim_; }
  std::size_t act_dim() const { return act_dim_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return count_; }
  std::size_t num_episodes() const { return episodes_.size(); }
  const Episode& episode(std::size_t i) const { return episodes_.at(i); }

  void push(const Transition& t, bool episode_done) {
    if (t.obs.size() != obs_dim_ || t.next_obs.size() != obs_dim_ || t.action.size() != act_dim_) {
      throw ConfigError("replay push: transition dims do not match the buffer");
    }
    if (episodes_.empty() || episodes_.back().closed) {
      episodes_.emplace_back();
      episodes_.back().obs.push_back(t.obs);
    }
    Episode& e = episodes_.back();
    e.actions.push_back(t.action);
    e.rewards.push_back(t.reward);
    e.obs.push_back(t.next_obs);
    e.dones.push_back(t.done || episode_done ? 1 : 0);
    ++count_;
    if (episode_done) {
      e.closed = true;
      evict();
    }
  }

  /// Number of (episode, start) pairs that hold `length` contiguous transitions.
  std::size_t valid_starts(std::size_t length) const {
    std::size_t n = 0;
    for (const auto& e : episodes_) n += starts_in(e, length);
    return n;
  }

  std::vector<Slice> sample_starts(std::size_t batch, std::size_t length, Rng& rng) const {
    if (length < 1) throw ConfigError("sample_segments: length must be >= 1");
    std::vector<std::size_t> cumulative(episodes_.size());
    std::size_t total = 0;
    for (std::size_t i = 0; i < episodes_.size(); ++i) {
      total += starts_in(episodes_[i], length);
      cumulative[i] = total;
    }
    if (total == 0) {
      throw NotReadyError("replay: no episode holds a segment of length " + std::to_string(length));
    }
    std::vector<Slice> out;
    out.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t u = rng.index(total);
      const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
      const auto ep = static_cast<std::size_t>(it - cumulative.begin());
      const std::size_t before = ep == 0 ? 0 : cumulative[ep - 1];
      out.push_back({ep, u - before});
    }
    return out;
  }

  template <class S>
  SegmentBatch<S> gather(const std::vector<Slice>& slices, std::size_t length) const {
    SegmentBatch<S> b;
    const auto n = static_cast<Eigen::Index>(slices.size());
    b.obs.assign(length + 1, Matrix<S>(n, static_cast<Eigen::Index>(obs_dim_)));
    b.actions.assign(length, Matrix<S>(n, static_cast<Eigen::Index>(act_dim_)));
    b.rewards.assign(length, Matrix<S>(n, 1));
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& s = slices[static_cast<std::size_t>(i)];
      const Episode& e = episodes_.at(s.episode);
      if (s.start + length > e.length()) throw UsageError("replay gather: slice runs past its episode");
      for (std::size_t h = 0; h <= length; ++h) {
        const auto& o = e.obs[s.start + h];
        for (std::size_t k = 0; k < obs_dim_; ++k) b.obs[h](i, static_cast<Eigen::Index>(k)) = static_cast<S>(o[k]);
        if (h == length) break;
        const auto& a = e.actions[s.start + h];
        for (std::size_t k = 0; k < act_dim_; ++k) b.actions[h](i, static_cast<Eigen::Index>(k)) = static_cast<S>(a[k]);
        b.rewards[h](i, 0) = static_cast<S>(e.rewards[s.start + h]);
      }
    }
    return b;
  }

  template <class S>
  SegmentBatch<S> sample_segments(std::size_t batch, std::size_t length, Rng& rng) const {
    return gather<S>(sample_starts(batch, length, rng), length);
  }

  void save(Archive& ar, const std::string& prefix = "replay/") const {
    std::vector<double> obs, actions, rewards, dones;
    std::vector<std::int64_t> lengths;
    std::vector<std::int64_t> closed;
    for (const auto& e : episodes_) {
      lengths.push_back(static_cast<std::int64_t>(e.length()));
      closed.push_back(e.closed ? 1 : 0);
      for (const auto& o : e.obs) obs.insert(obs.end(), o.begin(), o.end());
      for (const auto& a : e.actions) actions.insert(actions.end(), a.begin(), a.end());
      rewards.insert(rewards.end(), e.rewards.begin(), e.rewards.end());
      for (char d : e.dones) dones.push_back(d ? 1.0 : 0.0);
    }
    ar.put_vector<double>(prefix + "obs", obs);
    ar.put_vector<double>(prefix + "actions", actions);
    ar.put_vector<double>(prefix + "rewards", rewards);
    ar.put_vector<double>(prefix + "dones", dones);
    ar.put_vector<std::int64_t>(prefix + "lengths", lengths);
    ar.put_vector<std::int64_t>(prefix + "closed", closed);
    ar.meta[prefix + "dims"] = {obs_dim_, act_dim_, capacity_};
  }

  static ReplayBuffer load(const Archive& ar, const std::string& prefix = "replay/") {
    const auto dims = ar.meta.at(prefix + "dims").get<std::vector<std::size_t>>();
    ReplayBuffer rb(dims.at(0), dims.at(1), dims.at(2));
    const auto obs = ar.get_vector<double>(prefix + "obs");
    const auto actions = ar.get_vector<double>(prefix + "actions");
    const auto rewards = ar.get_vector<double>(prefix + "rewards");
    const auto dones = ar.get_vector<double>(prefix + "dones");
    const auto lengths = ar.get_vector<std::int64_t>(prefix + "lengths");
    const auto closed = ar.get_vector<std::int64_t>(prefix + "closed");
    std::size_t io = 0, ia = 0, ir = 0;
    for (std::size_t k = 0; k < lengths.size(); ++k) {
      Episode e;
      const auto len = static_cast<std::size_t>(lengths[k]);
      for (std::size_t i = 0; i <= len; ++i, io += rb.obs_dim_) {
        e.obs.emplace_back(obs.begin() + static_cast<std::ptrdiff_t>(io),
                           obs.begin() + static_cast<std::ptrdiff_t>(io + rb.obs_dim_));
      }
      for (std::size_t i = 0; i < len; ++i, ia += rb.act_dim_, ++ir) {
        e.actions.emplace_back(actions.begin() + static_cast<std::ptrdiff_t>(ia),
                               actions.begin() + static_cast<std::ptrdiff_t>(ia + rb.act_dim_));
        e.rewards.push_back(rewards[ir]);
        e.dones.push_back(dones[ir] != 0.0 ? 1 : 0);
      }
      e.closed = closed[k] != 0;
      rb.count_ += len;
      rb.episodes_.push_back(std::move(e));
    }
    return rb;
  }

  /// Trajectory JSONL: one {episode, t, obs, action, reward, done} row per
  /// transition and a closing {episode, t, obs} row carrying the final observation.
  void dump_jsonl(std::ostream& os) const {
    for (std::size_t k = 0; k < episodes_.size(); ++k) {
      const Episode& e = episodes_[k];
      for (std::size_t t = 0; t < e.length(); ++t) {
        nlohmann::json row;
        row["episode"] = k;
        row["t"] = t;
        row["obs"] = e.obs[t];
        row["action"] = e.actions[t];
        row["reward"] = e.rewards[t];
        row["done"] = e.dones[t] != 0;
        os << row.dump() << '\n';
      }
      nlohmann::json last;
      last["episode"] = k;
      last["t"] = e.length();
      last["obs"] = e.obs.back();
      last["closed"] = e.closed;
      os << last.dump() << '\n';
    }
  }

  static ReplayBuffer load_jsonl(std::istream& is, std::size_t obs_dim, std::size_t act_dim) {
    ReplayBuffer rb(obs_dim, act_dim);
    std::string line;
    std::vector<nlohmann::json> rows;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      rows.push_back(nlohmann::json::parse(line));
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& r = rows[i];
      if (!r.contains("action")) continue;
      if (i + 1 >= rows.size()) throw ConfigError("replay jsonl: missing final observation row");
      Transition t;
      t.obs = r.at("obs").get<std::vector<double>>();
      t.action = r.at("action").get<std::vector<double>>();
      t.reward = r.at("reward").get<double>();
      t.next_obs = rows[i + 1].at("obs").get<std::vector<double>>();
      t.done = r.value("done", false);
      const bool closes = !rows[i + 1].contains("action") && rows[i + 1].value("closed", true);
      rb.push(t, closes);
    }
    return rb;
  }

 private:
  static std::size_t starts_in(const Episode& e, std::size_t length) {
    return e.length() >= length ? e.length() - length + 1 : 0;
  }

  void evict() {
    if (capacity_ == 0) return;
    while (count_ > capacity_ && episodes_.size() > 1 && episodes_.front().closed) {
      count_ -= episodes_.front().length();
      episodes_.erase(episodes_.begin());
    }
  }

  std::size_t obs_dim_;
  std::size_t act_dim_;
  std::size_t capacity_;
  std::size_t count_ = 0;
  std::vector<Episode> episodes_;
};

}  // namespace tcrl
