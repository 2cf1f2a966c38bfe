#pragma once

#include <deque>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "choreo/batch.hpp"
#include "choreo/rng.hpp"

namespace choreo {

// One episode. Index t holds the observation x_t, the action that produced it
// (zeros at t = 0) and the reward received on arrival.
struct Episode {
  std::vector<std::vector<double>> obs;
  std::vector<std::vector<double>> act;
  std::vector<double> rew;
  nlohmann::json meta = nlohmann::json::object();

  std::size_t size() const { return obs.size(); }
  bool operator==(const Episode&) const = default;
};

struct Window {
  std::size_t episode = 0;
  std::size_t start = 0;
};

// Episodic replay with FIFO eviction of whole episodes once the step capacity
// is exceeded. Sampled windows never cross an episode boundary.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity_steps = 1'000'000) : capacity_(capacity_steps) {}

  // Appends a step; `first` starts a new episode.
  void add(std::vector<double> obs, std::vector<double> prev_action, double reward, bool first);
  void add_episode(Episode episode);

  std::size_t total_steps() const { return total_steps_; }
  std::size_t num_episodes() const { return episodes_.size(); }
  std::size_t capacity() const { return capacity_; }
  const std::deque<Episode>& episodes() const { return episodes_; }
  void clear();

  // Number of distinct T-step windows available.
  std::size_t window_count(std::size_t length) const;
  // B uniformly chosen windows (uniform over all valid windows). Throws NotReady
  // when no episode has at least `length` steps.
  std::vector<Window> sample_windows(std::size_t batch, std::size_t length, Rng& rng) const;
  SequenceBatch gather(const std::vector<Window>& windows, std::size_t length) const;
  SequenceBatch sample_batch(std::size_t batch, std::size_t length, Rng& rng) const;

  bool operator==(const ReplayBuffer& other) const { return episodes_ == other.episodes_; }

 private:
  void evict();

  std::size_t capacity_;
  std::size_t total_steps_ = 0;
  std::deque<Episode> episodes_;
};

// JSON-lines episode files: a header {"format": "choreo-episodes", "version": 1}
// followed by one {"obs", "act", "rew"?, "meta"?} object per line.
inline constexpr int kDatasetVersion = 1;
void save_offline_dataset(const std::string& path, const ReplayBuffer& buffer);
ReplayBuffer load_offline_dataset(const std::string& path, std::size_t capacity_steps = 1'000'000);
Episode parse_episode(const nlohmann::json& record, std::size_t index);

}  // namespace choreo
