#include "choreo/replay.hpp"

#include <algorithm>
#include <fstream>

#include "choreo/errors.hpp"

namespace choreo {

void ReplayBuffer::add(std::vector<double> obs, std::vector<double> prev_action, double reward, bool first) {
  if (first || episodes_.empty()) episodes_.emplace_back();
  auto& ep = episodes_.back();
  ep.obs.push_back(std::move(obs));
  ep.act.push_back(std::move(prev_action));
  ep.rew.push_back(reward);
  ++total_steps_;
  evict();
}

void ReplayBuffer::add_episode(Episode episode) {
  CHOREO_REQUIRE(episode.act.size() == episode.obs.size() && episode.rew.size() == episode.obs.size(),
                 "episode fields must have equal length");
  total_steps_ += episode.size();
  episodes_.push_back(std::move(episode));
  evict();
}

void ReplayBuffer::clear() {
  episodes_.clear();
  total_steps_ = 0;
}

void ReplayBuffer::evict() {
  while (total_steps_ > capacity_ && episodes_.size() > 1) {
    total_steps_ -= episodes_.front().size();
    episodes_.pop_front();
  }
}

std::size_t ReplayBuffer::window_count(std::size_t length) const {
  std::size_t n = 0;
  for (const auto& ep : episodes_)
    if (ep.size() >= length) n += ep.size() - length + 1;
  return n;
}

std::vector<Window> ReplayBuffer::sample_windows(std::size_t batch, std::size_t length, Rng& rng) const {
  CHOREO_REQUIRE(length > 0, "window length must be positive");
  std::vector<std::size_t> cumulative;
  std::size_t total = 0;
  for (const auto& ep : episodes_) {
    if (ep.size() >= length) total += ep.size() - length + 1;
    cumulative.push_back(total);
  }
  if (total == 0) throw NotReady("replay buffer has no episode with " + std::to_string(length) + " steps");
  std::vector<Window> out(batch);
  for (auto& w : out) {
    const std::size_t k = rng.index(total);
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), k);
    w.episode = static_cast<std::size_t>(it - cumulative.begin());
    const std::size_t before = w.episode == 0 ? 0 : cumulative[w.episode - 1];
    w.start = k - before;
  }
  return out;
}

SequenceBatch ReplayBuffer::gather(const std::vector<Window>& windows, std::size_t length) const {
  CHOREO_REQUIRE(!windows.empty(), "gather needs at least one window");
  const auto& first = episodes_.at(windows.front().episode);
  const std::size_t obs_dim = first.obs.front().size();
  const std::size_t act_dim = first.act.front().size();
  const std::size_t b = windows.size();
  SequenceBatch out;
  for (std::size_t t = 0; t < length; ++t) {
    Tensor obs = Tensor::zeros(b, obs_dim), act = Tensor::zeros(b, act_dim), rew = Tensor::zeros(b, 1);
    for (std::size_t i = 0; i < b; ++i) {
      const auto& ep = episodes_.at(windows[i].episode);
      const std::size_t idx = windows[i].start + t;
      CHOREO_REQUIRE(idx < ep.size(), "window exceeds its episode");
      std::copy(ep.obs[idx].begin(), ep.obs[idx].end(), obs.row_span(i).begin());
      std::copy(ep.act[idx].begin(), ep.act[idx].end(), act.row_span(i).begin());
      rew[i] = ep.rew[idx];
    }
    out.obs.push_back(std::move(obs));
    out.actions.push_back(std::move(act));
    out.rewards.push_back(std::move(rew));
  }
  return out;
}

SequenceBatch ReplayBuffer::sample_batch(std::size_t batch, std::size_t length, Rng& rng) const {
  return gather(sample_windows(batch, length, rng), length);
}

void save_offline_dataset(const std::string& path, const ReplayBuffer& buffer) {
  std::ofstream out(path);
  if (!out) throw StartupError("cannot write dataset '" + path + "'");
  out << nlohmann::json{{"format", "choreo-episodes"}, {"version", kDatasetVersion}}.dump() << '\n';
  for (const auto& ep : buffer.episodes()) {
    nlohmann::json j;
    j["obs"] = ep.obs;
    j["act"] = ep.act;
    j["rew"] = ep.rew;
    j["meta"] = ep.meta;
    out << j.dump() << '\n';
  }
}

namespace {

std::vector<std::vector<double>> parse_matrix(const nlohmann::json& record, const char* field, std::size_t index) {
  auto fail = [&](const std::string& why) {
    return ParseError("record " + std::to_string(index) + ", field '" + field + "': " + why);
  };
  if (!record.contains(field)) throw fail("missing");
  const auto& m = record.at(field);
  if (!m.is_array() || m.empty()) throw fail("expected a non-empty array of arrays");
  std::vector<std::vector<double>> out;
  for (const auto& row : m) {
    if (!row.is_array()) throw fail("expected an array of arrays");
    std::vector<double> r;
    for (const auto& v : row) {
      if (!v.is_number()) throw fail("non-numeric entry");
      r.push_back(v.get<double>());
    }
    if (!out.empty() && r.size() != out.front().size()) throw fail("rows have different widths");
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

Episode parse_episode(const nlohmann::json& record, std::size_t index) {
  if (!record.is_object()) throw ParseError("record " + std::to_string(index) + ": expected a JSON object");
  Episode ep;
  ep.obs = parse_matrix(record, "obs", index);
  ep.act = parse_matrix(record, "act", index);
  if (ep.act.size() != ep.obs.size())
    throw ParseError("record " + std::to_string(index) + ", field 'act': length " + std::to_string(ep.act.size()) +
                     " differs from obs length " + std::to_string(ep.obs.size()));
  if (record.contains("rew")) {
    const auto& r = record.at("rew");
    if (!r.is_array() || r.size() != ep.obs.size())
      throw ParseError("record " + std::to_string(index) + ", field 'rew': expected " +
                       std::to_string(ep.obs.size()) + " numbers");
    for (const auto& v : r) {
      if (!v.is_number()) throw ParseError("record " + std::to_string(index) + ", field 'rew': non-numeric entry");
      ep.rew.push_back(v.get<double>());
    }
  } else {
    ep.rew.assign(ep.obs.size(), 0.0);
  }
  if (record.contains("meta")) ep.meta = record.at("meta");
  return ep;
}

ReplayBuffer load_offline_dataset(const std::string& path, std::size_t capacity_steps) {
  std::ifstream in(path);
  if (!in) throw StartupError("dataset '" + path + "' not found");
  ReplayBuffer buffer(capacity_steps);
  std::string line;
  std::size_t index = 0;
  bool first_line = true;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("record " + std::to_string(index) + ": invalid JSON (" + e.what() + ")");
    }
    if (first_line && j.is_object() && j.contains("format")) {
      first_line = false;
      if (j.at("format") != "choreo-episodes")
        throw ParseError("header: field 'format' must be \"choreo-episodes\"");
      if (j.value("version", -1) != kDatasetVersion)
        throw ParseError("header: field 'version' must be " + std::to_string(kDatasetVersion));
      continue;
    }
    first_line = false;
    buffer.add_episode(parse_episode(j, index));
    ++index;
  }
  return buffer;
}

}  // namespace choreo
