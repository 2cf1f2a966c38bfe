#include "choreo/dataset.hpp"

namespace choreo {

Episode random_walk_episode(PointMassEnv& env, RandomWalkPolicy& policy, Rng& rng) {
  Episode ep;
  ep.obs.push_back(env.reset());
  ep.act.push_back({0.0, 0.0});
  ep.rew.push_back(0.0);
  policy.reset();
  while (!env.done()) {
    const auto a = policy.act(rng);
    StepResult r = env.step(a);
    ep.obs.push_back(std::move(r.obs));
    ep.act.push_back({a[0], a[1]});
    ep.rew.push_back(r.reward);
  }
  ep.meta = {{"policy", "random_walk"}};
  return ep;
}

ReplayBuffer random_walk_dataset(const PointMassConfig& config, std::size_t episodes, std::uint64_t seed,
                                 double step_std) {
  Rng rng(seed);
  PointMassEnv env(config);
  RandomWalkPolicy policy(step_std);
  ReplayBuffer buffer;
  for (std::size_t i = 0; i < episodes; ++i) buffer.add_episode(random_walk_episode(env, policy, rng));
  return buffer;
}

}  // namespace choreo
