#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "choreo/autodiff.hpp"
#include "choreo/nn.hpp"
#include "choreo/rng.hpp"

namespace choreo {

// N skill vectors with exponential-moving-average statistics and a count of
// consecutive batches in which each code received no assignment.
class Codebook {
 public:
  Codebook() = default;
  // Codes drawn from N(0, init_scale^2); EMA state starts as one pseudo-assignment
  // of each code to itself (count 1, sum = code).
  Codebook(std::size_t codes, std::size_t dim, Rng& rng, double init_scale = 1.0);
  explicit Codebook(Tensor codes);

  std::size_t size() const { return codes_.rows(); }
  std::size_t dim() const { return codes_.cols(); }
  const Tensor& codes() const { return codes_; }
  std::vector<double> code(std::size_t i) const { return codes_.row_vector(i); }
  const std::vector<double>& ema_counts() const { return ema_counts_; }
  const Tensor& ema_sums() const { return ema_sums_; }
  const std::vector<std::uint64_t>& inactive_batches() const { return inactive_; }

  // Nearest code in Euclidean distance; ties go to the lowest index.
  std::pair<std::size_t, std::vector<double>> quantize(std::span<const double> embedding) const;
  std::vector<std::size_t> assign(const Tensor& embeddings) const;

  // counts_i <- decay * counts_i + (1 - decay) * n_i
  // sums_i   <- decay * sums_i   + (1 - decay) * sum of assigned embeddings
  // code_i   <- sums_i / max(counts_i, eps)   (only for codes assigned this batch)
  void ema_update(const Tensor& embeddings, std::span<const std::size_t> indices, double decay, double eps = 1e-5);

  // Sampling weights d^2 / sum d^2, with d the distance of each embedding to its
  // nearest code; uniform when every distance is zero.
  std::vector<double> resample_weights(const Tensor& embeddings) const;

  // Re-initialise every code idle for at least `min_inactive` batches with an
  // embedding drawn from resample_weights(), in ascending code order and with
  // the weights recomputed after each overwrite. Returns the codes replaced.
  std::vector<std::size_t> resample(const Tensor& embeddings, std::uint64_t min_inactive, Rng& rng);

  // Codes assigned at least once during the last `window` batches.
  std::vector<bool> active_mask(std::uint64_t window) const;

  nlohmann::json to_json(std::uint64_t window) const;
  void write(std::ostream& out) const;
  static Codebook read(std::istream& in);

  bool operator==(const Codebook&) const = default;

 private:
  Tensor codes_;
  std::vector<double> ema_counts_;
  Tensor ema_sums_;
  std::vector<std::uint64_t> inactive_;
};

std::size_t sample_skill_uniform(std::size_t codes, Rng& rng);

struct SkillVQConfig {
  std::size_t codes = 64;
  std::size_t code_dim = 16;
  std::size_t hidden = 128;
  std::size_t layers = 2;
  double beta = 0.25;
  double decay = 0.99;
  double eps = 1e-5;
  std::uint64_t resample_every = 200;  // M
  bool resample = true;
  double code_init_scale = 1.0;
  double lr = 3e-4;
  double clip = 100.0;
};

struct VqForward {
  Var loss;
  Var recon;       // mean ||s - D(z_q)||^2
  Var commitment;  // beta * mean ||sg(z_q) - E(s)||^2
  Var embeddings;
  Var reconstruction;
  std::vector<std::size_t> indices;
};

struct VqStats {
  double loss = 0.0;
  double recon = 0.0;
  double commitment = 0.0;
  std::vector<std::size_t> indices;
  std::vector<std::size_t> resampled;
};

// Single-code VQ autoencoder over the deterministic part of model states.
class SkillVQ {
 public:
  SkillVQ(SkillVQConfig config, std::size_t state_dim, Rng& rng);

  const SkillVQConfig& config() const { return config_; }
  std::size_t state_dim() const { return state_dim_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  Codebook& codebook() { return codebook_; }
  const Codebook& codebook() const { return codebook_; }
  std::uint64_t batches_seen() const { return batches_; }
  void set_batches_seen(std::uint64_t n) { batches_ = n; }

  Var encode(Tape& tape, Var states) const;
  Var decode(Tape& tape, Var codes) const;
  Tensor encode(const Tensor& states) const;
  Tensor decode(const Tensor& codes) const;
  std::vector<double> decode(std::span<const double> code) const;

  // Reconstruction plus commitment loss with straight-through gradients from the
  // decoder input to the encoder output. Codebook rows receive no gradient.
  VqForward forward(Tape& tape, const Tensor& states) const;

  // Gradient step on encoder/decoder, EMA codebook update, then code resampling
  // when the batch counter reaches a multiple of M.
  VqStats train_step(const Tensor& states, Rng& rng);

 private:
  SkillVQConfig config_;
  std::size_t state_dim_;
  ParamSet params_;
  Codebook codebook_;
  MlpSpec encoder_, decoder_;
  std::uint64_t batches_ = 0;
};

}  // namespace choreo
