#include "choreo/codebook.hpp"

#include <istream>
#include <limits>
#include <ostream>

#include "choreo/errors.hpp"

namespace choreo {

namespace {
constexpr std::uint8_t kCodebookFormatVersion = 1;
}

Codebook::Codebook(std::size_t codes, std::size_t dim, Rng& rng, double init_scale) {
  CHOREO_REQUIRE(codes >= 2 && dim >= 1, "codebook needs N >= 2 codes of positive dimension");
  Tensor c = Tensor::zeros(codes, dim);
  for (double& v : c.values()) v = rng.normal(0.0, init_scale);
  *this = Codebook(std::move(c));
}

Codebook::Codebook(Tensor codes)
    : codes_(codes), ema_counts_(codes.rows(), 1.0), ema_sums_(codes), inactive_(codes.rows(), 0) {
  CHOREO_REQUIRE(codes_.rank() == 2 && codes_.rows() >= 2, "codebook must be an [N, d] matrix with N >= 2");
  CHOREO_REQUIRE(codes_.all_finite(), "codebook rows must be finite");
}

std::pair<std::size_t, std::vector<double>> Codebook::quantize(std::span<const double> embedding) const {
  CHOREO_REQUIRE(embedding.size() == dim(), "quantize: embedding dimension mismatch");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < size(); ++j) {
    const double d = squared_distance(embedding, codes_.row_span(j));
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return {best, codes_.row_vector(best)};
}

std::vector<std::size_t> Codebook::assign(const Tensor& embeddings) const {
  std::vector<std::size_t> out(embeddings.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = quantize(embeddings.row_span(i)).first;
  return out;
}

void Codebook::ema_update(const Tensor& embeddings, std::span<const std::size_t> indices, double decay, double eps) {
  CHOREO_REQUIRE(decay > 0.0 && decay < 1.0, "ema_update requires 0 < decay < 1");
  CHOREO_REQUIRE(indices.size() == embeddings.rows() && embeddings.cols() == dim(),
                 "ema_update: embeddings/indices mismatch");
  const std::size_t n = size(), d = dim();
  std::vector<double> counts(n, 0.0);
  Tensor sums = Tensor::zeros(n, d);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    CHOREO_REQUIRE(indices[i] < n, "ema_update: index out of range");
    counts[indices[i]] += 1.0;
    auto row = embeddings.row_span(i);
    auto dst = sums.row_span(indices[i]);
    for (std::size_t k = 0; k < d; ++k) dst[k] += row[k];
  }
  for (std::size_t j = 0; j < n; ++j) {
    ema_counts_[j] = decay * ema_counts_[j] + (1.0 - decay) * counts[j];
    auto s = ema_sums_.row_span(j);
    auto b = sums.row_span(j);
    for (std::size_t k = 0; k < d; ++k) s[k] = decay * s[k] + (1.0 - decay) * b[k];
    if (counts[j] > 0.0) {
      const double denom = std::max(ema_counts_[j], eps);
      auto c = codes_.row_span(j);
      for (std::size_t k = 0; k < d; ++k) c[k] = s[k] / denom;
      inactive_[j] = 0;
    } else {
      inactive_[j] += 1;
    }
  }
}

std::vector<double> Codebook::resample_weights(const Tensor& embeddings) const {
  CHOREO_REQUIRE(embeddings.rows() > 0 && embeddings.cols() == dim(), "resample: embeddings shape mismatch");
  std::vector<double> w(embeddings.rows());
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < size(); ++j) best = std::min(best, squared_distance(embeddings.row_span(i), codes_.row_span(j)));
    w[i] = best;
    total += best;
  }
  if (total <= 0.0) return std::vector<double>(w.size(), 1.0 / static_cast<double>(w.size()));
  for (double& x : w) x /= total;
  return w;
}

std::vector<std::size_t> Codebook::resample(const Tensor& embeddings, std::uint64_t min_inactive, Rng& rng) {
  std::vector<std::size_t> replaced;
  for (std::size_t j = 0; j < size(); ++j) {
    if (inactive_[j] < min_inactive) continue;
    const auto w = resample_weights(embeddings);
    const std::size_t pick = rng.categorical(w);
    auto src = embeddings.row_span(pick);
    std::copy(src.begin(), src.end(), codes_.row_span(j).begin());
    std::copy(src.begin(), src.end(), ema_sums_.row_span(j).begin());
    ema_counts_[j] = 1.0;
    inactive_[j] = 0;
    replaced.push_back(j);
  }
  return replaced;
}

std::vector<bool> Codebook::active_mask(std::uint64_t window) const {
  std::vector<bool> mask(size());
  for (std::size_t j = 0; j < size(); ++j) mask[j] = inactive_[j] < window;
  return mask;
}

nlohmann::json Codebook::to_json(std::uint64_t window) const {
  nlohmann::json j;
  j["version"] = kCodebookFormatVersion;
  j["N"] = size();
  j["d_z"] = dim();
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < size(); ++i) rows.push_back(codes_.row_vector(i));
  j["codes"] = rows;
  j["active_mask"] = active_mask(window);
  return j;
}

void Codebook::write(std::ostream& out) const {
  binio::write_u8(out, kCodebookFormatVersion);
  binio::write_tensor(out, codes_);
  binio::write_tensor(out, ema_sums_);
  for (double c : ema_counts_) binio::write_f64(out, c);
  for (auto k : inactive_) binio::write_u64(out, k);
}

Codebook Codebook::read(std::istream& in) {
  const auto version = binio::read_u8(in);
  if (version != kCodebookFormatVersion) throw StartupError("unsupported codebook checkpoint version");
  Codebook cb(binio::read_tensor(in));
  cb.ema_sums_ = binio::read_tensor(in);
  for (double& c : cb.ema_counts_) c = binio::read_f64(in);
  for (auto& k : cb.inactive_) k = binio::read_u64(in);
  return cb;
}

std::size_t sample_skill_uniform(std::size_t codes, Rng& rng) { return rng.index(codes); }

SkillVQ::SkillVQ(SkillVQConfig config, std::size_t state_dim, Rng& rng) : config_(config), state_dim_(state_dim) {
  CHOREO_REQUIRE(config_.codes >= 2, "codebook needs N >= 2");
  CHOREO_REQUIRE(config_.beta > 0.0, "commitment weight beta must be positive");
  CHOREO_REQUIRE(config_.resample_every >= 1, "resampling period M must be >= 1");
  const std::vector<std::size_t> deep(config_.layers, config_.hidden);
  encoder_ = {"vq_enc", state_dim, deep, config_.code_dim};
  decoder_ = {"vq_dec", config_.code_dim, deep, state_dim};
  init_mlp(params_, encoder_, rng);
  init_mlp(params_, decoder_, rng);
  codebook_ = Codebook(config_.codes, config_.code_dim, rng, config_.code_init_scale);
}

Var SkillVQ::encode(Tape& tape, Var states) const { return mlp(tape, params_, encoder_, states); }
Var SkillVQ::decode(Tape& tape, Var codes) const { return mlp(tape, params_, decoder_, codes); }
Tensor SkillVQ::encode(const Tensor& states) const { return mlp_forward(params_, encoder_, states); }
Tensor SkillVQ::decode(const Tensor& codes) const { return mlp_forward(params_, decoder_, codes); }

std::vector<double> SkillVQ::decode(std::span<const double> code) const {
  CHOREO_REQUIRE(code.size() == config_.code_dim, "decode: code dimension mismatch");
  return decode(Tensor::row(code)).values();
}

VqForward SkillVQ::forward(Tape& tape, const Tensor& states) const {
  CHOREO_REQUIRE(states.rows() > 0, "vq_forward needs a non-empty batch");
  CHOREO_REQUIRE(states.cols() == state_dim_, "vq_forward: state dimension mismatch");
  VqForward out;
  Var s = tape.constant(states);
  out.embeddings = encode(tape, s);
  out.indices = codebook_.assign(out.embeddings.value());
  Tensor quantized = Tensor::zeros(states.rows(), config_.code_dim);
  for (std::size_t i = 0; i < out.indices.size(); ++i) {
    auto c = codebook_.codes().row_span(out.indices[i]);
    std::copy(c.begin(), c.end(), quantized.row_span(i).begin());
  }
  Var zq = tape.constant(quantized);
  Var passthrough = ops::straight_through(quantized, out.embeddings);
  out.reconstruction = decode(tape, passthrough);
  out.recon = ops::mean(ops::sum_cols(ops::square(s - out.reconstruction)));
  out.commitment = ops::scale(ops::mean(ops::sum_cols(ops::square(zq - out.embeddings))), config_.beta);
  out.loss = out.recon + out.commitment;
  return out;
}

VqStats SkillVQ::train_step(const Tensor& states, Rng& rng) {
  Tape tape;
  VqForward f = forward(tape, states);
  auto grads = clip_grad_norm(tape.backward(f.loss, params_), config_.clip);
  adam_step(params_, grads, config_.lr);

  const Tensor& embeddings = f.embeddings.value();
  codebook_.ema_update(embeddings, f.indices, config_.decay, config_.eps);
  ++batches_;
  VqStats stats{f.loss.value().item(), f.recon.value().item(), f.commitment.value().item(), f.indices, {}};
  if (config_.resample && batches_ % config_.resample_every == 0)
    stats.resampled = codebook_.resample(embeddings, config_.resample_every, rng);
  return stats;
}

}  // namespace choreo
