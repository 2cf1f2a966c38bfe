#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "choreo/rng.hpp"
#include "choreo/tensor.hpp"

namespace choreo {

using Gradients = std::map<std::string, Tensor>;

struct AdamOptions;

// Named parameters plus the Adam state that belongs to them.
class ParamSet {
 public:
  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return values_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);

  const std::map<std::string, Tensor>& values() const { return values_; }
  const std::map<std::string, Tensor>& first_moments() const { return first_; }
  const std::map<std::string, Tensor>& second_moments() const { return second_; }
  std::uint64_t step() const { return step_; }
  std::size_t parameter_count() const;

  // Zero the moments and the step counter, keep the values.
  void reset_optimizer();

  // Zero-filled gradient map with one entry per parameter.
  Gradients zero_gradients() const;

  bool operator==(const ParamSet&) const = default;

 private:
  friend void adam_step(ParamSet&, const Gradients&, double, const AdamOptions&);
  friend void read_params(std::istream&, ParamSet&);

  std::map<std::string, Tensor> values_;
  std::map<std::string, Tensor> first_;
  std::map<std::string, Tensor> second_;
  std::uint64_t step_ = 0;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update. Parameters absent from `grads` are treated
// as having zero gradient.
void adam_step(ParamSet& params, const Gradients& grads, double lr, const AdamOptions& options = {});

double global_norm(const Gradients& grads);

// Scale all gradients by max_norm / g when the global L2 norm g exceeds max_norm.
Gradients clip_grad_norm(Gradients grads, double max_norm);

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

// Binary checkpoint: version byte, then entries as
// (name, shape, little-endian float64 values), then optimizer state.
inline constexpr std::uint8_t kParamFormatVersion = 1;
void write_params(std::ostream& out, const ParamSet& params);
void read_params(std::istream& in, ParamSet& params);
void save_params(const std::string& path, const ParamSet& params);
ParamSet load_params(const std::string& path);

// Replaces `target` with `loaded` after checking that both hold the same names
// and shapes; mismatches raise StartupError naming the component and field.
void assign_checked(ParamSet& target, ParamSet loaded, const std::string& component);

nlohmann::json params_to_json(const ParamSet& params);
ParamSet params_from_json(const nlohmann::json& j);

// Little-endian primitives shared by the binary formats.
namespace binio {
void write_u8(std::ostream& out, std::uint8_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f64(std::ostream& out, double v);
void write_string(std::ostream& out, const std::string& s);
void write_tensor(std::ostream& out, const Tensor& t);
std::uint8_t read_u8(std::istream& in);
std::uint64_t read_u64(std::istream& in);
double read_f64(std::istream& in);
std::string read_string(std::istream& in);
Tensor read_tensor(std::istream& in);
}  // namespace binio

}  // namespace choreo
