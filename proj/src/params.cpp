#include "choreo/params.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "choreo/errors.hpp"

namespace choreo {

void ParamSet::add(const std::string& name, Tensor value) {
  CHOREO_REQUIRE(!contains(name), "duplicate parameter '" + name + "'");
  first_.emplace(name, Tensor::zeros_like(value));
  second_.emplace(name, Tensor::zeros_like(value));
  values_.emplace(name, std::move(value));
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = values_.find(name);
  CHOREO_REQUIRE(it != values_.end(), "unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParamSet::at(const std::string& name) {
  auto it = values_.find(name);
  CHOREO_REQUIRE(it != values_.end(), "unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParamSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : values_) n += v.size();
  return n;
}

void ParamSet::reset_optimizer() {
  for (auto& [_, m] : first_) m = Tensor::zeros_like(m);
  for (auto& [_, v] : second_) v = Tensor::zeros_like(v);
  step_ = 0;
}

Gradients ParamSet::zero_gradients() const {
  Gradients g;
  for (const auto& [name, v] : values_) g.emplace(name, Tensor::zeros_like(v));
  return g;
}

void adam_step(ParamSet& params, const Gradients& grads, double lr, const AdamOptions& options) {
  for (const auto& [name, g] : grads) {
    auto it = params.values_.find(name);
    CHOREO_REQUIRE(it != params.values_.end(), "gradient for unknown parameter '" + name + "'");
    CHOREO_REQUIRE(it->second.same_shape(g), "gradient shape mismatch for '" + name + "': " +
                                                 g.shape_string() + " vs " + it->second.shape_string());
  }
  params.step_ += 1;
  const double t = static_cast<double>(params.step_);
  const double bc1 = 1.0 - std::pow(options.beta1, t);
  const double bc2 = 1.0 - std::pow(options.beta2, t);
  for (auto& [name, value] : params.values_) {
    auto git = grads.find(name);
    auto& m = params.first_.at(name);
    auto& v = params.second_.at(name);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = git == grads.end() ? 0.0 : git->second[i];
      m[i] = options.beta1 * m[i] + (1.0 - options.beta1) * g;
      v[i] = options.beta2 * v[i] + (1.0 - options.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      value[i] -= lr * mhat / (std::sqrt(vhat) + options.eps);
    }
  }
}

double global_norm(const Gradients& grads) {
  double sq = 0.0;
  for (const auto& [_, g] : grads)
    for (double x : g.values()) sq += x * x;
  return std::sqrt(sq);
}

Gradients clip_grad_norm(Gradients grads, double max_norm) {
  CHOREO_REQUIRE(max_norm > 0.0, "clip_grad_norm requires max_norm > 0");
  const double norm = global_norm(grads);
  if (norm <= max_norm) return grads;
  const double scale = max_norm / norm;
  for (auto& [_, g] : grads) g *= scale;
  return grads;
}

Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w = Tensor::zeros(fan_in, fan_out);
  for (double& x : w.values()) x = rng.uniform(-limit, limit);
  return w;
}

namespace binio {

void write_u8(std::ostream& out, std::uint8_t v) { out.put(static_cast<char>(v)); }

void write_u64(std::ostream& out, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(bytes, 8);
}

void write_f64(std::ostream& out, double v) { write_u64(out, std::bit_cast<std::uint64_t>(v)); }

void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void write_tensor(std::ostream& out, const Tensor& t) {
  write_u64(out, t.rank());
  for (auto d : t.shape()) write_u64(out, d);
  for (double v : t.values()) write_f64(out, v);
}

std::uint8_t read_u8(std::istream& in) {
  const int c = in.get();
  if (c == std::char_traits<char>::eof()) throw ParseError("unexpected end of binary stream");
  return static_cast<std::uint8_t>(c);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw ParseError("unexpected end of binary stream");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

double read_f64(std::istream& in) { return std::bit_cast<double>(read_u64(in)); }

std::string read_string(std::istream& in) {
  const auto n = read_u64(in);
  if (n > (1u << 20)) throw ParseError("implausible string length in binary stream");
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw ParseError("unexpected end of binary stream");
  return s;
}

Tensor read_tensor(std::istream& in) {
  const auto rank = read_u64(in);
  if (rank > 8) throw ParseError("implausible tensor rank in binary stream");
  std::vector<std::size_t> shape(rank);
  std::size_t n = 1;
  for (auto& d : shape) {
    d = read_u64(in);
    n *= d;
  }
  if (n > (1u << 28)) throw ParseError("implausible tensor size in binary stream");
  std::vector<double> values(n);
  for (auto& v : values) v = read_f64(in);
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace binio

void write_params(std::ostream& out, const ParamSet& params) {
  binio::write_u8(out, kParamFormatVersion);
  binio::write_u64(out, params.values().size());
  for (const auto& [name, value] : params.values()) {
    binio::write_string(out, name);
    binio::write_tensor(out, value);
  }
  binio::write_u64(out, params.step());
  for (const auto& [name, _] : params.values()) {
    binio::write_tensor(out, params.first_moments().at(name));
    binio::write_tensor(out, params.second_moments().at(name));
  }
}

void read_params(std::istream& in, ParamSet& params) {
  const auto version = binio::read_u8(in);
  if (version != kParamFormatVersion)
    throw StartupError("parameter checkpoint version " + std::to_string(version) + " unsupported (expected " +
                       std::to_string(kParamFormatVersion) + ")");
  params = ParamSet{};
  const auto count = binio::read_u64(in);
  std::vector<std::string> names;
  for (std::uint64_t i = 0; i < count; ++i) {
    auto name = binio::read_string(in);
    params.add(name, binio::read_tensor(in));
    names.push_back(std::move(name));
  }
  params.step_ = binio::read_u64(in);
  for (const auto& name : names) {
    params.first_.at(name) = binio::read_tensor(in);
    params.second_.at(name) = binio::read_tensor(in);
  }
}

void save_params(const std::string& path, const ParamSet& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StartupError("cannot write checkpoint '" + path + "'");
  write_params(out, params);
}

ParamSet load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StartupError("cannot read checkpoint '" + path + "'");
  ParamSet p;
  read_params(in, p);
  return p;
}

void assign_checked(ParamSet& target, ParamSet loaded, const std::string& component) {
  for (const auto& [name, value] : target.values()) {
    if (!loaded.contains(name)) throw StartupError(component + ": checkpoint is missing field '" + name + "'");
    if (!loaded.at(name).same_shape(value))
      throw StartupError(component + ": field '" + name + "' has shape " + loaded.at(name).shape_string() +
                         " in the checkpoint but " + value.shape_string() + " in the configuration");
  }
  for (const auto& [name, value] : loaded.values())
    if (!target.contains(name)) throw StartupError(component + ": unexpected field '" + name + "' in checkpoint");
  target = std::move(loaded);
}

nlohmann::json params_to_json(const ParamSet& params) {
  nlohmann::json j;
  j["version"] = kParamFormatVersion;
  auto& entries = j["params"];
  entries = nlohmann::json::object();
  for (const auto& [name, value] : params.values())
    entries[name] = {{"shape", value.shape()}, {"values", value.values()}};
  return j;
}

ParamSet params_from_json(const nlohmann::json& j) {
  if (j.value("version", 0) != kParamFormatVersion) throw StartupError("unsupported parameter JSON version");
  ParamSet p;
  for (const auto& [name, entry] : j.at("params").items())
    p.add(name, Tensor(entry.at("shape").get<std::vector<std::size_t>>(),
                       entry.at("values").get<std::vector<double>>()));
  return p;
}

}  // namespace choreo
