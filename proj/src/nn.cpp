#include "choreo/nn.hpp"

#include "choreo/errors.hpp"

namespace choreo {

void init_mlp(ParamSet& params, const MlpSpec& spec, Rng& rng) {
  std::size_t in = spec.in;
  std::vector<std::size_t> sizes = spec.hidden;
  sizes.push_back(spec.out);
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const std::string layer = spec.prefix + ".l" + std::to_string(i);
    params.add(layer + ".w", glorot_uniform(in, sizes[i], rng));
    params.add(layer + ".b", Tensor::zeros(1, sizes[i]));
    in = sizes[i];
  }
}

Var mlp(Tape& tape, const ParamSet& params, const MlpSpec& spec, Var x) {
  if (x.cols() != spec.in)
    throw ContractViolation(spec.prefix + ": input width " + std::to_string(x.cols()) + ", expected " +
                            std::to_string(spec.in));
  const std::size_t layers = spec.hidden.size() + 1;
  for (std::size_t i = 0; i < layers; ++i) {
    const std::string layer = spec.prefix + ".l" + std::to_string(i);
    x = ops::matmul(x, tape.param(params, layer + ".w")) + tape.param(params, layer + ".b");
    if (i + 1 < layers) x = ops::tanh(x);
  }
  return x;
}

Tensor mlp_forward(const ParamSet& params, const MlpSpec& spec, const Tensor& x) {
  Tape tape;
  return mlp(tape, params, spec, tape.constant(x)).value();
}

void init_gru(ParamSet& params, const GruSpec& spec, Rng& rng) {
  params.add(spec.prefix + ".wx", glorot_uniform(spec.input, 3 * spec.hidden, rng));
  params.add(spec.prefix + ".wh", glorot_uniform(spec.hidden, 3 * spec.hidden, rng));
  params.add(spec.prefix + ".b", Tensor::zeros(1, 3 * spec.hidden));
}

Var gru_step(Tape& tape, const ParamSet& params, const GruSpec& spec, Var hidden, Var input) {
  const std::size_t h = spec.hidden;
  if (hidden.cols() != h || input.cols() != spec.input || hidden.rows() != input.rows())
    throw ContractViolation(spec.prefix + ": gru_step shape mismatch (hidden " + hidden.value().shape_string() +
                            ", input " + input.value().shape_string() + ")");
  Var xw = ops::matmul(input, tape.param(params, spec.prefix + ".wx")) + tape.param(params, spec.prefix + ".b");
  Var hw = ops::matmul(hidden, tape.param(params, spec.prefix + ".wh"));
  Var reset = ops::sigmoid(ops::slice_cols(xw, 0, h) + ops::slice_cols(hw, 0, h));
  Var update = ops::sigmoid(ops::slice_cols(xw, h, 2 * h) + ops::slice_cols(hw, h, 2 * h));
  Var cand = ops::tanh(ops::slice_cols(xw, 2 * h, 3 * h) + reset * ops::slice_cols(hw, 2 * h, 3 * h));
  return cand + update * (hidden - cand);
}

Tensor gru_step(const Tensor& hidden, const Tensor& input, const ParamSet& params, const GruSpec& spec) {
  Tape tape;
  return gru_step(tape, params, spec, tape.constant(hidden), tape.constant(input)).value();
}

}  // namespace choreo
