#pragma once

#include <string>
#include <vector>

#include "choreo/autodiff.hpp"

namespace choreo {

// Fully connected stack: tanh on hidden layers, linear output layer.
// Parameters are stored as "<prefix>.l<i>.w" ([in, out]) and "<prefix>.l<i>.b" ([1, out]).
struct MlpSpec {
  std::string prefix;
  std::size_t in = 0;
  std::vector<std::size_t> hidden;
  std::size_t out = 0;
};

void init_mlp(ParamSet& params, const MlpSpec& spec, Rng& rng);
Var mlp(Tape& tape, const ParamSet& params, const MlpSpec& spec, Var x);
Tensor mlp_forward(const ParamSet& params, const MlpSpec& spec, const Tensor& x);

// Gated recurrent unit:
//   r = sigmoid(x Wr + h Ur + br), u = sigmoid(x Wu + h Uu + bu)
//   n = tanh(x Wn + r * (h Un) + bn),  h' = (1 - u) * n + u * h
// stored as "<prefix>.wx" [in, 3H], "<prefix>.wh" [H, 3H], "<prefix>.b" [1, 3H]
// with gate blocks ordered (r, u, n).
struct GruSpec {
  std::string prefix;
  std::size_t input = 0;
  std::size_t hidden = 0;
};

void init_gru(ParamSet& params, const GruSpec& spec, Rng& rng);
Var gru_step(Tape& tape, const ParamSet& params, const GruSpec& spec, Var hidden, Var input);
Tensor gru_step(const Tensor& hidden, const Tensor& input, const ParamSet& params, const GruSpec& spec);

}  // namespace choreo
