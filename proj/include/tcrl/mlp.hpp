#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tcrl/autodiff.hpp"
#include "tcrl/core.hpp"
#include "tcrl/params.hpp"

namespace tcrl {

enum class Activation { none, elu, tanh };

struct MlpSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden_dims{256, 256};
  std::size_t output_dim = 1;
  Activation activation = Activation::elu;
  Activation output_activation = Activation::none;

  std::size_t num_layers() const { return hidden_dims.size() + 1; }
  std::size_t layer_in(std::size_t i) const { return i == 0 ? input_dim : hidden_dims[i - 1]; }
  std::size_t layer_out(std::size_t i) const { return i == hidden_dims.size() ? output_dim : hidden_dims[i]; }

  void validate(const std::string& where) const {
    if (input_dim < 1 || output_dim < 1) throw ConfigError(where + ": MLP dims must be >= 1");
    if (hidden_dims.empty()) throw ConfigError(where + ": MLP needs at least one hidden layer");
    for (auto h : hidden_dims) {
      if (h < 1) throw ConfigError(where + ": MLP hidden dims must be >= 1");
    }
  }
};

inline std::string weight_path(const std::string& prefix, std::size_t layer) {
  return prefix + ".layer" + std::to_string(layer) + ".weight";
}
inline std::string bias_path(const std::string& prefix, std::size_t layer) {
  return prefix + ".layer" + std::to_string(layer) + ".bias";
}

/// Adds `prefix.layer{i}.{weight,bias}`: weights uniform in +-1/sqrt(fan_in),
/// biases zero.
template <class S>
void init_mlp(ParamSet<S>& params, const std::string& prefix, const MlpSpec& spec, Rng& rng) {
  spec.validate(prefix);
  for (std::size_t i = 0; i < spec.num_layers(); ++i) {
    const auto in = spec.layer_in(i), out = spec.layer_out(i);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Matrix<S> w(in, out);
    for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = static_cast<S>(rng.uniform(-bound, bound));
    params.add(weight_path(prefix, i), std::move(w));
    params.add(bias_path(prefix, i), Matrix<S>::Zero(1, out));
  }
}

namespace detail {

template <class S>
void check_layer(const ParamSet<S>& params, const std::string& prefix, const MlpSpec& spec, std::size_t i) {
  const auto& w = params.at(weight_path(prefix, i)).value;
  const auto& b = params.at(bias_path(prefix, i)).value;
  const auto in = static_cast<Eigen::Index>(spec.layer_in(i)), out = static_cast<Eigen::Index>(spec.layer_out(i));
  if (w.rows() != in || w.cols() != out) {
    throw ConfigError(weight_path(prefix, i) + ": expected " + std::to_string(in) + "x" + std::to_string(out) + ", got " +
                      std::to_string(w.rows()) + "x" + std::to_string(w.cols()));
  }
  if (b.rows() != 1 || b.cols() != out) throw ConfigError(bias_path(prefix, i) + ": shape mismatch");
}

template <class S>
ad::Var<S> activate(const ad::Var<S>& x, Activation a) {
  switch (a) {
    case Activation::elu:
      return ad::elu(x);
    case Activation::tanh:
      return ad::tanh(x);
    case Activation::none:
      break;
  }
  return x;
}

template <class S>
void activate_inplace(Matrix<S>& x, Activation a) {
  switch (a) {
    case Activation::elu:
      x = ad::elu_values(x);
      break;
    case Activation::tanh:
      x = x.array().tanh().matrix();
      break;
    case Activation::none:
      break;
  }
}

}  // namespace detail

/// Taped forward pass; parameters are bound on the tape so gradients reach them.
template <class S>
ad::Var<S> mlp_forward(ad::Tape<S>& tape, ParamSet<S>& params, const std::string& prefix, const MlpSpec& spec,
                       const ad::Var<S>& input) {
  if (static_cast<std::size_t>(input.cols()) != spec.input_dim) {
    throw ConfigError(prefix + ": input has " + std::to_string(input.cols()) + " features, expected " +
                      std::to_string(spec.input_dim));
  }
  ad::Var<S> x = input;
  for (std::size_t i = 0; i < spec.num_layers(); ++i) {
    detail::check_layer(params, prefix, spec, i);
    x = ad::affine(x, bind_param(tape, params, weight_path(prefix, i)), bind_param(tape, params, bias_path(prefix, i)));
    x = detail::activate(x, i + 1 == spec.num_layers() ? spec.output_activation : spec.activation);
  }
  return x;
}

/// Untaped forward pass for frozen-parameter evaluation.
template <class S>
Matrix<S> mlp_infer(const ParamSet<S>& params, const std::string& prefix, const MlpSpec& spec, const Matrix<S>& input) {
  if (static_cast<std::size_t>(input.cols()) != spec.input_dim) {
    throw ConfigError(prefix + ": input has " + std::to_string(input.cols()) + " features, expected " +
                      std::to_string(spec.input_dim));
  }
  Matrix<S> x = input;
  for (std::size_t i = 0; i < spec.num_layers(); ++i) {
    detail::check_layer(params, prefix, spec, i);
    const auto& w = params.at(weight_path(prefix, i)).value;
    const auto& b = params.at(bias_path(prefix, i)).value;
    Matrix<S> y(x.rows(), w.cols());
    y.noalias() = x * w;
    y.rowwise() += b.row(0);
    detail::activate_inplace(y, i + 1 == spec.num_layers() ? spec.output_activation : spec.activation);
    x = std::move(y);
  }
  return x;
}

}  // namespace tcrl
