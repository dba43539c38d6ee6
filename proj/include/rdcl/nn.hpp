#pragma once

// Recurrent and linear building blocks on top of the autodiff tensor.

#include <string>
#include <utility>
#include <vector>

#include "rdcl/rng.hpp"
#include "rdcl/tensor.hpp"

namespace rdcl {

// Named view of every trainable tensor in a model, in a fixed order.
using ParamList = std::vector<std::pair<std::string, Tensor>>;

inline void append_params(ParamList& dst, const ParamList& src,
                          const std::string& prefix) {
  for (const auto& [name, t] : src) dst.emplace_back(prefix + name, t);
}

// Uniform(-limit, limit) with the Glorot limit for a fan-in/fan-out pair.
inline Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out,
                     Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = rng.uniform(-limit, limit);
  return Tensor::param(std::move(shape), std::move(data));
}

struct Linear {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng)
      : weight(glorot({out, in}, in, out, rng)),
        bias(Tensor::param({out}, std::vector<double>(out, 0.0))) {}

  static Linear zeros(std::size_t in, std::size_t out) {
    Linear l;
    l.weight = Tensor::param({out, in}, std::vector<double>(out * in, 0.0));
    l.bias = Tensor::param({out}, std::vector<double>(out, 0.0));
    return l;
  }

  Tensor operator()(const Tensor& x) const { return matvec(weight, x) + bias; }

  ParamList params(const std::string& prefix) const {
    return {{prefix + ".weight", weight}, {prefix + ".bias", bias}};
  }
};

// Two-layer perceptron with a tanh hidden layer. The output bias is optional:
// without it, a fully zero-initialized Mlp has identically zero gradients, so
// it stays an exact no-op under training (used by the residual projection).
struct Mlp {
  Linear hidden;
  Tensor out_weight;           // [out x hid]
  Tensor out_bias;             // [out], may be empty
  bool has_out_bias = true;

  Mlp() = default;
  Mlp(std::size_t in, std::size_t hid, std::size_t out, Rng& rng,
      bool out_bias_enabled = true)
      : hidden(in, hid, rng),
        out_weight(glorot({out, hid}, hid, out, rng)),
        has_out_bias(out_bias_enabled) {
    if (has_out_bias)
      out_bias = Tensor::param({out}, std::vector<double>(out, 0.0));
  }

  static Mlp zeros(std::size_t in, std::size_t hid, std::size_t out,
                   bool out_bias_enabled = true) {
    Mlp m;
    m.hidden = Linear::zeros(in, hid);
    m.out_weight = Tensor::param({out, hid}, std::vector<double>(out * hid, 0.0));
    m.has_out_bias = out_bias_enabled;
    if (out_bias_enabled)
      m.out_bias = Tensor::param({out}, std::vector<double>(out, 0.0));
    return m;
  }

  Tensor operator()(const Tensor& x) const {
    Tensor h = matvec(out_weight, tanh(hidden(x)));
    return has_out_bias ? h + out_bias : h;
  }

  ParamList params(const std::string& prefix) const {
    ParamList p = hidden.params(prefix + ".hidden");
    p.emplace_back(prefix + ".out.weight", out_weight);
    if (has_out_bias) p.emplace_back(prefix + ".out.bias", out_bias);
    return p;
  }
};

// LSTM cell parameters. Gate block ordering within the 4h axis is fixed:
// input, forget, cell, output.
struct LstmCellParams {
  Tensor w_ih;  // [4h x in]
  Tensor w_hh;  // [4h x h]
  Tensor bias;  // [4h]
  std::size_t hidden_size = 0;

  LstmCellParams() = default;
  LstmCellParams(std::size_t in, std::size_t h, Rng& rng)
      : w_ih(glorot({4 * h, in}, in, h, rng)),
        w_hh(glorot({4 * h, h}, h, h, rng)),
        bias(Tensor::param({4 * h}, std::vector<double>(4 * h, 0.0))),
        hidden_size(h) {}

  static LstmCellParams zeros(std::size_t in, std::size_t h) {
    LstmCellParams p;
    p.w_ih = Tensor::param({4 * h, in}, std::vector<double>(4 * h * in, 0.0));
    p.w_hh = Tensor::param({4 * h, h}, std::vector<double>(4 * h * h, 0.0));
    p.bias = Tensor::param({4 * h}, std::vector<double>(4 * h, 0.0));
    p.hidden_size = h;
    return p;
  }

  ParamList params(const std::string& prefix) const {
    return {{prefix + ".w_ih", w_ih},
            {prefix + ".w_hh", w_hh},
            {prefix + ".bias", bias}};
  }
};

struct LstmState {
  Tensor h;
  Tensor c;
};

inline LstmState lstm_zero_state(std::size_t h) {
  return {Tensor::zeros({h}), Tensor::zeros({h})};
}

// One LSTM step. Differentiable through the whole unrolled sequence.
inline LstmState lstm_cell(const LstmCellParams& p, const Tensor& x,
                           const LstmState& prev) {
  const std::size_t h = p.hidden_size;
  if (x.numel() != p.w_ih.dim(1))
    throw TensorError("lstm_cell: input width " + std::to_string(x.numel()) +
                      " does not match params " + std::to_string(p.w_ih.dim(1)));
  if (prev.h.numel() != h || prev.c.numel() != h)
    throw TensorError("lstm_cell: state width mismatch");
  Tensor gates = matvec(p.w_ih, x) + matvec(p.w_hh, prev.h) + p.bias;
  Tensor i = sigmoid(slice(gates, 0, h));
  Tensor f = sigmoid(slice(gates, h, h));
  Tensor g = tanh(slice(gates, 2 * h, h));
  Tensor o = sigmoid(slice(gates, 3 * h, h));
  Tensor c = f * prev.c + i * g;
  Tensor hh = o * tanh(c);
  return {hh, c};
}

// Full unidirectional pass; returns the hidden state at every step.
inline std::vector<Tensor> lstm_forward(const LstmCellParams& p,
                                        const std::vector<Tensor>& seq) {
  std::vector<Tensor> out;
  out.reserve(seq.size());
  LstmState st = lstm_zero_state(p.hidden_size);
  for (const auto& x : seq) {
    st = lstm_cell(p, x, st);
    out.push_back(st.h);
  }
  return out;
}

// Per-step concatenation [h_fwd_t || h_bwd_t], where the backward half is the
// state after consuming the sequence from the end down to t.
inline std::vector<Tensor> bilstm_forward(const LstmCellParams& fwd,
                                          const LstmCellParams& bwd,
                                          const std::vector<Tensor>& seq) {
  if (seq.empty()) throw TensorError("bilstm_forward: empty sequence");
  std::vector<Tensor> hf = lstm_forward(fwd, seq);
  std::vector<Tensor> rev(seq.rbegin(), seq.rend());
  std::vector<Tensor> hb_rev = lstm_forward(bwd, rev);
  std::vector<Tensor> out;
  out.reserve(seq.size());
  for (std::size_t t = 0; t < seq.size(); ++t)
    out.push_back(concat(hf[t], hb_rev[seq.size() - 1 - t]));
  return out;
}

}  // namespace rdcl
