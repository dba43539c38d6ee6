#pragma once

// Counterfactual learning module: batch affinity graphs over the three
// factor modalities (audio, static, dynamic), message passing, fusion with
// the question feature, and total-indirect-effect logits under Gaussian
// counterfactual interventions on the graph.

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "rdcl/nn.hpp"
#include "rdcl/rng.hpp"
#include "rdcl/tensor.hpp"

namespace rdcl {

struct ClmHyper {
  double tau_clm = 2.0;
  std::size_t k = 5;

  void validate(std::size_t batch) const {
    if (tau_clm <= 0) throw TensorError("ClmHyper: tau_clm must be positive");
    if (k < 1 || k > batch)
      throw TensorError("ClmHyper: k must lie in [1, B]");
  }
};

// S[i][j] = exp(cos(x_i, x_j) / tau). Symmetric, diagonal exp(1/tau).
inline Tensor similarity_matrix(const Tensor& x, double tau) {
  if (tau <= 0) throw TensorError("similarity_matrix: tau must be positive");
  if (x.rank() != 2) throw TensorError("similarity_matrix: 2-D input required");
  const std::size_t b = x.shape()[0];
  std::vector<Tensor> rows(b);
  for (std::size_t i = 0; i < b; ++i) rows[i] = row(x, i);
  for (std::size_t i = 0; i < b; ++i) {
    double sq = 0;
    for (double v : rows[i].data()) sq += v * v;
    if (sq == 0.0)
      throw TensorError("similarity_matrix: zero-norm row " + std::to_string(i));
  }
  std::vector<Tensor> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<Tensor> entries(b);
    for (std::size_t j = 0; j < b; ++j)
      entries[j] = exp(cosine(rows[i], rows[j]) / tau);
    out[i] = concat(entries);
  }
  return from_rows(out);
}

// Row-wise top-k selection mask; ties resolved toward the lowest column
// index. The mask is a constant: gradients flow only through kept entries.
inline std::vector<double> topk_mask(const std::vector<double>& s,
                                     std::size_t b, std::size_t k) {
  std::vector<double> mask(b * b, 0.0);
  std::vector<std::size_t> idx(b);
  for (std::size_t i = 0; i < b; ++i) {
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t c) {
      return s[i * b + a] > s[i * b + c];
    });
    for (std::size_t r = 0; r < k; ++r) mask[i * b + idx[r]] = 1.0;
  }
  return mask;
}

inline Tensor topk_filter(const Tensor& s, std::size_t k) {
  if (s.rank() != 2 || s.shape()[0] != s.shape()[1])
    throw TensorError("topk_filter: square matrix required");
  const std::size_t b = s.shape()[0];
  if (k < 1 || k > b) throw TensorError("topk_filter: k out of range");
  Tensor mask = Tensor::from({b, b}, topk_mask(s.data(), b, k));
  return s * mask;
}

// D^{-1} S': each row divided by its sum.
inline Tensor row_normalize(const Tensor& s) {
  if (s.rank() != 2) throw TensorError("row_normalize: 2-D input required");
  const std::size_t b = s.shape()[0];
  std::vector<Tensor> rows(b);
  for (std::size_t i = 0; i < b; ++i) {
    Tensor r = row(s, i);
    double total = 0;
    for (double v : r.data()) total += v;
    if (total == 0.0)
      throw TensorError("row_normalize: zero row sum at row " + std::to_string(i));
    rows[i] = r / sum(r);
  }
  return from_rows(rows);
}

struct AugmentedAffinity {
  Tensor a_audio, a_static, a_dynamic;  // each [B x B], row-stochastic
};

inline Tensor build_affinity(const Tensor& x, const ClmHyper& hy) {
  hy.validate(x.shape()[0]);
  return row_normalize(topk_filter(similarity_matrix(x, hy.tau_clm), hy.k));
}

inline AugmentedAffinity build_augmented_affinity(const Tensor& x_audio,
                                                  const Tensor& x_static,
                                                  const Tensor& x_dynamic,
                                                  const ClmHyper& hy) {
  const std::size_t b = x_audio.shape()[0];
  if (x_static.shape()[0] != b || x_dynamic.shape()[0] != b)
    throw TensorError("build_augmented_affinity: batch size mismatch");
  return {build_affinity(x_audio, hy), build_affinity(x_static, hy),
          build_affinity(x_dynamic, hy)};
}

// F_m = A_m . X_m per modality, concatenated along features to [B x 3d].
inline Tensor message_pass(const AugmentedAffinity& a, const Tensor& x_audio,
                           const Tensor& x_static, const Tensor& x_dynamic) {
  Tensor f_a = matmul(a.a_audio, x_audio);
  Tensor f_s = matmul(a.a_static, x_static);
  Tensor f_d = matmul(a.a_dynamic, x_dynamic);
  const std::size_t b = f_a.shape()[0];
  std::vector<Tensor> rows(b);
  for (std::size_t i = 0; i < b; ++i)
    rows[i] = concat({row(f_a, i), row(f_s, i), row(f_d, i)});
  return from_rows(rows);
}

struct ModalityIntervention {
  Tensor mu;         // [d]
  Tensor log_sigma;  // [d]

  Tensor sigma() const { return exp(log_sigma); }

  ParamList params(const std::string& prefix) const {
    return {{prefix + ".mu", mu}, {prefix + ".log_sigma", log_sigma}};
  }
};

struct InterventionParams {
  ModalityIntervention audio, stat, dyn;
  std::size_t n_mc = 1;

  void validate() const {
    if (n_mc < 1) throw TensorError("InterventionParams: n_mc >= 1 required");
  }

  ParamList params(const std::string& prefix) const {
    ParamList out;
    append_params(out, audio.params(".audio"), prefix);
    append_params(out, stat.params(".static"), prefix);
    append_params(out, dyn.params(".dynamic"), prefix);
    return out;
  }
};

// X*[i] = sigma (.) W[i] + mu. The original features matter only for shape.
inline Tensor intervene(const Tensor& x_m, const Tensor& mu, const Tensor& sigma,
                        const Tensor& w) {
  if (w.shape() != x_m.shape())
    throw TensorError("intervene: W shape must match the features");
  const std::size_t b = x_m.shape()[0], d = x_m.shape()[1];
  if (mu.numel() != d || sigma.numel() != d)
    throw TensorError("intervene: parameter width mismatch");
  std::vector<Tensor> rows(b);
  for (std::size_t i = 0; i < b; ++i) rows[i] = sigma * row(w, i) + mu;
  return from_rows(rows);
}

// Fusion (two stacked MLPs on the paired transferred features and the
// question) plus the two-way classifier head.
struct ClmParams {
  Mlp mlp2;           // [6d] -> hidden -> d_fuse
  Mlp mlp1;           // [d_fuse + d_q] -> hidden -> d_fuse
  Linear classifier;  // d_fuse -> 2
  InterventionParams iv;

  std::size_t d = 0, d_q = 0, d_fuse = 0;

  ClmParams() = default;
  ClmParams(std::size_t d_in, std::size_t dq, std::size_t hidden, Rng& rng)
      : mlp2(6 * d_in, hidden, hidden, rng),
        mlp1(hidden + dq, hidden, hidden, rng),
        classifier(hidden, 2, rng),
        d(d_in),
        d_q(dq),
        d_fuse(hidden) {
    iv.audio = {Tensor::param({d_in}, std::vector<double>(d_in, 0.0)),
                Tensor::param({d_in}, std::vector<double>(d_in, 0.0))};
    iv.stat = {Tensor::param({d_in}, std::vector<double>(d_in, 0.0)),
               Tensor::param({d_in}, std::vector<double>(d_in, 0.0))};
    iv.dyn = {Tensor::param({d_in}, std::vector<double>(d_in, 0.0)),
              Tensor::param({d_in}, std::vector<double>(d_in, 0.0))};
  }

  static ClmParams zeros(std::size_t d_in, std::size_t dq, std::size_t hidden) {
    Rng rng(0);
    ClmParams p(d_in, dq, hidden, rng);
    p.mlp2 = Mlp::zeros(6 * d_in, hidden, hidden);
    p.mlp1 = Mlp::zeros(hidden + dq, hidden, hidden);
    p.classifier = Linear::zeros(hidden, 2);
    return p;
  }

  ParamList params(const std::string& prefix) const {
    ParamList out;
    append_params(out, mlp2.params(".mlp2"), prefix);
    append_params(out, mlp1.params(".mlp1"), prefix);
    append_params(out, classifier.params(".classifier"), prefix);
    append_params(out, iv.params(".iv"), prefix);
    return out;
  }
};

// MLP1(MLP2(F1 || F2) || X_t).
inline Tensor fuse(const ClmParams& p, const Tensor& f1, const Tensor& f2,
                   const Tensor& x_t) {
  Tensor inner = p.mlp2(concat(f1, f2));
  return p.mlp1(concat(inner, x_t));
}

inline Tensor classify(const ClmParams& p, const Tensor& hidden) {
  return p.classifier(hidden);
}

// Per-episode logits from transferred features F [2B x 3d] where rows
// 0..B-1 are object 1 and B..2B-1 are object 2, with questions X_q [B x d_q].
inline std::vector<Tensor> episode_logits(const ClmParams& p, const Tensor& f,
                                          const Tensor& x_q) {
  const std::size_t n = f.shape()[0];
  if (n % 2 != 0) throw TensorError("episode_logits: even row count required");
  const std::size_t b = n / 2;
  if (x_q.shape()[0] != b)
    throw TensorError("episode_logits: question batch size mismatch");
  std::vector<Tensor> out(b);
  for (std::size_t e = 0; e < b; ++e)
    out[e] = classify(p, fuse(p, row(f, e), row(f, b + e), row(x_q, e)));
  return out;
}

// Factual minus the mean of the counterfactual logits, accumulated as
// per-sample differences so that counterfactuals identical to the factual
// branch cancel exactly.
inline Tensor tie(const Tensor& logits_factual,
                  const std::vector<Tensor>& logits_cf) {
  if (logits_cf.empty())
    throw TensorError("tie: at least one counterfactual sample required");
  Tensor acc = Tensor::zeros(logits_factual.shape());
  for (const auto& l : logits_cf) acc = acc + (logits_factual - l);
  return acc / static_cast<double>(logits_cf.size());
}

// Softmax cross-entropy of the TIE logits against the one-hot label.
inline Tensor tie_loss(const Tensor& tie_logits, std::size_t label) {
  if (tie_logits.numel() != 2) throw TensorError("tie_loss: two logits required");
  if (label > 1) throw TensorError("tie_loss: label must be 0 or 1");
  std::vector<Tensor> entries{pick(tie_logits, 0), pick(tie_logits, 1)};
  return logsumexp(entries) - pick(tie_logits, label);
}

}  // namespace rdcl
