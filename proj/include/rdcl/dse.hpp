#pragma once

// Disentangled sequential encoder: factorizes a feature sequence into a
// static factor s and dynamic factors z_{1:T} with a sequential VAE,
// regularized by contrastive mutual-information estimators. The DSE+ variant
// adds hinge contrastive losses between the two objects of a pair.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "rdcl/nn.hpp"
#include "rdcl/rng.hpp"
#include "rdcl/tensor.hpp"

namespace rdcl {

using FeatureSeq = std::vector<Tensor>;  // T frames of [d]

struct GaussianParams {
  Tensor mu;
  Tensor log_sigma;

  Tensor sigma() const { return exp(log_sigma); }
};

// Closed-form KL between diagonal Gaussians, summed over dimensions.
inline Tensor kl_gaussian(const GaussianParams& q, const GaussianParams& p) {
  if (q.mu.numel() != p.mu.numel())
    throw TensorError("kl_gaussian: dimension mismatch");
  Tensor sq = q.sigma();
  Tensor sp = p.sigma();
  Tensor dmu = q.mu - p.mu;
  Tensor term = (p.log_sigma - q.log_sigma) +
                (sq * sq + dmu * dmu) / (sp * sp * 2.0) - 0.5;
  return sum(term);
}

// Log-density of a diagonal Gaussian at x.
inline Tensor gaussian_log_density(const Tensor& x, const GaussianParams& g) {
  static const double kLogTwoPi = std::log(2.0 * 3.141592653589793238462643);
  Tensor d = x - g.mu;
  Tensor s = g.sigma();
  Tensor term = g.log_sigma * -1.0 - 0.5 * kLogTwoPi - (d * d) / (s * s * 2.0);
  return sum(term);
}

struct DseHyper {
  double gamma = 1.0;   // weight of KL and MI-with-data terms
  double theta = 0.25;  // weight of the I(z;s) penalty
  double tau = 0.5;     // contrastive temperature
  double delta = 0.2;   // hinge margin of the pairwise contrastive losses
  double motion_noise_std = 0.1;
  std::size_t T = 8;
  std::size_t d = 16;
  std::size_t d_lat = 8;
  std::size_t hidden = 24;  // LSTM hidden width

  void validate() const {
    if (tau <= 0) throw TensorError("DseHyper: tau must be positive");
    if (delta < 0 || delta >= 1)
      throw TensorError("DseHyper: delta must lie in [0, 1)");
    if (gamma < 0 || theta < 0)
      throw TensorError("DseHyper: gamma and theta must be nonnegative");
  }
};

struct LatentFactors {
  Tensor s;                             // [d_lat]
  std::vector<Tensor> z;                // T x [d_lat]
  GaussianParams q_s;
  std::vector<GaussianParams> q_z;      // per step
  std::vector<double> eps_s;            // stored sampling noise
  std::vector<std::vector<double>> eps_z;

  Tensor z_flat() const {
    std::vector<Tensor> parts(z.begin(), z.end());
    return concat(parts);
  }
  Tensor z_last() const { return z.back(); }
  Tensor q_z_mu_flat() const {
    std::vector<Tensor> parts;
    for (const auto& g : q_z) parts.push_back(g.mu);
    return concat(parts);
  }
  Tensor q_z_log_sigma_flat() const {
    std::vector<Tensor> parts;
    for (const auto& g : q_z) parts.push_back(g.log_sigma);
    return concat(parts);
  }
};

struct DseParams {
  // Posterior Bi-LSTM over the input sequence.
  LstmCellParams post_fwd, post_bwd;
  // Static heads on [h_fwd_T || h_bwd_1].
  Linear mu_s, logsig_s;
  // Dynamic posterior: recurrent cell over (bilstm hidden at t || z_{t-1}).
  LstmCellParams z_cell;
  Linear mu_z, logsig_z;
  // Learned prior p(z_t | z_{<t}): causal LSTM over z, z_0 = 0.
  LstmCellParams prior_cell;
  Linear mu_p, logsig_p;
  // Time-shared decoder MLP on (z_t || s).
  Mlp decoder;

  std::size_t d = 0, d_lat = 0, hidden = 0;

  DseParams() = default;
  DseParams(const DseHyper& hy, Rng& rng)
      : post_fwd(hy.d, hy.hidden, rng),
        post_bwd(hy.d, hy.hidden, rng),
        mu_s(2 * hy.hidden, hy.d_lat, rng),
        logsig_s(2 * hy.hidden, hy.d_lat, rng),
        z_cell(2 * hy.hidden + hy.d_lat, hy.hidden, rng),
        mu_z(hy.hidden, hy.d_lat, rng),
        logsig_z(hy.hidden, hy.d_lat, rng),
        prior_cell(hy.d_lat, hy.hidden, rng),
        mu_p(hy.hidden, hy.d_lat, rng),
        logsig_p(hy.hidden, hy.d_lat, rng),
        decoder(2 * hy.d_lat, hy.d, hy.d, rng),
        d(hy.d),
        d_lat(hy.d_lat),
        hidden(hy.hidden) {
    // Posterior sigmas start small (e^-2), otherwise early reconstruction
    // gradients teach the decoder to ignore the noisy latents and the
    // posteriors collapse before they become informative.
    for (double& v : logsig_s.bias.data_mut()) v = -2.0;
    for (double& v : logsig_z.bias.data_mut()) v = -2.0;
  }

  static DseParams zeros(const DseHyper& hy) {
    DseParams p;
    p.post_fwd = LstmCellParams::zeros(hy.d, hy.hidden);
    p.post_bwd = LstmCellParams::zeros(hy.d, hy.hidden);
    p.mu_s = Linear::zeros(2 * hy.hidden, hy.d_lat);
    p.logsig_s = Linear::zeros(2 * hy.hidden, hy.d_lat);
    p.z_cell = LstmCellParams::zeros(2 * hy.hidden + hy.d_lat, hy.hidden);
    p.mu_z = Linear::zeros(hy.hidden, hy.d_lat);
    p.logsig_z = Linear::zeros(hy.hidden, hy.d_lat);
    p.prior_cell = LstmCellParams::zeros(hy.d_lat, hy.hidden);
    p.mu_p = Linear::zeros(hy.hidden, hy.d_lat);
    p.logsig_p = Linear::zeros(hy.hidden, hy.d_lat);
    p.decoder = Mlp::zeros(2 * hy.d_lat, hy.d, hy.d);
    p.d = hy.d;
    p.d_lat = hy.d_lat;
    p.hidden = hy.hidden;
    return p;
  }

  ParamList params(const std::string& prefix) const {
    ParamList out;
    append_params(out, post_fwd.params(".post_fwd"), prefix);
    append_params(out, post_bwd.params(".post_bwd"), prefix);
    append_params(out, mu_s.params(".mu_s"), prefix);
    append_params(out, logsig_s.params(".logsig_s"), prefix);
    append_params(out, z_cell.params(".z_cell"), prefix);
    append_params(out, mu_z.params(".mu_z"), prefix);
    append_params(out, logsig_z.params(".logsig_z"), prefix);
    append_params(out, prior_cell.params(".prior_cell"), prefix);
    append_params(out, mu_p.params(".mu_p"), prefix);
    append_params(out, logsig_p.params(".logsig_p"), prefix);
    append_params(out, decoder.params(".decoder"), prefix);
    return out;
  }
};

// q(s|x_{1:T}) and q(z_t|z_{<t}, x_{<=t}) with reparameterized samples using
// the supplied noise. Deterministic and differentiable given fixed epsilons.
inline LatentFactors encode_with_eps(
    const DseParams& p, const FeatureSeq& x, const std::vector<double>& eps_s,
    const std::vector<std::vector<double>>& eps_z) {
  if (x.empty()) throw TensorError("encode: empty sequence");
  const std::size_t T = x.size(), h = p.hidden, dl = p.d_lat;
  if (eps_s.size() != dl || eps_z.size() != T)
    throw TensorError("encode: epsilon shapes disagree");

  auto hs = bilstm_forward(p.post_fwd, p.post_bwd, x);
  // Final hidden states of both directions, concatenated.
  Tensor static_in = concat(slice(hs[T - 1], 0, h), slice(hs[0], h, h));

  LatentFactors lat;
  lat.q_s = {p.mu_s(static_in), p.logsig_s(static_in)};
  lat.eps_s = eps_s;
  lat.s = lat.q_s.mu + lat.q_s.sigma() * Tensor::from({dl}, eps_s);

  LstmState st = lstm_zero_state(h);
  Tensor z_prev = Tensor::zeros({dl});
  for (std::size_t t = 0; t < T; ++t) {
    if (eps_z[t].size() != dl) throw TensorError("encode: epsilon shapes disagree");
    st = lstm_cell(p.z_cell, concat(hs[t], z_prev), st);
    GaussianParams q{p.mu_z(st.h), p.logsig_z(st.h)};
    Tensor z_t = q.mu + q.sigma() * Tensor::from({dl}, eps_z[t]);
    lat.q_z.push_back(q);
    lat.z.push_back(z_t);
    lat.eps_z.push_back(eps_z[t]);
    z_prev = z_t;
  }
  return lat;
}

inline LatentFactors encode(const DseParams& p, const FeatureSeq& x, Rng& rng) {
  std::vector<double> eps_s = rng.gaussian_vec(p.d_lat);
  std::vector<std::vector<double>> eps_z;
  eps_z.reserve(x.size());
  for (std::size_t t = 0; t < x.size(); ++t)
    eps_z.push_back(rng.gaussian_vec(p.d_lat));
  return encode_with_eps(p, x, eps_s, eps_z);
}

// N(mu(z_{<t}), sigma^2(z_{<t})) from the prior LSTM; an empty prefix means
// only z_0 = 0 has been consumed.
inline GaussianParams prior_step_params(const DseParams& p,
                                        const std::vector<Tensor>& z_prefix) {
  LstmState st = lstm_zero_state(p.hidden);
  st = lstm_cell(p.prior_cell, Tensor::zeros({p.d_lat}), st);  // z_0
  for (const auto& z : z_prefix) st = lstm_cell(p.prior_cell, z, st);
  return {p.mu_p(st.h), p.logsig_p(st.h)};
}

// Prior params for every step along a sampled z path, sharing one recurrent
// sweep (prior_step_params repeated, without the re-runs).
inline std::vector<GaussianParams> prior_path_params(
    const DseParams& p, const std::vector<Tensor>& z) {
  std::vector<GaussianParams> out;
  LstmState st = lstm_zero_state(p.hidden);
  st = lstm_cell(p.prior_cell, Tensor::zeros({p.d_lat}), st);
  for (std::size_t t = 0; t < z.size(); ++t) {
    out.push_back({p.mu_p(st.h), p.logsig_p(st.h)});
    if (t + 1 < z.size()) st = lstm_cell(p.prior_cell, z[t], st);
  }
  return out;
}

// x_hat_t = decoder(z_t || s), weights shared across time.
inline FeatureSeq decode(const DseParams& p, const LatentFactors& lat) {
  FeatureSeq out;
  out.reserve(lat.z.size());
  for (const auto& z_t : lat.z) out.push_back(p.decoder(concat(z_t, lat.s)));
  return out;
}

// phi(a, b) = exp(cos(a, b) / tau).
inline Tensor contrastive_score(const Tensor& z, const Tensor& x, double tau) {
  if (tau <= 0) throw TensorError("contrastive_score: tau must be positive");
  return exp(cosine(z, x) / tau);
}

// log phi(anchor,pos) / (phi(anchor,pos) + sum_j phi(anchor,neg_j)).
// Computed in log space; strictly negative.
inline Tensor contrastive_mi(const Tensor& anchor, const Tensor& positive,
                             const std::vector<Tensor>& negatives, double tau) {
  if (negatives.empty())
    throw TensorError("contrastive_mi: at least one negative required");
  if (tau <= 0) throw TensorError("contrastive_mi: tau must be positive");
  Tensor pos_logit = cosine(anchor, positive) / tau;
  std::vector<Tensor> logits{pos_logit};
  for (const auto& n : negatives) logits.push_back(cosine(anchor, n) / tau);
  return pos_logit - logsumexp(logits);
}

// Uniformly random permutation of the frames; the frame multiset is
// preserved, destroying temporal order while keeping content.
inline FeatureSeq content_augment(const FeatureSeq& x, Rng& rng) {
  if (x.size() < 2) throw TensorError("content_augment: T >= 2 required");
  auto perm = rng.permutation(x.size());
  FeatureSeq out(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) out[t] = x[perm[t]];
  return out;
}

// Feature-level stand-in for frame blur: per-frame additive Gaussian noise,
// temporal order preserved.
inline FeatureSeq motion_augment(const FeatureSeq& x, Rng& rng,
                                 double noise_std) {
  if (noise_std < 0) throw TensorError("motion_augment: noise_std must be >= 0");
  FeatureSeq out;
  out.reserve(x.size());
  for (const auto& frame : x) {
    Tensor noise = Tensor::from(frame.shape(),
                                rng.gaussian_vec(frame.numel(), 0.0, noise_std));
    out.push_back(frame + noise);
  }
  return out;
}

// Batch contrastive MI estimates. Positives are the latents of the augmented
// view of the same sample (motion-augmented for z, content-augmented for s);
// negatives are the other batch members' latents.
inline std::pair<Tensor, Tensor> mi_terms(
    const std::vector<LatentFactors>& lat,
    const std::vector<LatentFactors>& lat_content,
    const std::vector<LatentFactors>& lat_motion, const DseHyper& hy) {
  const std::size_t B = lat.size();
  if (B < 2) throw TensorError("mi_terms: batch size >= 2 required");
  if (lat_content.size() != B || lat_motion.size() != B)
    throw TensorError("mi_terms: augmented batch size mismatch");

  std::vector<Tensor> z_flat(B), zm_flat(B), s(B), sc(B);
  for (std::size_t i = 0; i < B; ++i) {
    z_flat[i] = lat[i].z_flat();
    zm_flat[i] = lat_motion[i].z_flat();
    s[i] = lat[i].s;
    sc[i] = lat_content[i].s;
  }

  auto batch_term = [&](const std::vector<Tensor>& anchors,
                        const std::vector<Tensor>& positives,
                        const std::vector<Tensor>& negative_pool) {
    Tensor acc = Tensor::scalar(0.0);
    for (std::size_t i = 0; i < B; ++i) {
      std::vector<Tensor> negs;
      for (std::size_t j = 0; j < B; ++j)
        if (j != i) negs.push_back(negative_pool[j]);
      acc = acc + contrastive_mi(anchors[i], positives[i], negs, hy.tau);
    }
    return acc / static_cast<double>(B);
  };

  Tensor c_z = batch_term(z_flat, zm_flat, z_flat);
  Tensor c_zm = batch_term(zm_flat, z_flat, z_flat);
  Tensor c_s = batch_term(s, sc, s);
  Tensor c_sc = batch_term(sc, s, s);
  return {(c_z + c_zm) * 0.5, (c_s + c_sc) * 0.5};
}

// Mini-batch aggregated-posterior estimate of I(z_{1:T}; s):
//   (1/B) sum_i [ log q^(z_i, s_i) - log q^(z_i) - log q^(s_i) ]
// with q^ the batch mixture of per-sample posteriors evaluated at the drawn
// samples. Biased for small B.
inline Tensor mi_zs_penalty(const std::vector<LatentFactors>& lat) {
  const std::size_t B = lat.size();
  if (B < 2) throw TensorError("mi_zs_penalty: batch size >= 2 required");

  std::vector<Tensor> z(B), s(B);
  std::vector<GaussianParams> qz(B), qs(B);
  for (std::size_t i = 0; i < B; ++i) {
    z[i] = lat[i].z_flat();
    s[i] = lat[i].s;
    qz[i] = {lat[i].q_z_mu_flat(), lat[i].q_z_log_sigma_flat()};
    qs[i] = lat[i].q_s;
  }

  const double log_b = std::log(static_cast<double>(B));
  Tensor acc = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < B; ++i) {
    std::vector<Tensor> lz, ls, ljoint;
    for (std::size_t j = 0; j < B; ++j) {
      Tensor a = gaussian_log_density(z[i], qz[j]);
      Tensor b = gaussian_log_density(s[i], qs[j]);
      lz.push_back(a);
      ls.push_back(b);
      ljoint.push_back(a + b);
    }
    Tensor log_joint = logsumexp(ljoint) - log_b;
    Tensor log_z = logsumexp(lz) - log_b;
    Tensor log_s = logsumexp(ls) - log_b;
    acc = acc + (log_joint - log_z - log_s);
  }
  return acc / static_cast<double>(B);
}

using LossComponents = std::map<std::string, double>;

struct DseLossResult {
  Tensor loss;
  LossComponents components;
  std::vector<LatentFactors> latents;  // reused downstream by the CLM
};

// L_DSE = recon + gamma (KL_s + KL_z) - gamma (I_z + I_s) + theta I(z;s),
// recon = 1/2 sum_t ||x_t - x_hat_t||^2, averaged over the batch.
inline DseLossResult dse_loss(const DseParams& p,
                              const std::vector<FeatureSeq>& batch,
                              const DseHyper& hy, Rng rng) {
  hy.validate();
  const std::size_t B = batch.size();
  if (B < 2) throw TensorError("dse_loss: batch size >= 2 required");

  std::vector<LatentFactors> lat(B), lat_c(B), lat_m(B);
  for (std::size_t i = 0; i < B; ++i) {
    lat[i] = encode(p, batch[i], rng);
    lat_c[i] = encode(p, content_augment(batch[i], rng), rng);
    lat_m[i] = encode(p, motion_augment(batch[i], rng, hy.motion_noise_std), rng);
  }

  Tensor recon = Tensor::scalar(0.0);
  Tensor kl_s = Tensor::scalar(0.0);
  Tensor kl_z = Tensor::scalar(0.0);
  GaussianParams std_normal{Tensor::zeros({p.d_lat}), Tensor::zeros({p.d_lat})};
  for (std::size_t i = 0; i < B; ++i) {
    FeatureSeq xh = decode(p, lat[i]);
    for (std::size_t t = 0; t < batch[i].size(); ++t)
      recon = recon + squared_norm(batch[i][t] - xh[t]) * 0.5;
    kl_s = kl_s + kl_gaussian(lat[i].q_s, std_normal);
    auto priors = prior_path_params(p, lat[i].z);
    for (std::size_t t = 0; t < priors.size(); ++t)
      kl_z = kl_z + kl_gaussian(lat[i].q_z[t], priors[t]);
  }
  recon = recon / static_cast<double>(B);
  kl_s = kl_s / static_cast<double>(B);
  kl_z = kl_z / static_cast<double>(B);

  auto [i_z, i_s] = mi_terms(lat, lat_c, lat_m, hy);
  Tensor i_zs = mi_zs_penalty(lat);

  Tensor loss = recon + (kl_s + kl_z) * hy.gamma - (i_z + i_s) * hy.gamma +
                i_zs * hy.theta;

  DseLossResult out;
  out.loss = loss;
  out.components = {{"recon", recon.item()},   {"kl_s", kl_s.item()},
                    {"kl_z", kl_z.item()},     {"mi_z", i_z.item()},
                    {"mi_s", i_s.item()},      {"mi_zs", i_zs.item()}};
  out.latents = std::move(lat);
  return out;
}

// Hinge contrastive losses between the paired objects' factors.
// z1, z2 are the dynamic summaries (last-step z).
inline std::pair<Tensor, Tensor> pair_contrastive_losses(const Tensor& s1,
                                                         const Tensor& s2,
                                                         const Tensor& z1,
                                                         const Tensor& z2,
                                                         double delta) {
  Tensor l_s = max_with_scalar(cosine(s1, s2) - delta, 0.0);
  Tensor l_z = max_with_scalar(cosine(z1, z2) - delta, 0.0);
  return {l_s, l_z};
}

struct DsePlusLossResult {
  Tensor loss;
  LossComponents components;
  // Latents ordered [pair0.obj1, pair0.obj2, pair1.obj1, ...] interleaved
  // as passed; here: first all obj1 sequences, then all obj2.
  std::vector<LatentFactors> latents;
};

// L_DSE+ over a paired batch: L_DSE over the 2B flattened sequences plus the
// pairwise hinge terms (batch-averaged).
inline DsePlusLossResult dse_plus_loss(
    const DseParams& p, const std::vector<std::pair<FeatureSeq, FeatureSeq>>& pairs,
    const DseHyper& hy, Rng rng, bool enable_pair_contrastive = true) {
  const std::size_t B = pairs.size();
  if (B == 0) throw TensorError("dse_plus_loss: empty batch");
  std::vector<FeatureSeq> flat;
  flat.reserve(2 * B);
  for (const auto& pr : pairs) flat.push_back(pr.first);
  for (const auto& pr : pairs) flat.push_back(pr.second);

  DseLossResult base = dse_loss(p, flat, hy, rng);

  Tensor contra_s = Tensor::scalar(0.0);
  Tensor contra_z = Tensor::scalar(0.0);
  if (enable_pair_contrastive) {
    for (std::size_t i = 0; i < B; ++i) {
      auto [ls, lz] = pair_contrastive_losses(
          base.latents[i].s, base.latents[B + i].s, base.latents[i].z_last(),
          base.latents[B + i].z_last(), hy.delta);
      contra_s = contra_s + ls;
      contra_z = contra_z + lz;
    }
    contra_s = contra_s / static_cast<double>(B);
    contra_z = contra_z / static_cast<double>(B);
  }

  DsePlusLossResult out;
  out.loss = base.loss + contra_s + contra_z;
  out.components = base.components;
  out.components["contra_s"] = contra_s.item();
  out.components["contra_z"] = contra_z.item();
  out.latents = std::move(base.latents);
  return out;
}

}  // namespace rdcl
