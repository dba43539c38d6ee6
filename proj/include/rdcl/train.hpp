#pragma once

// Training and evaluation driver: batch-wise DCL and RDCL steps, Adam/SGD,
// accuracy evaluation with Monte-Carlo counterfactuals, linear probes of the
// disentangled factors, and metrics records.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rdcl/clm.hpp"
#include "rdcl/config.hpp"
#include "rdcl/dse.hpp"
#include "rdcl/imlm.hpp"
#include "rdcl/io.hpp"
#include "rdcl/synth.hpp"
#include "rdcl/tensor.hpp"

namespace rdcl {

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t epochs = 20;
  double learning_rate = 5e-3;
  std::string optimizer = "adam";  // adam | sgd
  std::string mode = "dcl";        // dcl | rdcl
  DseHyper dse;
  ClmHyper clm;
  std::size_t n_mc_train = 1;
  std::size_t n_mc_eval = 5;
  double alpha_audio = 0.0;
  double alpha_video = 0.0;
  std::uint64_t seed = 1;
  bool pair_contrastive = true;   // the DSE+ hinge terms
  bool dead_projection = false;   // keep f_pro identically zero (equivalence runs)
  std::size_t d_r = 0;            // shared/unique width; 0 means d
  std::size_t clm_hidden = 32;

  void validate() const {
    if (batch_size < 2)
      throw ConfigError("batch_size must be >= 2 (graphs and negatives)");
    if (alpha_audio < 0 || alpha_audio > 1 || alpha_video < 0 ||
        alpha_video > 1)
      throw ConfigError("missing ratios must lie in [0, 1]");
    // mode=dcl trains with no missing data regardless of the alphas; the
    // configured ratios still apply at evaluation in both modes.
    if (mode != "dcl" && mode != "rdcl")
      throw ConfigError("mode must be dcl or rdcl");
    if (optimizer != "adam" && optimizer != "sgd")
      throw ConfigError("optimizer must be adam or sgd");
    if (n_mc_train < 1 || n_mc_eval < 1)
      throw ConfigError("Monte-Carlo sample counts must be >= 1");
    if (clm.k > 2 * batch_size)
      throw ConfigError("clm k exceeds the object count of a batch");
    dse.validate();
  }

  std::size_t dr() const { return d_r == 0 ? dse.d : d_r; }
};

inline const std::set<std::string>& train_config_keys() {
  static const std::set<std::string> keys{
      "batch_size",   "epochs",        "learning_rate", "optimizer",
      "mode",         "seed",          "n_mc_train",    "n_mc_eval",
      "alpha_audio",  "alpha_video",   "pair_contrastive",
      "dead_projection", "d_r",        "clm_hidden",
      "dse.gamma",    "dse.theta",     "dse.tau",       "dse.delta",
      "dse.motion_noise_std", "dse.T", "dse.d",         "dse.d_lat",
      "dse.hidden",   "clm.tau_clm",   "clm.k",
      "data.n_episodes", "data.n_static_classes", "data.n_dynamic_classes",
      "data.noise_std", "data.train_fraction", "data.path",
      "out.metrics",  "out.summary",   "out.checkpoint"};
  return keys;
}

inline void reject_unknown_keys(const ConfigMap& m) {
  const auto& known = train_config_keys();
  for (const auto& [key, value] : m) {
    if (!known.count(key)) {
      std::string msg = "unknown config key '" + key + "'; valid keys:";
      for (const auto& k : known) msg += " " + k;
      throw ConfigError(msg);
    }
  }
}

inline TrainConfig train_config_from_map(const ConfigMap& m) {
  reject_unknown_keys(m);
  TrainConfig c;
  c.batch_size = static_cast<std::size_t>(cfg_int(m, "batch_size", 16));
  c.epochs = static_cast<std::size_t>(cfg_int(m, "epochs", 20));
  c.learning_rate = cfg_double(m, "learning_rate", 5e-3);
  c.optimizer = cfg_str(m, "optimizer", "adam");
  c.mode = cfg_str(m, "mode", "dcl");
  c.seed = static_cast<std::uint64_t>(cfg_int(m, "seed", 1));
  c.n_mc_train = static_cast<std::size_t>(cfg_int(m, "n_mc_train", 1));
  c.n_mc_eval = static_cast<std::size_t>(cfg_int(m, "n_mc_eval", 5));
  c.alpha_audio = cfg_double(m, "alpha_audio", 0.0);
  c.alpha_video = cfg_double(m, "alpha_video", 0.0);
  c.pair_contrastive = cfg_bool(m, "pair_contrastive", true);
  c.dead_projection = cfg_bool(m, "dead_projection", false);
  c.d_r = static_cast<std::size_t>(cfg_int(m, "d_r", 0));
  c.clm_hidden = static_cast<std::size_t>(cfg_int(m, "clm_hidden", 32));
  c.dse.gamma = cfg_double(m, "dse.gamma", 0.1);
  c.dse.theta = cfg_double(m, "dse.theta", 0.25);
  c.dse.tau = cfg_double(m, "dse.tau", 0.5);
  c.dse.delta = cfg_double(m, "dse.delta", 0.2);
  c.dse.motion_noise_std = cfg_double(m, "dse.motion_noise_std", 0.1);
  c.dse.T = static_cast<std::size_t>(cfg_int(m, "dse.T", 8));
  c.dse.d = static_cast<std::size_t>(cfg_int(m, "dse.d", 16));
  c.dse.d_lat = static_cast<std::size_t>(cfg_int(m, "dse.d_lat", 8));
  c.dse.hidden = static_cast<std::size_t>(cfg_int(m, "dse.hidden", 24));
  c.clm.tau_clm = cfg_double(m, "clm.tau_clm", 2.0);
  c.clm.k = static_cast<std::size_t>(cfg_int(m, "clm.k", 5));
  c.validate();
  return c;
}

// --- optimizer -------------------------------------------------------------

struct Optimizer {
  double lr = 1e-3;
  bool adam = true;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::size_t t = 0;
  std::vector<std::vector<double>> m, v;

  Optimizer() = default;
  Optimizer(double learning_rate, const std::string& kind)
      : lr(learning_rate), adam(kind == "adam") {}

  void step(ParamList& params) {
    if (adam && m.empty()) {
      for (const auto& [name, p] : params) {
        m.emplace_back(p.numel(), 0.0);
        v.emplace_back(p.numel(), 0.0);
      }
    }
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = params[i].second;
      if (!p.has_grad()) continue;
      const auto& g = p.grad();
      auto& data = p.data_mut();
      if (!adam) {
        for (std::size_t j = 0; j < data.size(); ++j) data[j] -= lr * g[j];
        continue;
      }
      for (std::size_t j = 0; j < data.size(); ++j) {
        m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * g[j];
        v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * g[j] * g[j];
        const double mh = m[i][j] / bc1;
        const double vh = v[i][j] / bc2;
        data[j] -= lr * mh / (std::sqrt(vh) + eps);
      }
    }
  }
};

// --- model -----------------------------------------------------------------

struct Model {
  DseParams dse;
  ClmParams clm;
  ImlmParams imlm;
  bool iv_initialized = false;

  Model() = default;
  Model(const TrainConfig& cfg, Rng& rng)
      : dse(cfg.dse, rng),
        clm(cfg.dse.d, cfg.dse.d, cfg.clm_hidden, rng),
        imlm(cfg.dse.d, cfg.dr(), rng, cfg.dead_projection) {}

  ParamList params(bool include_imlm) const {
    ParamList out = dse.params("dse");
    append_params(out, clm.params(""), "clm");
    if (include_imlm) append_params(out, imlm.params(""), "imlm");
    return out;
  }
};

// --- batch assembly ----------------------------------------------------------

namespace detail_train {

// RNG purpose tags.
inline constexpr std::uint64_t kTagShuffle = 11;
inline constexpr std::uint64_t kTagEps = 12;
inline constexpr std::uint64_t kTagIntervention = 13;
inline constexpr std::uint64_t kTagMissing = 14;
inline constexpr std::uint64_t kTagEval = 15;

inline FeatureSeq to_feature_seq(const FeatureSeqData& frames) {
  FeatureSeq seq;
  seq.reserve(frames.size());
  for (const auto& f : frames) seq.push_back(Tensor::from({f.size()}, f));
  return seq;
}

inline FeatureSeq zero_feature_seq(std::size_t T, std::size_t d) {
  FeatureSeq seq;
  for (std::size_t t = 0; t < T; ++t) seq.push_back(Tensor::zeros({d}));
  return seq;
}

// Pad a latent vector with zeros up to the feature width.
inline Tensor pad_to(const Tensor& v, std::size_t d) {
  if (v.numel() == d) return v;
  if (v.numel() > d)
    throw TensorError("pad_to: latent wider than the feature width");
  return concat(v, Tensor::zeros({d - v.numel()}));
}

// Affinity graphs cannot take zero-norm rows (cosine is undefined); missing
// or untrained-empty features are replaced by a fixed unit token for graph
// construction only. Message passing still uses the true features.
inline Tensor graph_safe_rows(const Tensor& x) {
  const std::size_t b = x.shape()[0], d = x.shape()[1];
  bool any_zero = false;
  const auto& vals = x.data();
  std::vector<bool> zero_row(b, false);
  for (std::size_t i = 0; i < b; ++i) {
    double sq = 0;
    for (std::size_t j = 0; j < d; ++j) sq += vals[i * d + j] * vals[i * d + j];
    if (sq == 0.0) {
      zero_row[i] = true;
      any_zero = true;
    }
  }
  if (!any_zero) return x;
  std::vector<double> token(d, 0.0);
  token[0] = 1.0;
  Tensor token_t = Tensor::from({d}, token);
  std::vector<Tensor> rows(b);
  for (std::size_t i = 0; i < b; ++i)
    rows[i] = zero_row[i] ? token_t : row(x, i);
  return from_rows(rows);
}

inline bool contains(const std::vector<std::size_t>& sorted, std::size_t x) {
  return std::binary_search(sorted.begin(), sorted.end(), x);
}

}  // namespace detail_train

struct BatchResult {
  Tensor loss;
  LossComponents components;
  std::vector<std::size_t> predictions;  // argmax per episode
  std::vector<std::size_t> labels;
  std::vector<std::size_t> properties;   // queried property per episode
};

// One full forward pass over a batch of episodes. `rdcl` toggles the IMLM
// path; missing masks are drawn from rng_miss over the 2B objects.
inline BatchResult batch_forward(Model& model, const Dataset& ds,
                                 const std::vector<std::size_t>& idx,
                                 const TrainConfig& cfg, Rng rng_eps,
                                 Rng rng_iv, Rng rng_miss, bool training) {
  const std::size_t B = idx.size();
  if (B < 2) throw TensorError("batch_forward: at least two episodes required");
  const std::size_t n_obj = 2 * B;
  const std::size_t d = ds.spec.d, T = ds.spec.T;
  const bool rdcl = cfg.mode == "rdcl";
  const double alpha_a = rdcl || !training ? cfg.alpha_audio : 0.0;
  const double alpha_v = rdcl || !training ? cfg.alpha_video : 0.0;

  MissingMask miss_audio = mark_missing(n_obj, alpha_a, rng_miss);
  MissingMask miss_video = mark_missing(n_obj, alpha_v, rng_miss);

  // Object order: rows 0..B-1 are object 1 of each episode, B..2B-1 object 2.
  auto object_frames = [&](std::size_t obj) -> const FeatureSeqData& {
    const Episode& ep = ds.episodes[idx[obj % B]];
    return obj < B ? ep.obj1.frames : ep.obj2.frames;
  };
  auto object_audio = [&](std::size_t obj) -> const std::vector<double>& {
    const Episode& ep = ds.episodes[idx[obj % B]];
    return obj < B ? ep.obj1.audio : ep.obj2.audio;
  };

  // Missing video is zeroed before encoding (the encoders still run, the
  // factor features for the CLM come from the completion path).
  std::vector<std::pair<FeatureSeq, FeatureSeq>> pairs;
  pairs.reserve(B);
  for (std::size_t e = 0; e < B; ++e) {
    FeatureSeq f1 = detail_train::contains(miss_video.b_miss, e)
                        ? detail_train::zero_feature_seq(T, d)
                        : detail_train::to_feature_seq(object_frames(e));
    FeatureSeq f2 = detail_train::contains(miss_video.b_miss, B + e)
                        ? detail_train::zero_feature_seq(T, d)
                        : detail_train::to_feature_seq(object_frames(B + e));
    pairs.emplace_back(std::move(f1), std::move(f2));
  }

  DsePlusLossResult dse_res =
      dse_plus_loss(model.dse, pairs, cfg.dse, rng_eps, cfg.pair_contrastive);

  // Per-object factor features at the common width d.
  std::vector<Tensor> xa_rows(n_obj), xs_rows(n_obj), xz_rows(n_obj);
  for (std::size_t i = 0; i < n_obj; ++i) {
    const bool a_miss = detail_train::contains(miss_audio.b_miss, i);
    const bool v_miss = detail_train::contains(miss_video.b_miss, i);
    xa_rows[i] = a_miss ? Tensor::zeros({d})
                        : Tensor::from({d}, object_audio(i));
    xs_rows[i] = v_miss ? Tensor::zeros({d})
                        : detail_train::pad_to(dse_res.latents[i].s, d);
    xz_rows[i] = v_miss ? Tensor::zeros({d})
                        : detail_train::pad_to(dse_res.latents[i].z_last(), d);
  }

  Tensor unique_l = Tensor::scalar(0.0);
  Tensor share_l = Tensor::scalar(0.0);
  if (rdcl) {
    // Complete set: objects with every modality present.
    std::vector<std::size_t> b_com;
    for (std::size_t i = 0; i < n_obj; ++i)
      if (!detail_train::contains(miss_audio.b_miss, i) &&
          !detail_train::contains(miss_video.b_miss, i))
        b_com.push_back(i);
    if (b_com.empty())
      throw TensorError("batch_forward: no complete sample in the batch");

    // IMLM encoders consume detached features: the alignment losses train
    // only the IMLM parameters.
    std::vector<Tensor> ra(n_obj), rs(n_obj), rz(n_obj);      // shared
    std::vector<Tensor> ua(n_obj), us(n_obj), uz(n_obj);      // unique
    for (std::size_t i = 0; i < n_obj; ++i) {
      if (!detail_train::contains(miss_audio.b_miss, i)) {
        Tensor x = xa_rows[i].detach();
        ra[i] = encode_shared(model.imlm, x);
        ua[i] = encode_unique(model.imlm, x);
      }
      if (!detail_train::contains(miss_video.b_miss, i)) {
        Tensor xs = xs_rows[i].detach();
        Tensor xz = xz_rows[i].detach();
        rs[i] = encode_shared(model.imlm, xs);
        us[i] = encode_unique(model.imlm, xs);
        rz[i] = encode_shared(model.imlm, xz);
        uz[i] = encode_unique(model.imlm, xz);
      }
    }

    std::vector<Tensor> com_ua, com_us, com_uz;
    std::vector<Tensor> com_ra, com_rs, com_rz;
    std::vector<std::vector<Tensor>> com_unique_triples;
    for (std::size_t i : b_com) {
      com_ua.push_back(ua[i]);
      com_us.push_back(us[i]);
      com_uz.push_back(uz[i]);
      com_ra.push_back(ra[i]);
      com_rs.push_back(rs[i]);
      com_rz.push_back(rz[i]);
      com_unique_triples.push_back({ua[i], us[i], uz[i]});
    }

    // Completion for missing modalities.
    for (std::size_t i = 0; i < n_obj; ++i) {
      const bool a_miss = detail_train::contains(miss_audio.b_miss, i);
      const bool v_miss = detail_train::contains(miss_video.b_miss, i);
      if (a_miss && !v_miss) {
        ra[i] = complete_shared_audio(rz[i], rs[i]);
        ua[i] = complete_unique(com_ua);
      } else if (v_miss && !a_miss) {
        Tensor shared = complete_shared_general({ra[i]});
        rs[i] = shared;
        rz[i] = shared;
        us[i] = complete_unique(com_us);
        uz[i] = complete_unique(com_uz);
      } else if (a_miss && v_miss) {
        // Everything missing: fall back to batch means of the complete set.
        ra[i] = complete_shared_general({complete_unique(com_ra)});
        rs[i] = ra[i];
        rz[i] = ra[i];
        ua[i] = complete_unique(com_ua);
        us[i] = complete_unique(com_us);
        uz[i] = complete_unique(com_uz);
      }
    }

    unique_l = unique_loss(model.imlm, com_unique_triples);
    share_l = share_loss(com_ra, com_rz, com_rs);

    // Residual projection back into the feature space.
    for (std::size_t i = 0; i < n_obj; ++i) {
      xa_rows[i] = project_residual(model.imlm, ra[i], ua[i], xa_rows[i]);
      xs_rows[i] = project_residual(model.imlm, rs[i], us[i], xs_rows[i]);
      xz_rows[i] = project_residual(model.imlm, rz[i], uz[i], xz_rows[i]);
    }
  }

  Tensor xa = from_rows(xa_rows);
  Tensor xs = from_rows(xs_rows);
  Tensor xz = from_rows(xz_rows);
  std::vector<Tensor> q_rows(B);
  for (std::size_t e = 0; e < B; ++e)
    q_rows[e] = Tensor::from({d}, ds.episodes[idx[e]].question);
  Tensor xq = from_rows(q_rows);

  // Intervention parameters initialize from the first training batch's
  // per-dimension statistics.
  if (training && !model.iv_initialized) {
    auto init_from = [&](ModalityIntervention& iv, const Tensor& x) {
      const auto& vals = x.data();
      for (std::size_t j = 0; j < d; ++j) {
        double mu = 0;
        for (std::size_t i = 0; i < n_obj; ++i) mu += vals[i * d + j];
        mu /= static_cast<double>(n_obj);
        double var = 0;
        for (std::size_t i = 0; i < n_obj; ++i) {
          const double dv = vals[i * d + j] - mu;
          var += dv * dv;
        }
        var /= static_cast<double>(n_obj);
        iv.mu.data_mut()[j] = mu;
        iv.log_sigma.data_mut()[j] = std::log(std::max(std::sqrt(var), 1e-3));
      }
    };
    init_from(model.clm.iv.audio, xa);
    init_from(model.clm.iv.stat, xs);
    init_from(model.clm.iv.dyn, xz);
    model.iv_initialized = true;
  }

  auto aff = build_augmented_affinity(detail_train::graph_safe_rows(xa),
                                      detail_train::graph_safe_rows(xs),
                                      detail_train::graph_safe_rows(xz),
                                      cfg.clm);
  auto factual = episode_logits(model.clm, message_pass(aff, xa, xs, xz), xq);

  const std::size_t n_mc = training ? cfg.n_mc_train : cfg.n_mc_eval;
  std::vector<std::vector<Tensor>> cf_logits(B);
  for (std::size_t s = 0; s < n_mc; ++s) {
    Tensor wa = Tensor::from({n_obj, d}, rng_iv.gaussian_vec(n_obj * d));
    Tensor ws = Tensor::from({n_obj, d}, rng_iv.gaussian_vec(n_obj * d));
    Tensor wd = Tensor::from({n_obj, d}, rng_iv.gaussian_vec(n_obj * d));
    Tensor xa_cf = intervene(xa, model.clm.iv.audio.mu,
                             model.clm.iv.audio.sigma(), wa);
    Tensor xs_cf = intervene(xs, model.clm.iv.stat.mu,
                             model.clm.iv.stat.sigma(), ws);
    Tensor xz_cf = intervene(xz, model.clm.iv.dyn.mu,
                             model.clm.iv.dyn.sigma(), wd);
    auto aff_cf = build_augmented_affinity(
        detail_train::graph_safe_rows(xa_cf),
        detail_train::graph_safe_rows(xs_cf),
        detail_train::graph_safe_rows(xz_cf), cfg.clm);
    auto logits = episode_logits(model.clm, message_pass(aff_cf, xa, xs, xz),
                                 xq);
    for (std::size_t e = 0; e < B; ++e) cf_logits[e].push_back(logits[e]);
  }

  BatchResult out;
  Tensor tie_l = Tensor::scalar(0.0);
  for (std::size_t e = 0; e < B; ++e) {
    Tensor t = rdcl::tie(factual[e], cf_logits[e]);
    const Episode& ep = ds.episodes[idx[e]];
    tie_l = tie_l + tie_loss(t, ep.label);
    out.predictions.push_back(t[1] > t[0] ? 1 : 0);
    out.labels.push_back(ep.label);
    out.properties.push_back(ep.property);
  }
  tie_l = tie_l / static_cast<double>(B);

  Tensor imlm_l = imlm_loss(unique_l, share_l);
  out.loss = rdcl ? dse_res.loss + tie_l + imlm_l : dse_res.loss + tie_l;
  out.components = dse_res.components;
  out.components["dse_total"] = dse_res.loss.item();
  out.components["tie"] = tie_l.item();
  out.components["unique"] = unique_l.item();
  out.components["share"] = share_l.item();
  out.components["imlm"] = rdcl ? imlm_l.item() : 0.0;
  out.components["total"] = out.loss.item();
  return out;
}

// --- training steps ----------------------------------------------------------

struct StepRecord {
  std::size_t step = 0;
  LossComponents components;
  double accuracy = 0.0;  // batch accuracy of the TIE argmax
};

struct Trainer {
  TrainConfig cfg;
  Model model;
  Optimizer opt;
  ParamList params;
  Rng root;
  std::size_t step_count = 0;

  explicit Trainer(const TrainConfig& config)
      : cfg(config), root(config.seed) {
    cfg.validate();
    Rng init = root.substream(1);
    model = Model(cfg, init);
    params = model.params(cfg.mode == "rdcl");
    opt = Optimizer(cfg.learning_rate, cfg.optimizer);
  }

  StepRecord train_step(const Dataset& ds, const std::vector<std::size_t>& idx) {
    Rng eps = root.substream(detail_train::kTagEps).substream(step_count);
    Rng iv = root.substream(detail_train::kTagIntervention).substream(step_count);
    Rng miss = root.substream(detail_train::kTagMissing).substream(step_count);
    BatchResult res =
        batch_forward(model, ds, idx, cfg, eps, iv, miss, /*training=*/true);
    if (!res.loss.all_finite())
      throw TensorError("train_step: non-finite loss at step " +
                        std::to_string(step_count));
    for (auto& [name, p] : params) p.zero_grad();
    res.loss.backward();
    opt.step(params);
    StepRecord rec;
    rec.step = step_count++;
    rec.components = res.components;
    std::size_t hit = 0;
    for (std::size_t e = 0; e < res.labels.size(); ++e)
      hit += res.predictions[e] == res.labels[e] ? 1 : 0;
    rec.accuracy = static_cast<double>(hit) /
                   static_cast<double>(res.labels.size());
    return rec;
  }

  // Deterministic seeded shuffle of episode order for one epoch.
  std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n_episodes,
                                                      std::size_t epoch) const {
    Rng shuffle = root.substream(detail_train::kTagShuffle).substream(epoch);
    auto perm = shuffle.permutation(n_episodes);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start + cfg.batch_size <= n_episodes;
         start += cfg.batch_size)
      batches.emplace_back(perm.begin() + start,
                           perm.begin() + start + cfg.batch_size);
    return batches;
  }
};

// --- evaluation ----------------------------------------------------------------

struct EvalResult {
  double accuracy = 0.0;
  double accuracy_static_q = 0.0;   // episodes querying the static property
  double accuracy_dynamic_q = 0.0;
  std::size_t n = 0;
};

// Sequential fixed batching; the missing masks are seeded per batch, so the
// same config and seed always evaluates the same masked episodes.
inline EvalResult evaluate(Model& model, const Dataset& ds,
                           const TrainConfig& cfg, std::size_t first,
                           std::size_t count) {
  Rng eval_root = Rng(cfg.seed).substream(detail_train::kTagEval);
  std::size_t hits = 0, n = 0;
  std::size_t hits_s = 0, n_s = 0, hits_d = 0, n_d = 0;
  std::size_t batch_index = 0;
  for (std::size_t start = first;
       start + cfg.batch_size <= first + count &&
       start + cfg.batch_size <= ds.episodes.size();
       start += cfg.batch_size, ++batch_index) {
    std::vector<std::size_t> idx(cfg.batch_size);
    for (std::size_t i = 0; i < cfg.batch_size; ++i) idx[i] = start + i;
    Rng eps = eval_root.substream(3 * batch_index);
    Rng iv = eval_root.substream(3 * batch_index + 1);
    Rng miss = eval_root.substream(3 * batch_index + 2);
    BatchResult res =
        batch_forward(model, ds, idx, cfg, eps, iv, miss, /*training=*/false);
    for (std::size_t e = 0; e < res.labels.size(); ++e) {
      const bool hit = res.predictions[e] == res.labels[e];
      hits += hit;
      ++n;
      if (res.properties[e] == 0) {
        hits_s += hit;
        ++n_s;
      } else {
        hits_d += hit;
        ++n_d;
      }
    }
  }
  EvalResult out;
  out.n = n;
  out.accuracy = n ? static_cast<double>(hits) / static_cast<double>(n) : 0.0;
  out.accuracy_static_q =
      n_s ? static_cast<double>(hits_s) / static_cast<double>(n_s) : 0.0;
  out.accuracy_dynamic_q =
      n_d ? static_cast<double>(hits_d) / static_cast<double>(n_d) : 0.0;
  return out;
}

// --- linear probes ---------------------------------------------------------------

namespace detail_train {

// Gaussian elimination with partial pivoting; solves A x = b for multiple
// right-hand sides in place. A is n x n row-major.
inline void solve_linear(std::vector<double>& a, std::vector<double>& b,
                         std::size_t n, std::size_t rhs) {
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
    if (std::abs(a[piv * n + col]) < 1e-12)
      throw TensorError("solve_linear: singular system");
    if (piv != col) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a[col * n + j], a[piv * n + j]);
      for (std::size_t j = 0; j < rhs; ++j)
        std::swap(b[col * rhs + j], b[piv * rhs + j]);
    }
    const double inv = 1.0 / a[col * n + col];
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double factor = a[r * n + col] * inv;
      if (factor == 0.0) continue;
      for (std::size_t j = col; j < n; ++j) a[r * n + j] -= factor * a[col * n + j];
      for (std::size_t j = 0; j < rhs; ++j)
        b[r * rhs + j] -= factor * b[col * rhs + j];
    }
  }
  for (std::size_t r = 0; r < n; ++r) {
    const double inv = 1.0 / a[r * n + r];
    for (std::size_t j = 0; j < rhs; ++j) b[r * rhs + j] *= inv;
  }
}

}  // namespace detail_train

struct ProbeFit {
  double accuracy = 0.0;
  bool degenerate = false;  // constant features, accuracy is the base rate
};

// Closed-form one-vs-rest ridge regression on (features, class) pairs with a
// bias column; 80/20 train/test split in the given order.
inline ProbeFit linear_probe(const std::vector<std::vector<double>>& feats,
                             const std::vector<std::size_t>& labels,
                             std::size_t n_classes, double ridge = 1e-3) {
  const std::size_t n = feats.size();
  if (n < 10) throw TensorError("linear_probe: too few samples");
  const std::size_t p = feats[0].size() + 1;  // bias column
  const std::size_t n_train = (n * 8) / 10;

  ProbeFit out;
  double var_sum = 0.0;
  for (std::size_t j = 0; j + 1 < p; ++j) {
    double mu = 0;
    for (std::size_t i = 0; i < n_train; ++i) mu += feats[i][j];
    mu /= static_cast<double>(n_train);
    double var = 0;
    for (std::size_t i = 0; i < n_train; ++i) {
      const double dv = feats[i][j] - mu;
      var += dv * dv;
    }
    var_sum += var / static_cast<double>(n_train);
  }
  if (var_sum < 1e-16) {
    // Degenerate constant features: predict the majority class.
    std::vector<std::size_t> counts(n_classes, 0);
    for (std::size_t i = 0; i < n_train; ++i) ++counts[labels[i]];
    std::size_t best = 0;
    for (std::size_t c = 1; c < n_classes; ++c)
      if (counts[c] > counts[best]) best = c;
    std::size_t hit = 0;
    for (std::size_t i = n_train; i < n; ++i) hit += labels[i] == best ? 1 : 0;
    out.accuracy = static_cast<double>(hit) / static_cast<double>(n - n_train);
    out.degenerate = true;
    return out;
  }

  std::vector<double> xtx(p * p, 0.0), xty(p * n_classes, 0.0);
  auto x_at = [&](std::size_t i, std::size_t j) {
    return j + 1 == p ? 1.0 : feats[i][j];
  };
  for (std::size_t i = 0; i < n_train; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      const double xj = x_at(i, j);
      for (std::size_t k = j; k < p; ++k) xtx[j * p + k] += xj * x_at(i, k);
      xty[j * n_classes + labels[i]] += xj;
    }
  }
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t k = 0; k < j; ++k) xtx[j * p + k] = xtx[k * p + j];
    xtx[j * p + j] += ridge;
  }
  detail_train::solve_linear(xtx, xty, p, n_classes);

  std::size_t hit = 0;
  for (std::size_t i = n_train; i < n; ++i) {
    std::size_t best = 0;
    double best_score = -1e300;
    for (std::size_t c = 0; c < n_classes; ++c) {
      double score = 0;
      for (std::size_t j = 0; j < p; ++j)
        score += x_at(i, j) * xty[j * n_classes + c];
      if (score > best_score) {
        best_score = score;
        best = c;
      }
    }
    hit += best == labels[i] ? 1 : 0;
  }
  out.accuracy = static_cast<double>(hit) / static_cast<double>(n - n_train);
  return out;
}

struct ProbeResult {
  ProbeFit s_to_static, s_to_dynamic, z_to_static, z_to_dynamic;
};

// Probes the sampled factors (posterior means plus sigma-scaled seeded
// noise) against the generator's ground-truth classes: information buried
// below the posterior noise floor does not count as encoded.
inline ProbeResult probe_disentanglement(const Model& model, const Dataset& ds,
                                         const TrainConfig& cfg,
                                         std::size_t max_objects = 800) {
  std::vector<std::vector<double>> s_feats, z_feats;
  std::vector<std::size_t> stat_labels, dyn_labels;
  Rng rng = Rng(cfg.seed).substream(detail_train::kTagEval + 1);
  for (const auto& ep : ds.episodes) {
    for (const ObjectRecord* obj : {&ep.obj1, &ep.obj2}) {
      if (s_feats.size() >= max_objects) break;
      auto seq = detail_train::to_feature_seq(obj->frames);
      auto lat = encode(model.dse, seq, rng);
      Tensor s = lat.s;
      Tensor z = lat.z_flat();
      s_feats.push_back(s.data());
      z_feats.push_back(z.data());
      stat_labels.push_back(obj->static_class);
      dyn_labels.push_back(obj->dynamic_class);
    }
    if (s_feats.size() >= max_objects) break;
  }
  ProbeResult out;
  out.s_to_static = linear_probe(s_feats, stat_labels, ds.spec.n_static_classes);
  out.s_to_dynamic = linear_probe(s_feats, dyn_labels, ds.spec.n_dynamic_classes);
  out.z_to_static = linear_probe(z_feats, stat_labels, ds.spec.n_static_classes);
  out.z_to_dynamic = linear_probe(z_feats, dyn_labels, ds.spec.n_dynamic_classes);
  return out;
}

// --- metrics -----------------------------------------------------------------------

struct MetricsRecord {
  std::size_t epoch = 0;
  LossComponents components;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  double wall_seconds = 0.0;
};

inline const std::vector<std::string>& metrics_component_order() {
  static const std::vector<std::string> order{
      "recon", "kl_s", "kl_z", "mi_z",  "mi_s",  "mi_zs", "contra_s",
      "contra_z", "dse_total", "tie", "unique", "share", "imlm", "total"};
  return order;
}

inline std::string metrics_csv_header() {
  std::string line = "epoch";
  for (const auto& c : metrics_component_order()) line += "," + c;
  line += ",train_accuracy,val_accuracy,wall_seconds\n";
  return line;
}

inline std::string metrics_csv_row(const MetricsRecord& rec) {
  char buf[64];
  std::string line = std::to_string(rec.epoch);
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), ",%.17g", v);
    line += buf;
  };
  for (const auto& c : metrics_component_order()) {
    auto it = rec.components.find(c);
    put(it == rec.components.end() ? 0.0 : it->second);
  }
  put(rec.train_accuracy);
  put(rec.val_accuracy);
  put(rec.wall_seconds);
  line += "\n";
  return line;
}

}  // namespace rdcl
