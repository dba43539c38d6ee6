#pragma once

// Incomplete multi-modal learning: shared/unique decomposition of the three
// factor modalities with weight-shared encoders, completion of missing
// modalities from shared semantics, and the alignment losses.

#include <algorithm>
#include <string>
#include <vector>

#include "rdcl/nn.hpp"
#include "rdcl/rng.hpp"
#include "rdcl/tensor.hpp"

namespace rdcl {

enum class Modality { kAudio = 0, kStatic = 1, kDynamic = 2 };

struct MissingMask {
  std::vector<std::size_t> b_miss;  // sorted
  std::vector<std::size_t> b_com;   // sorted
  double alpha = 0.0;
};

// Uniform sample of floor(N * alpha) distinct missing indices.
inline MissingMask mark_missing(std::size_t n, double alpha, Rng& rng) {
  if (alpha < 0.0 || alpha > 1.0)
    throw TensorError("mark_missing: alpha must lie in [0, 1]");
  const std::size_t m = static_cast<std::size_t>(
      static_cast<double>(n) * alpha);
  auto perm = rng.permutation(n);
  MissingMask mask;
  mask.alpha = alpha;
  mask.b_miss.assign(perm.begin(), perm.begin() + m);
  mask.b_com.assign(perm.begin() + m, perm.end());
  std::sort(mask.b_miss.begin(), mask.b_miss.end());
  std::sort(mask.b_com.begin(), mask.b_com.end());
  return mask;
}

struct ImlmParams {
  Mlp f_share;   // d -> d_r, weights shared across modalities
  Mlp f_unique;  // d -> d_r, weights shared across modalities
  Mlp f_pro;     // 2 d_r -> d, residual projection, no output bias
  Linear head_audio, head_static, head_dynamic;  // d_r -> 1 binary heads

  std::size_t d = 0, d_r = 0;

  ImlmParams() = default;
  // The projection's output layer starts at zero so the module begins as an
  // exact identity on features; dead_projection zeroes it entirely.
  ImlmParams(std::size_t d_in, std::size_t dr, Rng& rng,
             bool dead_projection = false)
      : f_share(d_in, dr, dr, rng),
        f_unique(d_in, dr, dr, rng),
        f_pro(2 * dr, dr, d_in, rng, /*out_bias_enabled=*/false),
        head_audio(dr, 1, rng),
        head_static(dr, 1, rng),
        head_dynamic(dr, 1, rng),
        d(d_in),
        d_r(dr) {
    if (dead_projection) {
      f_pro = Mlp::zeros(2 * dr, dr, d_in, /*out_bias_enabled=*/false);
    } else {
      std::fill(f_pro.out_weight.data_mut().begin(),
                f_pro.out_weight.data_mut().end(), 0.0);
    }
  }

  static ImlmParams zeros(std::size_t d_in, std::size_t dr) {
    ImlmParams p;
    p.f_share = Mlp::zeros(d_in, dr, dr);
    p.f_unique = Mlp::zeros(d_in, dr, dr);
    p.f_pro = Mlp::zeros(2 * dr, dr, d_in, /*out_bias_enabled=*/false);
    p.head_audio = Linear::zeros(dr, 1);
    p.head_static = Linear::zeros(dr, 1);
    p.head_dynamic = Linear::zeros(dr, 1);
    p.d = d_in;
    p.d_r = dr;
    return p;
  }

  const Linear& head(Modality m) const {
    switch (m) {
      case Modality::kAudio: return head_audio;
      case Modality::kStatic: return head_static;
      default: return head_dynamic;
    }
  }

  ParamList params(const std::string& prefix) const {
    ParamList out;
    append_params(out, f_share.params(".f_share"), prefix);
    append_params(out, f_unique.params(".f_unique"), prefix);
    append_params(out, f_pro.params(".f_pro"), prefix);
    append_params(out, head_audio.params(".head_audio"), prefix);
    append_params(out, head_static.params(".head_static"), prefix);
    append_params(out, head_dynamic.params(".head_dynamic"), prefix);
    return out;
  }
};

inline Tensor encode_shared(const ImlmParams& p, const Tensor& x_m,
                            bool missing = false) {
  if (missing)
    throw TensorError("encode_shared: missing modality must use completion");
  return p.f_share(x_m);
}

inline Tensor encode_unique(const ImlmParams& p, const Tensor& x_m,
                            bool missing = false) {
  if (missing)
    throw TensorError("encode_unique: missing modality must use completion");
  return p.f_unique(x_m);
}

// x_m' = f_pro(r_share || r_unique) + x_m.
inline Tensor project_residual(const ImlmParams& p, const Tensor& r_share,
                               const Tensor& r_unique, const Tensor& x_m) {
  return p.f_pro(concat(r_share, r_unique)) + x_m;
}

inline Tensor complete_shared_audio(const Tensor& r_share_z,
                                    const Tensor& r_share_s) {
  return (r_share_z + r_share_s) * 0.5;
}

inline Tensor complete_shared_general(const std::vector<Tensor>& available) {
  if (available.empty())
    throw TensorError("complete_shared_general: no available modality");
  Tensor acc = available[0];
  for (std::size_t i = 1; i < available.size(); ++i) acc = acc + available[i];
  return acc / static_cast<double>(available.size());
}

// Columnwise mean over complete samples, detached: imputations are
// constants, not encodings.
inline Tensor complete_unique(const std::vector<Tensor>& unique_com) {
  if (unique_com.empty())
    throw TensorError("complete_unique: no complete sample available");
  Tensor acc = unique_com[0];
  for (std::size_t i = 1; i < unique_com.size(); ++i) acc = acc + unique_com[i];
  return (acc / static_cast<double>(unique_com.size())).detach();
}

inline Tensor abs_elems(const Tensor& x) {
  return relu(x) + relu(-x);
}

// Binary cross-entropy with the probability clamped to [eps, 1 - eps].
inline Tensor bce(const Tensor& prob, double label, double eps = 1e-7) {
  Tensor p = max_with_scalar(prob, eps);
  p = -max_with_scalar(-p, -(1.0 - eps));
  if (label == 1.0) return -log(p);
  return -log(1.0 - p);
}

// One-vs-rest domain classification over the complete samples' unique
// features: every head scores every modality's feature, positive label when
// head and feature modality coincide. Mean over all (sample, head, feature)
// tuples.
inline Tensor unique_loss(const ImlmParams& p,
                          const std::vector<std::vector<Tensor>>& unique_com) {
  if (unique_com.empty()) throw TensorError("unique_loss: empty complete set");
  static const Modality kMods[3] = {Modality::kAudio, Modality::kStatic,
                                    Modality::kDynamic};
  Tensor acc = Tensor::scalar(0.0);
  std::size_t count = 0;
  for (const auto& sample : unique_com) {
    if (sample.size() != 3)
      throw TensorError("unique_loss: three modality features required");
    for (std::size_t f = 0; f < 3; ++f) {
      for (std::size_t h = 0; h < 3; ++h) {
        Tensor prob = sigmoid(pick(p.head(kMods[h])(sample[f]), 0));
        acc = acc + bce(prob, h == f ? 1.0 : 0.0);
        ++count;
      }
    }
  }
  return acc / static_cast<double>(count);
}

// Sum over ordered modality pairs of the L1 distances, summed over the batch.
inline Tensor share_loss(const std::vector<Tensor>& r_share_a,
                         const std::vector<Tensor>& r_share_z,
                         const std::vector<Tensor>& r_share_s) {
  const std::size_t b = r_share_a.size();
  if (r_share_z.size() != b || r_share_s.size() != b)
    throw TensorError("share_loss: batch size mismatch");
  Tensor acc = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < b; ++i) {
    Tensor az = sum(abs_elems(r_share_a[i] - r_share_z[i]));
    Tensor as = sum(abs_elems(r_share_a[i] - r_share_s[i]));
    Tensor zs = sum(abs_elems(r_share_z[i] - r_share_s[i]));
    acc = acc + (az + as + zs) * 2.0;
  }
  return acc;
}

inline Tensor imlm_loss(const Tensor& unique, const Tensor& share) {
  return unique + share;
}

}  // namespace rdcl
