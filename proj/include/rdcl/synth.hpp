#pragma once

// Synthetic episode generator with known ground-truth static, dynamic and
// audio generative factors. Each object's video features are a fixed static
// class embedding plus a class-specific zero-mean temporal trajectory plus
// noise; the audio feature is a fixed embedding of both classes plus noise.

#include <cmath>
#include <cstdint>
#include <vector>

#include "rdcl/rng.hpp"
#include "rdcl/tensor.hpp"

namespace rdcl {

using FeatureSeqData = std::vector<std::vector<double>>;  // T frames of d raw values

struct GenerativeSpec {
  std::size_t n_static_classes = 4;
  std::size_t n_dynamic_classes = 4;
  std::size_t T = 8;
  std::size_t d = 16;
  double noise_std = 0.05;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_static_classes < 2 || n_dynamic_classes < 2)
      throw TensorError("GenerativeSpec: at least two classes per factor");
    if (T < 2) throw TensorError("GenerativeSpec: T >= 2 required");
    if (d < 2) throw TensorError("GenerativeSpec: d >= 2 required");
    if (noise_std < 0) throw TensorError("GenerativeSpec: noise_std >= 0");
  }
};

// Trajectory amplitude of the video's dynamic component, and the scale of the
// audio embeddings. Audio carries both classes at a larger scale than the
// video factors, so a trained classifier leans on it and missing audio bites.
inline constexpr double kDynamicAmp = 1.2;
inline constexpr double kAudioScale = 2.5;

namespace detail_synth {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

// RNG purpose tags for decoupled substreams.
inline constexpr std::uint64_t kTagTables = 101;
inline constexpr std::uint64_t kTagEpisodes = 102;

inline std::vector<double> unit_vector(std::size_t d, Rng& rng) {
  std::vector<double> v = rng.gaussian_vec(d);
  double sq = 0;
  for (double x : v) sq += x * x;
  const double inv = 1.0 / std::sqrt(sq);
  for (double& x : v) x *= inv;
  return v;
}

}  // namespace detail_synth

// Fixed embedding tables, a pure function of the spec.
struct GenTables {
  std::vector<std::vector<double>> static_embed;  // [n_s][d]
  // traj[k][t][j]: zero-mean over t by construction (integer frequencies).
  std::vector<std::vector<std::vector<double>>> traj;  // [n_d][T][d]
  std::vector<std::vector<double>> audio_embed;        // [n_s * n_d][d]
  std::vector<double> q_static, q_dynamic;             // orthogonal, [d]
};

inline GenTables make_tables(const GenerativeSpec& spec) {
  spec.validate();
  Rng rng = Rng(spec.seed).substream(detail_synth::kTagTables);
  GenTables t;
  for (std::size_t c = 0; c < spec.n_static_classes; ++c)
    t.static_embed.push_back(detail_synth::unit_vector(spec.d, rng));
  for (std::size_t k = 0; k < spec.n_dynamic_classes; ++k) {
    auto dir = detail_synth::unit_vector(spec.d, rng);
    // distinct integer frequency per class, nonzero mod T
    const std::size_t freq = 1 + k % (spec.T - 1);
    const double phase =
        2.0 * detail_synth::kPi * static_cast<double>(k) /
        static_cast<double>(spec.n_dynamic_classes);
    std::vector<std::vector<double>> frames;
    for (std::size_t step = 0; step < spec.T; ++step) {
      const double a =
          kDynamicAmp *
          std::sin(2.0 * detail_synth::kPi * static_cast<double>(freq) *
                       static_cast<double>(step) / static_cast<double>(spec.T) +
                   phase);
      std::vector<double> f(spec.d);
      for (std::size_t j = 0; j < spec.d; ++j) f[j] = a * dir[j];
      frames.push_back(std::move(f));
    }
    t.traj.push_back(std::move(frames));
  }
  for (std::size_t c = 0; c < spec.n_static_classes; ++c)
    for (std::size_t k = 0; k < spec.n_dynamic_classes; ++k)
      t.audio_embed.push_back(detail_synth::unit_vector(spec.d, rng));
  t.q_static.assign(spec.d, 0.0);
  t.q_dynamic.assign(spec.d, 0.0);
  t.q_static[0] = 1.0;
  t.q_dynamic[1] = 1.0;
  return t;
}

struct ObjectRecord {
  FeatureSeqData frames;        // T x d raw values
  std::vector<double> audio;    // d
  std::size_t static_class = 0;
  std::size_t dynamic_class = 0;
};

struct Episode {
  ObjectRecord obj1, obj2;
  std::vector<double> question;  // d
  std::size_t property = 0;      // 0 = static queried, 1 = dynamic queried
  std::size_t label = 0;         // 0 = object 1, 1 = object 2
};

inline ObjectRecord generate_object(const GenerativeSpec& spec,
                                    const GenTables& tables, Rng& rng) {
  ObjectRecord obj;
  obj.static_class = rng.below(spec.n_static_classes);
  obj.dynamic_class = rng.below(spec.n_dynamic_classes);
  const auto& stat = tables.static_embed[obj.static_class];
  const auto& traj = tables.traj[obj.dynamic_class];
  for (std::size_t t = 0; t < spec.T; ++t) {
    std::vector<double> frame = rng.gaussian_vec(spec.d, 0.0, spec.noise_std);
    for (std::size_t j = 0; j < spec.d; ++j) frame[j] += stat[j] + traj[t][j];
    obj.frames.push_back(std::move(frame));
  }
  obj.audio = rng.gaussian_vec(spec.d, 0.0, spec.noise_std);
  const auto& au =
      tables.audio_embed[obj.static_class * spec.n_dynamic_classes +
                         obj.dynamic_class];
  for (std::size_t j = 0; j < spec.d; ++j) obj.audio[j] += kAudioScale * au[j];
  return obj;
}

// Queried classes must differ; the label says which object has the larger
// queried class index (0 = object 1, 1 = object 2).
inline Episode generate_episode(const GenerativeSpec& spec,
                                const GenTables& tables, Rng& rng) {
  Episode ep;
  ep.property = rng.below(2);
  for (;;) {
    ep.obj1 = generate_object(spec, tables, rng);
    ep.obj2 = generate_object(spec, tables, rng);
    const std::size_t c1 =
        ep.property == 0 ? ep.obj1.static_class : ep.obj1.dynamic_class;
    const std::size_t c2 =
        ep.property == 0 ? ep.obj2.static_class : ep.obj2.dynamic_class;
    if (c1 == c2) continue;
    ep.label = c1 > c2 ? 0 : 1;
    break;
  }
  ep.question = ep.property == 0 ? tables.q_static : tables.q_dynamic;
  return ep;
}

struct Dataset {
  GenerativeSpec spec;
  std::vector<Episode> episodes;
};

inline Dataset generate_dataset(const GenerativeSpec& spec, std::size_t n) {
  Dataset ds;
  ds.spec = spec;
  GenTables tables = make_tables(spec);
  Rng rng = Rng(spec.seed).substream(detail_synth::kTagEpisodes);
  ds.episodes.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    ds.episodes.push_back(generate_episode(spec, tables, rng));
  return ds;
}

}  // namespace rdcl
