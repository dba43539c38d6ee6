#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "rdcl/dse.hpp"
#include "rdcl/gradcheck.hpp"

using namespace rdcl;

namespace {

DseHyper toy_hyper(std::size_t T = 4, std::size_t d = 3, std::size_t dl = 2) {
  DseHyper hy;
  hy.T = T;
  hy.d = d;
  hy.d_lat = dl;
  hy.hidden = 3;
  return hy;
}

FeatureSeq random_seq(std::size_t T, std::size_t d, Rng& rng) {
  FeatureSeq x;
  for (std::size_t t = 0; t < T; ++t)
    x.push_back(Tensor::from({d}, rng.gaussian_vec(d)));
  return x;
}

LatentFactors hand_latents(const std::vector<double>& s,
                           const std::vector<std::vector<double>>& z) {
  LatentFactors lat;
  lat.s = Tensor::from({s.size()}, s);
  for (const auto& zt : z) lat.z.push_back(Tensor::from({zt.size()}, zt));
  return lat;
}

}  // namespace

TEST_CASE("encode with zero head weights gives q_s = N(0,1) and s = eps") {
  auto hy = toy_hyper();
  auto p = DseParams::zeros(hy);
  Rng rng(1);
  auto x = random_seq(hy.T, hy.d, rng);
  std::vector<double> eps_s{0.7, -1.3};
  std::vector<std::vector<double>> eps_z(hy.T, std::vector<double>{0.1, 0.2});
  auto lat = encode_with_eps(p, x, eps_s, eps_z);
  for (double v : lat.q_s.mu.data()) REQUIRE(v == 0.0);
  for (double v : lat.q_s.log_sigma.data()) REQUIRE(v == 0.0);
  REQUIRE(lat.s.data() == eps_s);
}

TEST_CASE("encode is deterministic given identical epsilons") {
  auto hy = toy_hyper();
  Rng rng(2);
  DseParams p(hy, rng);
  auto x = random_seq(hy.T, hy.d, rng);
  Rng r1(77), r2(77);
  auto a = encode(p, x, r1);
  auto b = encode(p, x, r2);
  REQUIRE(a.s.data() == b.s.data());
  for (std::size_t t = 0; t < hy.T; ++t)
    REQUIRE(a.z[t].data() == b.z[t].data());
}

TEST_CASE("sampled static factor mean approaches mu_s") {
  auto hy = toy_hyper(3, 2, 2);
  Rng rng(5);
  DseParams p(hy, rng);
  auto x = random_seq(hy.T, hy.d, rng);
  Rng sampler(123);
  const int n = 10000;
  std::vector<double> acc(hy.d_lat, 0.0);
  std::vector<double> mu, sigma;
  for (int i = 0; i < n; ++i) {
    auto lat = encode(p, x, sampler);
    for (std::size_t k = 0; k < hy.d_lat; ++k) acc[k] += lat.s[k];
    if (i == 0) {
      mu = lat.q_s.mu.data();
      for (double ls : lat.q_s.log_sigma.data()) sigma.push_back(std::exp(ls));
    }
  }
  for (std::size_t k = 0; k < hy.d_lat; ++k)
    REQUIRE(std::abs(acc[k] / n - mu[k]) <= 3.0 * sigma[k] / 100.0);
}

TEST_CASE("prior with zero weights is N(0,1) at every step") {
  auto hy = toy_hyper();
  auto p = DseParams::zeros(hy);
  for (std::size_t t = 0; t < 3; ++t) {
    std::vector<Tensor> prefix(t, Tensor::from({hy.d_lat}, {0.3, -0.3}));
    auto g = prior_step_params(p, prefix);
    for (double v : g.mu.data()) REQUIRE(v == 0.0);
    for (double v : g.log_sigma.data()) REQUIRE(v == 0.0);
  }
}

TEST_CASE("prior_step_params is a pure function of the prefix") {
  auto hy = toy_hyper();
  Rng rng(3);
  DseParams p(hy, rng);
  std::vector<Tensor> prefix{Tensor::from({2}, {0.5, 0.1}),
                             Tensor::from({2}, {-0.2, 0.4})};
  auto a = prior_step_params(p, prefix);
  auto b = prior_step_params(p, prefix);
  REQUIRE(a.mu.data() == b.mu.data());
  REQUIRE(a.log_sigma.data() == b.log_sigma.data());
}

TEST_CASE("decode: zero weights give zeros; time-shared weights") {
  auto hy = toy_hyper();
  auto pz = DseParams::zeros(hy);
  auto lat = hand_latents({0.5, -0.5}, {{1, 2}, {1, 2}, {3, 4}, {1, 2}});
  auto xh = decode(pz, lat);
  for (const auto& f : xh)
    for (double v : f.data()) REQUIRE(v == 0.0);

  Rng rng(4);
  DseParams p(hy, rng);
  auto xh2 = decode(p, lat);
  // identical (z, s) at steps 0, 1, 3 decode identically
  REQUIRE(xh2[0].data() == xh2[1].data());
  REQUIRE(xh2[0].data() == xh2[3].data());
}

TEST_CASE("kl_gaussian closed forms and nonnegativity") {
  GaussianParams std_n{Tensor::zeros({1}), Tensor::zeros({1})};
  REQUIRE(kl_gaussian(std_n, std_n).item() == 0.0);

  GaussianParams q{Tensor::from({1}, {1.0}), Tensor::zeros({1})};
  REQUIRE(kl_gaussian(q, std_n).item() == Catch::Approx(0.5).margin(1e-12));

  Rng rng(6);
  for (int i = 0; i < 1000; ++i) {
    GaussianParams a{Tensor::from({3}, rng.gaussian_vec(3)),
                     Tensor::from({3}, rng.gaussian_vec(3, 0, 0.5))};
    GaussianParams b{Tensor::from({3}, rng.gaussian_vec(3)),
                     Tensor::from({3}, rng.gaussian_vec(3, 0, 0.5))};
    REQUIRE(kl_gaussian(a, b).item() >= -1e-12);
  }
}

TEST_CASE("contrastive_score values") {
  Tensor z = Tensor::from({2}, {0.6, -0.8});
  REQUIRE(contrastive_score(z, z, 0.5).item() ==
          Catch::Approx(std::exp(2.0)).epsilon(1e-12));
  Tensor orth = Tensor::from({2}, {0.8, 0.6});
  REQUIRE(contrastive_score(z, orth, 0.5).item() ==
          Catch::Approx(1.0).margin(1e-12));
  REQUIRE(contrastive_score(z, -1.0 * z, 0.5).item() ==
          Catch::Approx(std::exp(-2.0)).epsilon(1e-12));
  REQUIRE_THROWS_AS(contrastive_score(z, Tensor::zeros({2}), 0.5), TensorError);
}

TEST_CASE("contrastive_mi closed form and monotonicity in negatives") {
  Tensor a = Tensor::from({2}, {1, 0});
  Tensor orth = Tensor::from({2}, {0, 1});
  const double e2 = std::exp(2.0);
  REQUIRE(contrastive_mi(a, a, {orth}, 0.5).item() ==
          Catch::Approx(std::log(e2 / (e2 + 1))).margin(1e-12));

  double prev = 0.0;
  for (std::size_t n = 1; n <= 5; ++n) {
    std::vector<Tensor> negs(n, orth);
    const double v = contrastive_mi(a, a, negs, 0.5).item();
    REQUIRE(v == Catch::Approx(std::log(e2 / (e2 + n))).margin(1e-12));
    if (n > 1) REQUIRE(v < prev);
    REQUIRE(v < 0.0);
    prev = v;
  }
}

TEST_CASE("contrastive_mi is negative on random inputs") {
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    Tensor a = Tensor::from({3}, rng.gaussian_vec(3));
    Tensor p = Tensor::from({3}, rng.gaussian_vec(3));
    std::vector<Tensor> negs{Tensor::from({3}, rng.gaussian_vec(3)),
                             Tensor::from({3}, rng.gaussian_vec(3))};
    REQUIRE(contrastive_mi(a, p, negs, 0.5).item() < 0.0);
  }
}

TEST_CASE("content_augment preserves the frame multiset") {
  Rng data_rng(9);
  auto x = random_seq(5, 3, data_rng);
  Rng rng(10);
  auto y = content_augment(x, rng);
  auto key = [](const Tensor& t) { return t.data(); };
  std::vector<std::vector<double>> a, b;
  for (const auto& f : x) a.push_back(key(f));
  for (const auto& f : y) b.push_back(key(f));
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  REQUIRE(a == b);
  REQUIRE_THROWS_AS(content_augment({x[0]}, rng), TensorError);
}

TEST_CASE("content_augment T=2 is a fair coin") {
  Rng data_rng(11);
  auto x = random_seq(2, 2, data_rng);
  Rng rng(12);
  int swaps = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    auto y = content_augment(x, rng);
    if (y[0].data() == x[1].data()) ++swaps;
  }
  // binomial 3 sigma around n/2
  const double sigma = std::sqrt(n * 0.25);
  REQUIRE(std::abs(swaps - n / 2.0) <= 3.0 * sigma);
}

TEST_CASE("content_augment of identical frames is the identity") {
  FeatureSeq x(4, Tensor::from({2}, {1.0, 2.0}));
  Rng rng(13);
  auto y = content_augment(x, rng);
  for (std::size_t t = 0; t < 4; ++t) REQUIRE(y[t].data() == x[t].data());
}

TEST_CASE("motion_augment noise statistics and order preservation") {
  FeatureSeq x(2, Tensor::from({2}, {5.0, -3.0}));
  Rng rng(14);
  auto same = motion_augment(x, rng, 0.0);
  REQUIRE(same[0].data() == x[0].data());

  const double noise_std = 0.4;
  double sum = 0, sum2 = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    auto y = motion_augment(x, rng, noise_std);
    const double dlt = y[0][0] - x[0][0];
    sum += dlt;
    sum2 += dlt * dlt;
  }
  const double emp_std = std::sqrt(sum2 / n - (sum / n) * (sum / n));
  REQUIRE(std::abs(emp_std - noise_std) <= 0.05 * noise_std);
}

TEST_CASE("mi_terms matches hand evaluation on a batch of two") {
  auto hy = toy_hyper();
  hy.tau = 0.5;
  // Hand-set latents: only z_flat and s enter the estimator.
  std::vector<LatentFactors> lat{hand_latents({1, 0}, {{1, 0}}),
                                 hand_latents({0, 1}, {{0, 1}})};
  std::vector<LatentFactors> lat_c{hand_latents({1, 0}, {{0, 1}}),
                                   hand_latents({0, 1}, {{1, 0}})};
  std::vector<LatentFactors> lat_m{hand_latents({0, 1}, {{1, 0}}),
                                   hand_latents({1, 0}, {{0, 1}})};
  auto [i_z, i_s] = mi_terms(lat, lat_c, lat_m, hy);

  // Hand evaluation: every pairing is either aligned (cos 1) or orthogonal.
  auto term = [](double cp, double cn) {
    const double p = std::exp(cp / 0.5), q = std::exp(cn / 0.5);
    return std::log(p / (p + q));
  };
  // C(z): anchors z=(e1,e2), positives z^m=(e1,e2) aligned, negative other z orth.
  const double c_z = term(1, 0);
  const double c_zm = term(1, 0);
  // C(s): positives s^c=(e1,e2) aligned with s.
  const double c_s = term(1, 0);
  const double c_sc = term(1, 0);
  REQUIRE(i_z.item() == Catch::Approx(0.5 * (c_z + c_zm)).margin(1e-12));
  REQUIRE(i_s.item() == Catch::Approx(0.5 * (c_s + c_sc)).margin(1e-12));
  REQUIRE(i_z.item() <= 0.0);
  REQUIRE(i_s.item() <= 0.0);
}

TEST_CASE("mi_terms is invariant to batch ordering") {
  auto hy = toy_hyper();
  Rng rng(15);
  DseParams p(hy, rng);
  std::vector<FeatureSeq> xs;
  for (int i = 0; i < 3; ++i) xs.push_back(random_seq(hy.T, hy.d, rng));
  std::vector<LatentFactors> lat, lc, lm;
  Rng er(20);
  for (auto& x : xs) lat.push_back(encode(p, x, er));
  for (auto& x : xs) lc.push_back(encode(p, x, er));
  for (auto& x : xs) lm.push_back(encode(p, x, er));
  auto [a_z, a_s] = mi_terms(lat, lc, lm, hy);

  std::vector<std::size_t> perm{2, 0, 1};
  std::vector<LatentFactors> lat2, lc2, lm2;
  for (auto i : perm) {
    lat2.push_back(lat[i]);
    lc2.push_back(lc[i]);
    lm2.push_back(lm[i]);
  }
  auto [b_z, b_s] = mi_terms(lat2, lc2, lm2, hy);
  REQUIRE(a_z.item() == Catch::Approx(b_z.item()).margin(1e-12));
  REQUIRE(a_s.item() == Catch::Approx(b_s.item()).margin(1e-12));
}

TEST_CASE("mi_zs_penalty near-delta paired posteriors approach ln 2") {
  // Two samples with near-delta posteriors at distinct locations: the joint
  // mixture is perfectly paired, so the estimate is ln 2.
  const double tight = -9.0;  // log sigma, sigma ~ 1e-4
  auto mk = [&](std::vector<double> s_mu, std::vector<double> z_mu) {
    LatentFactors lat;
    const std::size_t dl = s_mu.size();
    lat.q_s = {Tensor::from({dl}, s_mu),
               Tensor::from({dl}, std::vector<double>(dl, tight))};
    lat.s = Tensor::from({dl}, s_mu);  // sample at the mode
    GaussianParams qz{Tensor::from({dl}, z_mu),
                      Tensor::from({dl}, std::vector<double>(dl, tight))};
    lat.q_z = {qz};
    lat.z = {Tensor::from({dl}, z_mu)};
    return lat;
  };
  std::vector<LatentFactors> lat{mk({5, 5}, {-5, -5}), mk({-5, 5}, {5, -5})};
  REQUIRE(mi_zs_penalty(lat).item() == Catch::Approx(std::log(2.0)).margin(1e-6));

  // Identical posteriors factorize: estimate ~ 0.
  std::vector<LatentFactors> same{mk({1, 1}, {2, 2}), mk({1, 1}, {2, 2})};
  REQUIRE(mi_zs_penalty(same).item() == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("mi_zs_penalty: shuffled pairing does not exceed true pairing") {
  auto mk = [&](std::vector<double> s_mu, std::vector<double> z_mu) {
    LatentFactors lat;
    const std::size_t dl = s_mu.size();
    lat.q_s = {Tensor::from({dl}, s_mu),
               Tensor::from({dl}, std::vector<double>(dl, -1.0))};
    lat.s = Tensor::from({dl}, s_mu);
    GaussianParams qz{Tensor::from({dl}, z_mu),
                      Tensor::from({dl}, std::vector<double>(dl, -1.0))};
    lat.q_z = {qz};
    lat.z = {Tensor::from({dl}, z_mu)};
    return lat;
  };
  Rng rng(16);
  double paired_sum = 0, shuffled_sum = 0;
  const int trials = 40;
  for (int t = 0; t < trials; ++t) {
    std::vector<LatentFactors> lat;
    for (int i = 0; i < 4; ++i) {
      auto mu = rng.gaussian_vec(2, 0, 2.0);
      // s and z correlated through the shared mu: informative pairing
      lat.push_back(mk(mu, {mu[0] + 0.1, mu[1] - 0.1}));
    }
    paired_sum += mi_zs_penalty(lat).item();
    // Break the pairing by rotating the z-side
    std::vector<LatentFactors> shuf = lat;
    for (int i = 0; i < 4; ++i) {
      shuf[i].q_z = lat[(i + 1) % 4].q_z;
      shuf[i].z = lat[(i + 1) % 4].z;
    }
    shuffled_sum += mi_zs_penalty(shuf).item();
  }
  REQUIRE(paired_sum / trials >= shuffled_sum / trials);
}

TEST_CASE("dse_loss with gamma=theta=0 is pure reconstruction") {
  auto hy = toy_hyper();
  hy.gamma = 0.0;
  hy.theta = 0.0;
  Rng rng(17);
  DseParams p(hy, rng);
  std::vector<FeatureSeq> batch{random_seq(hy.T, hy.d, rng),
                                random_seq(hy.T, hy.d, rng)};
  auto res = dse_loss(p, batch, hy, Rng(99));
  REQUIRE(res.loss.item() ==
          Catch::Approx(res.components.at("recon")).margin(1e-12));
  REQUIRE(res.components.at("kl_s") >= 0.0);
  REQUIRE(res.components.at("kl_z") >= 0.0);
}

TEST_CASE("dse_loss KL components are nonnegative for random params") {
  auto hy = toy_hyper();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    DseParams p(hy, rng);
    std::vector<FeatureSeq> batch{random_seq(hy.T, hy.d, rng),
                                  random_seq(hy.T, hy.d, rng)};
    auto res = dse_loss(p, batch, hy, Rng(seed + 1));
    REQUIRE(res.components.at("kl_s") >= 0.0);
    REQUIRE(res.components.at("kl_z") >= 0.0);
  }
}

TEST_CASE("full dse_loss gradient check at toy sizes") {
  auto hy = toy_hyper(4, 3, 2);
  Rng rng(18);
  DseParams p(hy, rng);
  std::vector<FeatureSeq> batch{random_seq(hy.T, hy.d, rng),
                                random_seq(hy.T, hy.d, rng)};
  auto f = [&] { return dse_loss(p, batch, hy, Rng(7)).loss; };
  std::vector<Tensor> leaves;
  for (auto& [name, t] : p.params("dse")) leaves.push_back(t);
  REQUIRE(grad_check(f, leaves, 1e-5, 4) <= 1e-4);
}

TEST_CASE("pair_contrastive_losses hinge behavior") {
  Tensor s = Tensor::from({2}, {0.6, 0.8});
  auto [ls_same, lz_same] = pair_contrastive_losses(s, s, s, s, 0.2);
  REQUIRE(ls_same.item() == Catch::Approx(0.8).margin(1e-12));

  Tensor orth = Tensor::from({2}, {-0.8, 0.6});
  auto [ls_o, lz_o] = pair_contrastive_losses(s, orth, s, orth, 0.1);
  REQUIRE(ls_o.item() == 0.0);
  REQUIRE(lz_o.item() == 0.0);

  Rng rng(19);
  for (int i = 0; i < 1000; ++i) {
    Tensor a = Tensor::from({3}, rng.gaussian_vec(3));
    Tensor b = Tensor::from({3}, rng.gaussian_vec(3));
    const double delta = 0.3;
    auto [l, _] = pair_contrastive_losses(a, b, a, b, delta);
    REQUIRE(l.item() >= 0.0);
    REQUIRE(l.item() <= 1.0 - delta + 1e-12);
  }
}

TEST_CASE("dse_plus_loss reduces to dse_loss with inactive hinge") {
  auto hy = toy_hyper();
  hy.delta = 0.999999;  // hinge active only at cosine ~ 1
  Rng rng(21);
  DseParams p(hy, rng);
  std::vector<std::pair<FeatureSeq, FeatureSeq>> pairs{
      {random_seq(hy.T, hy.d, rng), random_seq(hy.T, hy.d, rng)}};
  // Need >= 2 samples for negatives: one pair flattens to 2 sequences.
  auto plus = dse_plus_loss(p, pairs, hy, Rng(3));
  std::vector<FeatureSeq> flat{pairs[0].first, pairs[0].second};
  auto base = dse_loss(p, flat, hy, Rng(3));
  REQUIRE(plus.loss.item() == Catch::Approx(base.loss.item()).margin(1e-9));
}

TEST_CASE("dse_plus_loss gradient check at toy sizes") {
  auto hy = toy_hyper(3, 2, 2);
  Rng rng(22);
  DseParams p(hy, rng);
  std::vector<std::pair<FeatureSeq, FeatureSeq>> pairs{
      {random_seq(hy.T, hy.d, rng), random_seq(hy.T, hy.d, rng)}};
  auto f = [&] { return dse_plus_loss(p, pairs, hy, Rng(5)).loss; };
  std::vector<Tensor> leaves;
  for (auto& [name, t] : p.params("dse")) leaves.push_back(t);
  REQUIRE(grad_check(f, leaves, 1e-5, 4) <= 1e-4);
}

TEST_CASE("dse_plus_loss decreases over 200 plain gradient steps") {
  auto hy = toy_hyper(3, 3, 2);
  Rng rng(23);
  DseParams p(hy, rng);
  std::vector<std::pair<FeatureSeq, FeatureSeq>> pairs{
      {random_seq(hy.T, hy.d, rng), random_seq(hy.T, hy.d, rng)},
      {random_seq(hy.T, hy.d, rng), random_seq(hy.T, hy.d, rng)}};
  auto leaves = p.params("dse");
  double first = 0, last = 0;
  for (int step = 0; step < 200; ++step) {
    for (auto& [n, t] : leaves) t.zero_grad();
    auto res = dse_plus_loss(p, pairs, hy, Rng(31));
    if (step == 0) first = res.loss.item();
    last = res.loss.item();
    res.loss.backward();
    for (auto& [n, t] : leaves) {
      auto& d = t.data_mut();
      const auto& g = t.grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= 1e-3 * g[i];
    }
  }
  REQUIRE(last < first);
}
