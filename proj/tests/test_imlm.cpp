#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "rdcl/gradcheck.hpp"
#include "rdcl/imlm.hpp"

using namespace rdcl;

TEST_CASE("mark_missing sizes and disjointness") {
  Rng rng(1);
  auto empty = mark_missing(10, 0.0, rng);
  REQUIRE(empty.b_miss.empty());
  REQUIRE(empty.b_com.size() == 10);

  auto full = mark_missing(10, 1.0, rng);
  REQUIRE(full.b_com.empty());
  REQUIRE(full.b_miss.size() == 10);

  auto part = mark_missing(10, 0.3, rng);
  REQUIRE(part.b_miss.size() == 3);
  REQUIRE(part.b_com.size() == 7);
  std::vector<std::size_t> all = part.b_miss;
  all.insert(all.end(), part.b_com.begin(), part.b_com.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 10; ++i) REQUIRE(all[i] == i);
  REQUIRE(std::is_sorted(part.b_miss.begin(), part.b_miss.end()));

  REQUIRE_THROWS_AS(mark_missing(10, -0.1, rng), TensorError);
  REQUIRE_THROWS_AS(mark_missing(10, 1.1, rng), TensorError);
}

TEST_CASE("mark_missing floor semantics and uniformity smoke") {
  Rng rng(2);
  REQUIRE(mark_missing(7, 0.5, rng).b_miss.size() == 3);
  // index 0 appears in b_miss about alpha of the time
  int hits = 0;
  const int n = 2000;
  for (int i = 0; i < n; ++i) {
    auto m = mark_missing(5, 0.4, rng);
    if (std::find(m.b_miss.begin(), m.b_miss.end(), 0u) != m.b_miss.end())
      ++hits;
  }
  REQUIRE(std::abs(hits / static_cast<double>(n) - 0.4) < 0.05);
}

TEST_CASE("shared and unique encoders share weights across modalities") {
  Rng rng(3);
  ImlmParams p(4, 3, rng);
  Tensor x = Tensor::from({4}, rng.gaussian_vec(4));
  REQUIRE(encode_shared(p, x).data() == encode_shared(p, x).data());
  // Same input regardless of which modality it plays
  Tensor audio_view = encode_shared(p, x);
  Tensor video_view = encode_shared(p, x);
  REQUIRE(audio_view.data() == video_view.data());

  auto pz = ImlmParams::zeros(4, 3);
  Tensor zs = encode_shared(pz, x);
  Tensor zu = encode_unique(pz, x);
  for (double v : zs.data()) REQUIRE(v == 0.0);
  for (double v : zu.data()) REQUIRE(v == 0.0);

  REQUIRE_THROWS_AS(encode_shared(p, x, /*missing=*/true), TensorError);
  REQUIRE_THROWS_AS(encode_unique(p, x, /*missing=*/true), TensorError);
}

TEST_CASE("f_share and f_unique have independent parameters") {
  Rng rng(4);
  ImlmParams p(3, 3, rng);
  Tensor x = Tensor::from({3}, {0.5, -1.0, 2.0});
  auto before = encode_unique(p, x).data();
  p.f_share.hidden.weight.data_mut()[0] += 10.0;
  REQUIRE(encode_unique(p, x).data() == before);
}

TEST_CASE("project_residual identity and linearity") {
  Rng rng(5);
  ImlmParams p(3, 2, rng);  // out layer zeroed at init
  Tensor r_s = Tensor::from({2}, {0.5, -0.5});
  Tensor r_u = Tensor::from({2}, {1.5, 0.2});
  Tensor x = Tensor::from({3}, {1, 2, 3});
  REQUIRE(project_residual(p, r_s, r_u, x).data() == x.data());

  // after perturbing the projection, linearity in x still holds
  p.f_pro.out_weight.data_mut()[0] = 0.7;
  Tensor y1 = project_residual(p, r_s, r_u, x);
  Tensor y2 = project_residual(p, r_s, r_u, x + 1.0);
  for (std::size_t i = 0; i < 3; ++i)
    REQUIRE(y2[i] == Catch::Approx(y1[i] + 1.0).margin(1e-12));
}

TEST_CASE("dead projection has identically zero gradients") {
  Rng rng(6);
  ImlmParams p(3, 2, rng, /*dead_projection=*/true);
  Tensor r_s = Tensor::from({2}, {0.5, -0.5});
  Tensor r_u = Tensor::from({2}, {1.5, 0.2});
  Tensor x = Tensor::from({3}, {1, 2, 3});
  Tensor loss = squared_norm(project_residual(p, r_s, r_u, x));
  loss.backward();
  for (const auto& [name, t] : p.f_pro.params("pro"))
    if (t.has_grad())
      for (double g : t.grad()) REQUIRE(g == 0.0);
}

TEST_CASE("completion operations") {
  Tensor z = Tensor::from({2}, {1, 2});
  Tensor s = Tensor::from({2}, {3, 4});
  REQUIRE(complete_shared_audio(z, s).data() == std::vector<double>{2, 3});
  REQUIRE(complete_shared_audio(s, z).data() ==
          complete_shared_audio(z, s).data());
  REQUIRE(complete_shared_audio(z, z).data() == z.data());

  REQUIRE(complete_shared_general({z}).data() == z.data());
  REQUIRE(complete_shared_general({z, s}).data() ==
          complete_shared_audio(z, s).data());
  REQUIRE(complete_shared_general({s, z}).data() ==
          complete_shared_general({z, s}).data());
  REQUIRE_THROWS_AS(complete_shared_general({}), TensorError);

  Tensor a = Tensor::from({2}, {0, 2});
  Tensor b = Tensor::from({2}, {4, 6});
  REQUIRE(complete_unique({a, b}).data() == std::vector<double>{2, 4});
  REQUIRE(complete_unique({b, a}).data() == std::vector<double>{2, 4});
  REQUIRE(complete_unique({a}).data() == a.data());
  REQUIRE_THROWS_AS(complete_unique({}), TensorError);
}

TEST_CASE("complete_unique detaches from the sources") {
  Tensor a = Tensor::param({2}, {1.0, 3.0});
  Tensor m = complete_unique({a, a});
  Tensor loss = squared_norm(m);
  loss.backward();
  REQUIRE_FALSE(a.has_grad());
}

TEST_CASE("unique_loss closed forms") {
  // zero heads: sigmoid(0) = 0.5 everywhere -> ln 2
  auto pz = ImlmParams::zeros(3, 2);
  std::vector<std::vector<Tensor>> batch{
      {Tensor::from({2}, {1, 0}), Tensor::from({2}, {0, 1}),
       Tensor::from({2}, {1, 1})}};
  REQUIRE(unique_loss(pz, batch).item() ==
          Catch::Approx(std::log(2.0)).margin(1e-12));

  // near-perfect heads: huge logits with the right sign
  Rng rng(7);
  ImlmParams p(3, 2, rng);
  auto set_head = [](Linear& h, double w0, double w1, double b) {
    h.weight.data_mut() = {w0, w1};
    h.bias.data_mut() = {b};
  };
  // features: audio=(1,0), static=(0,1), dynamic=(-1,-1)
  std::vector<std::vector<Tensor>> feats{
      {Tensor::from({2}, {1, 0}), Tensor::from({2}, {0, 1}),
       Tensor::from({2}, {-1, -1})}};
  set_head(p.head_audio, 100, -100, -50);     // fires only on (1,0)
  set_head(p.head_static, -100, 100, -50);    // fires only on (0,1)
  set_head(p.head_dynamic, -100, -100, -100); // fires only on (-1,-1)
  // off-diagonal logits: audio head on static = -100 -> prob ~ 0
  const double l = unique_loss(p, feats).item();
  REQUIRE(l >= 0.0);
  REQUIRE(l <= 1e-6);

  REQUIRE_THROWS_AS(unique_loss(p, {}), TensorError);
}

TEST_CASE("unique_loss is nonnegative on random inputs") {
  Rng rng(8);
  for (int i = 0; i < 100; ++i) {
    ImlmParams p(3, 2, rng);
    std::vector<std::vector<Tensor>> batch{
        {Tensor::from({2}, rng.gaussian_vec(2)),
         Tensor::from({2}, rng.gaussian_vec(2)),
         Tensor::from({2}, rng.gaussian_vec(2))}};
    REQUIRE(unique_loss(p, batch).item() >= 0.0);
  }
}

TEST_CASE("share_loss hand example and symmetry") {
  std::vector<Tensor> a{Tensor::from({2}, {0, 0})};
  std::vector<Tensor> z{Tensor::from({2}, {1, 0})};
  std::vector<Tensor> s{Tensor::from({2}, {1, 1})};
  REQUIRE(share_loss(a, z, s).item() == Catch::Approx(8.0).margin(1e-12));
  REQUIRE(share_loss(z, s, a).item() == Catch::Approx(8.0).margin(1e-12));
  REQUIRE(share_loss(s, a, z).item() == Catch::Approx(8.0).margin(1e-12));

  REQUIRE(share_loss(a, a, a).item() == 0.0);

  Rng rng(9);
  std::vector<Tensor> ra{Tensor::from({3}, rng.gaussian_vec(3))};
  std::vector<Tensor> rz{Tensor::from({3}, rng.gaussian_vec(3))};
  std::vector<Tensor> rs{Tensor::from({3}, rng.gaussian_vec(3))};
  REQUIRE(share_loss(ra, rz, rs).item() > 0.0);
}

TEST_CASE("share_loss zero iff all equal") {
  std::vector<Tensor> a{Tensor::from({2}, {1, 2})};
  std::vector<Tensor> b{Tensor::from({2}, {1, 2.000001})};
  REQUIRE(share_loss(a, a, b).item() > 0.0);
}

TEST_CASE("imlm_loss is a plain sum") {
  REQUIRE(imlm_loss(Tensor::scalar(0), Tensor::scalar(0)).item() == 0.0);
  REQUIRE(imlm_loss(Tensor::scalar(std::log(2.0)), Tensor::scalar(8.0)).item() ==
          Catch::Approx(0.693147 + 8.0).margin(1e-6));
}

TEST_CASE("imlm losses pass gradient checks") {
  Rng rng(10);
  ImlmParams p(3, 2, rng);
  Tensor xa = Tensor::param({3}, rng.gaussian_vec(3));
  Tensor xs = Tensor::param({3}, rng.gaussian_vec(3));
  Tensor xd = Tensor::param({3}, rng.gaussian_vec(3));

  auto f = [&] {
    std::vector<Tensor> sh{encode_shared(p, xa), encode_shared(p, xs),
                           encode_shared(p, xd)};
    std::vector<std::vector<Tensor>> un{
        {encode_unique(p, xa), encode_unique(p, xs), encode_unique(p, xd)}};
    Tensor proj = project_residual(p, sh[0], un[0][0], xa);
    return imlm_loss(unique_loss(p, un), share_loss({sh[0]}, {sh[1]}, {sh[2]})) +
           squared_norm(proj);
  };
  std::vector<Tensor> leaves{xa, xs, xd};
  for (auto& [name, t] : p.params("imlm")) leaves.push_back(t);
  REQUIRE(grad_check(f, leaves, 1e-5, 4) <= 1e-4);
}
