#include "doctest.h"
#include "support/gradcheck.hpp"

#include "mmif/objectives/losses.hpp"

#include <Eigen/SVD>

using namespace mmif;
using namespace mmif::objectives;

namespace {

Var<double> filled(Shape s, double v) { return constant(Tensor<double>::constant(std::move(s), v)); }

}  // namespace

TEST_CASE("cross-entropy terms have the textbook values") {
  // p = 0.5 against a hard label costs ln 2 per pixel.
  CHECK(bce_loss(filled(Shape{1, 1, 2, 2}, 0.5), filled(Shape{1, 1, 2, 2}, 1.0)).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // Uniform over four classes costs ln 4.
  Tensor<double> onehot(Shape{1, 4, 2, 2});
  for (Index i = 0; i < 4; ++i) onehot[(i % 4) * 4 + i] = 1.0;
  CHECK(ce_loss(filled(Shape{1, 4, 2, 2}, 0.25), constant(onehot)).item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  // Clamping keeps confident mistakes finite.
  const double capped = bce_loss(filled(Shape{1, 1, 1, 1}, 0.0), filled(Shape{1, 1, 1, 1}, 1.0)).item();
  CHECK(capped == doctest::Approx(-std::log(kProbEps)).epsilon(1e-9));
}

TEST_CASE("perceptual distance of a unit offset in every feature is sqrt(N)/N") {
  const Index n = 16;
  std::vector<Var<double>> a{filled(Shape{1, 1, 4, 4}, 1.0)}, b{filled(Shape{1, 1, 4, 4}, 0.0)};
  CHECK(perceptual_loss(a, b).item() == doctest::Approx(std::sqrt(double(n)) / double(n)).epsilon(1e-14));
  CHECK(perceptual_loss(a, a).item() == 0.0);
}

TEST_CASE("fidelity loss is the per-sample euclidean gap averaged over the batch") {
  Tensor<double> w(Shape{2, 1, 2});
  w[0] = 3; w[1] = 4;  // |(3,4)| = 5
  w[2] = 0; w[3] = 0;  // 0
  CHECK(fidelity_loss(constant(w), filled(Shape{1, 2}, 0.0)).item() == doctest::Approx(2.5).epsilon(1e-14));
}

TEST_CASE("hinge losses on hand-picked scores") {
  Tensor<double> real(Shape{2}), fake(Shape{2});
  real[0] = 2.0; real[1] = 0.5;   // relu(1-r): 0, 0.5
  fake[0] = -3.0; fake[1] = 0.0;  // relu(1+f): 0, 1
  CHECK(discriminator_loss(constant(real), constant(fake)).item() == doctest::Approx(0.25 + 0.5).epsilon(1e-14));
  CHECK(adversarial_g_loss(constant(fake)).item() == doctest::Approx(1.5).epsilon(1e-14));
  CHECK(nonsaturating_g_loss(filled(Shape{1}, 0.0)).item() == doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("total loss combines weights and names the first non-finite term") {
  auto one = filled(Shape{1}, 1.0);
  CHECK(total_loss(one, filled(Shape{1}, 2.0), filled(Shape{1}, 4.0), LossWeights{}).item() ==
        doctest::Approx(1.0 + 0.5 * 2.0 + 0.005 * 4.0));
  auto nan = filled(Shape{1}, std::nan(""));
  CHECK_THROWS_WITH_AS(total_loss(one, nan, one, LossWeights{}), doctest::Contains("msr"), LossError);
  CHECK_THROWS_WITH_AS(total_loss(one, one, filled(Shape{1}, INFINITY), LossWeights{}), doctest::Contains("fidelity"),
                       LossError);
}

TEST_CASE("multi-scale targets pool images, dilate edges and keep labels") {
  Tensor<double> rgb(Shape{1, 3, 8, 8}), edge(Shape{1, 1, 8, 8});
  for (Index i = 0; i < rgb.size(); ++i) rgb[i] = static_cast<double>(i % 5);
  edge[(3 * 8) + 5] = 1.0;
  Tensor<std::int32_t> labels(Shape{1, 8, 8});
  for (Index i = 0; i < 64; ++i) labels[i] = (i % 8) < 4 ? 0 : 1;
  auto t = make_targets(rgb, edge, labels, 2);
  CHECK(t.rgb[0].shape() == Shape({1, 3, 2, 2}));
  CHECK(t.rgb[2].value().data().isApprox(rgb.data()));
  double mean = 0;
  for (Index y = 0; y < 4; ++y)
    for (Index x = 0; x < 4; ++x) mean += rgb[y * 8 + x] / 16;
  CHECK(t.rgb[0].value()[0] == doctest::Approx(mean));
  CHECK(t.edge[0].value().data().sum() == 1.0);
  CHECK(t.edge[0].value()[1] == 1.0);  // (y=0, x=1) at stride 4
  CHECK(t.onehot[1].value().data().sum() == 16.0);
  CHECK_THROWS(make_targets(rgb, edge, labels, 1));
}

TEST_CASE("spectral normalization divides by the leading singular value") {
  Rng rng(1);
  Tensor<double> diag(Shape{2, 2, 1, 1});
  diag[0] = 3.0;
  diag[3] = 1.0;
  SpectralNorm<double> sn(diag, rng);
  auto w = sn(constant(diag), true);
  CHECK(w.value()[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(w.value()[3] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  Tensor<double> r = normal_tensor<double>(Shape{4, 3, 3, 3}, rng);
  SpectralNorm<double> sn2(r, rng, 200);
  Eigen::MatrixXd m = Eigen::Map<const Eigen::Matrix<double, -1, -1, Eigen::RowMajor>>(r.ptr(), 4, 27);
  const double sigma = Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
  auto wn = sn2(constant(r), false);
  CHECK(wn.value()[0] == doctest::Approx(r[0] / sigma).epsilon(1e-9));
}

TEST_CASE("discriminator keeps its normalized weights at unit spectral norm") {
  Rng rng(2);
  Discriminator<double> d(4, 2, rng);
  auto scores = d(testing::random_input(Shape{2, 4, 32, 32}, rng));
  CHECK(scores.shape() == Shape({2, 1, 2, 2}));
  for (const auto& w : d.normalized_weights()) {
    Eigen::MatrixXd m = Eigen::Map<const Eigen::Matrix<double, -1, -1, Eigen::RowMajor>>(w.ptr(), w.dim(0), w.size() / w.dim(0));
    CHECK(Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0) == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("feature extractor is frozen and deterministic") {
  FeatureExtractor<float> a(7), b(7);
  Rng rng(3);
  Tensor<float> img = normal_tensor<float>(Shape{2, 3, 32, 32}, rng);
  auto ea = a.embed(img), eb = b.embed(img);
  CHECK(ea.dim(0) == 2);
  CHECK((ea.data() == eb.data()).all());
  for (const auto& c : a.convs) CHECK_FALSE(c.weight.requires_grad());
}
