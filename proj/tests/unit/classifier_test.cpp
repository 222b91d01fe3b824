#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "../oracle/oracle.hpp"
#include "ksteer/classifier.hpp"
#include "ksteer/datasets.hpp"
#include "ksteer/error.hpp"
#include "ksteer/numeric.hpp"

using namespace ksteer;

namespace {

Tensor2 random_activation(SeededRng& rng, std::size_t rows, std::size_t cols, float scale = 1.0f) {
    return gaussian_matrix(rng, rows, cols, scale);
}

// Hidden layers biased far into the ReLU's linear region, so the whole
// network is affine on inputs of moderate size.
MlpClassifier affine_classifier(std::size_t d, std::size_t k, std::uint64_t seed) {
    SeededRng rng(seed);
    const std::size_t h = 8;
    DenseLayer l1{gaussian_matrix(rng, h, d, 0.3f), std::vector<float>(h, 50.0f)};
    DenseLayer l2{gaussian_matrix(rng, h, h, 0.3f), std::vector<float>(h, 500.0f)};
    DenseLayer l3{gaussian_matrix(rng, k, h, 0.3f), std::vector<float>(k, 0.0f)};
    return MlpClassifier(std::move(l1), std::move(l2), std::move(l3));
}

}  // namespace

TEST_CASE("forward logits") {
    SeededRng rng(1);
    SUBCASE("zero classifier gives zero logits") {
        auto clf = MlpClassifier::zeros(8, 3);
        auto z = clf.forward_logits(random_activation(rng, 4, 8));
        for (float v : z.values()) CHECK(v == 0.0f);
    }
    SUBCASE("positions are independent") {
        auto clf = MlpClassifier::initialized(8, 3, 2);
        auto a = random_activation(rng, 3, 8);
        for (std::size_t c = 0; c < 8; ++c) a(2, c) = a(0, c);
        auto z = clf.forward_logits(a);
        for (std::size_t k = 0; k < 3; ++k) CHECK(z(0, k) == z(2, k));
    }
    SUBCASE("matches the 64-bit straight-line oracle") {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            auto clf = MlpClassifier::initialized(32, 6, seed);
            auto a = random_activation(rng, 4, 32);
            auto z = clf.forward_logits(a);
            auto ref = oracle::forward_logits(clf, oracle::Matrix64(a));
            CHECK(oracle::scaled_error(z.values(), ref.data) < 1e-5);
        }
    }
    SUBCASE("dimension mismatch") {
        auto clf = MlpClassifier::initialized(8, 3, 2);
        CHECK_THROWS_AS((void)clf.forward_logits(Tensor2(1, 7)), ShapeError);
    }
}

TEST_CASE("predict_probs") {
    auto clf = MlpClassifier::initialized(16, 4, 5);
    SeededRng rng(2);
    auto p = clf.predict_probs(random_activation(rng, 5, 16));
    for (std::size_t r = 0; r < 5; ++r) {
        double s = 0;
        for (std::size_t k = 0; k < 4; ++k) s += p(r, k);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
    auto u = MlpClassifier::zeros(4, 4).predict_probs(Tensor2(1, 4));
    for (float v : u.values()) CHECK(v == doctest::Approx(0.25));
    auto two = softmax(std::vector<float>{std::log(3.0f), 0.0f});
    CHECK(two[0] == doctest::Approx(0.75).epsilon(1e-6));
    CHECK(two[1] == doctest::Approx(0.25).epsilon(1e-6));
    auto up = softmax(std::vector<float>{0.5f, 0.2f, 0.1f});
    auto up2 = softmax(std::vector<float>{0.6f, 0.2f, 0.1f});
    CHECK(up2[0] > up[0]);
}

TEST_CASE("steering loss") {
    const float c = 1.75f;
    Tensor2 logits(3, 4, c);
    LossSpec t0{{0}, {}};
    LossSpec t0a1{{0}, {1}};
    CHECK(steering_loss(logits, t0) == doctest::Approx(-c));
    CHECK(steering_loss(logits, t0a1) == doctest::Approx(0.0));

    SeededRng rng(4);
    auto z = random_activation(rng, 3, 4);
    LossSpec spec{{0, 2}, {1}};
    CHECK(steering_loss(z, spec) ==
          doctest::Approx(oracle::steering_loss(oracle::Matrix64(z), spec)).epsilon(1e-6));

    LossSpec only_t{{0, 2}, {}}, only_a{{}, {1}};
    CHECK(steering_loss(z, spec) ==
          doctest::Approx(steering_loss(z, only_t) + steering_loss(z, only_a)).epsilon(1e-6));
    Tensor2 z3 = z;
    for (auto& v : z3.values()) v *= 3.0f;
    CHECK(steering_loss(z3, spec) == doctest::Approx(3.0 * steering_loss(z, spec)).epsilon(1e-5));

    CHECK_THROWS_AS((void)steering_loss(z, LossSpec{}), InvalidInput);
    CHECK_THROWS_AS((LossSpec{{0}, {0}}.validate(4)), InvalidInput);
    CHECK_THROWS_AS((LossSpec{{4}, {}}.validate(4)), InvalidInput);
    CHECK_THROWS_AS((LossSpec{{1, 1}, {}}.validate(4)), InvalidInput);
}

TEST_CASE("input gradient") {
    SeededRng rng(6);
    SUBCASE("zero weights give a zero gradient") {
        auto g = input_gradient(MlpClassifier::zeros(8, 3), random_activation(rng, 2, 8), {{0}, {1}});
        for (float v : g.values()) CHECK(v == 0.0f);
    }
    SUBCASE("duplicated rows get identical gradients") {
        auto clf = MlpClassifier::initialized(8, 3, 1);
        auto a = random_activation(rng, 3, 8);
        for (std::size_t c = 0; c < 8; ++c) a(1, c) = a(0, c);
        auto g = input_gradient(clf, a, {{2}, {}});
        for (std::size_t c = 0; c < 8; ++c) CHECK(g(0, c) == g(1, c));
    }
    SUBCASE("matches central differences") {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            auto clf = MlpClassifier::initialized(12, 4, seed);
            auto a = random_activation(rng, 2, 12);
            LossSpec spec{{seed % 4}, {(seed + 1) % 4}};
            auto g = input_gradient(clf, a, spec);
            auto check = oracle::check_gradient(clf, a, spec, g.values(), 1e-4);
            CHECK(check.checked > 0);
            CHECK(check.max_rel_error < 1e-4);
        }
    }
    SUBCASE("loss_and_gradient agrees with the separate calls") {
        auto clf = MlpClassifier::initialized(8, 3, 3);
        auto a = random_activation(rng, 2, 8);
        LossSpec spec{{0}, {2}};
        auto lg = loss_and_gradient(clf, a, spec);
        CHECK(lg.loss == steering_loss(clf.forward_logits(a), spec));
        CHECK(lg.gradient == input_gradient(clf, a, spec));
    }
}

TEST_CASE("finite-difference oracle") {
    SeededRng rng(8);
    SUBCASE("exact on an affine classifier") {
        auto clf = affine_classifier(6, 3, 1);
        auto a = random_activation(rng, 2, 6, 0.5f);
        LossSpec spec{{0}, {1}};
        auto g = input_gradient(clf, a, spec);
        auto fd = oracle::fd_gradient(clf, a, spec, 1e-4);
        // Reference: the affine map's gradient computed in 64-bit from the weights.
        const auto& L = clf.layers();
        std::vector<double> w(6, 0.0);
        for (std::size_t i = 0; i < 6; ++i) {
            for (std::size_t h2 = 0; h2 < 8; ++h2) {
                const double top = -double(L[2].weight(0, h2)) + double(L[2].weight(1, h2));
                for (std::size_t h1 = 0; h1 < 8; ++h1)
                    w[i] += top * L[1].weight(h2, h1) * L[0].weight(h1, i);
            }
        }
        for (std::size_t r = 0; r < 2; ++r)
            for (std::size_t i = 0; i < 6; ++i) {
                CHECK(std::abs(fd(r, i) - w[i] / 2.0) < 1e-8);
                CHECK(g(r, i) == doctest::Approx(w[i] / 2.0).epsilon(1e-4));
            }
    }
    SUBCASE("second-order convergence") {
        // A smooth point of a small random net: halving h cuts the error ~4x.
        auto clf = MlpClassifier::initialized(4, 2, 3, 8);
        auto a = random_activation(rng, 1, 4);
        LossSpec spec{{0}, {}};
        // Reference: Richardson extrapolation of the two finer estimates.
        auto f1 = oracle::fd_gradient(clf, a, spec, 1e-2);
        auto f2 = oracle::fd_gradient(clf, a, spec, 5e-3);
        auto f3 = oracle::fd_gradient(clf, a, spec, 2.5e-3);
        double e1 = 0, e2 = 0;
        for (std::size_t i = 0; i < 4; ++i) {
            const double ref = (4.0 * f3.data[i] - f2.data[i]) / 3.0;
            e1 += std::abs(f1.data[i] - ref);
            e2 += std::abs(f2.data[i] - ref);
        }
        if (e1 > 1e-9) CHECK(e1 / e2 > 3.0);
    }
    SUBCASE("zero weights give zero") {
        auto fd = oracle::fd_gradient(MlpClassifier::zeros(4, 2), random_activation(rng, 1, 4), {{0}, {}}, 1e-4);
        for (double v : fd.data) CHECK(v == 0.0);
    }
}

TEST_CASE("training") {
    SynthConfig cfg;
    cfg.kind = SynthKind::linear;
    cfg.d_model = 16;
    cfg.n_per_class = 200;
    cfg.sigma = 0.1f;
    cfg.seed = 3;
    auto data = synth_planted_set(cfg);
    TrainConfig tc;
    tc.seed = 1;
    auto a = train(MlpClassifier::initialized(16, 2, 0), data, tc);
    CHECK(a.loss_history.size() == tc.epochs);
    CHECK(accuracy(a.classifier, data) >= 0.99);
    auto b = train(MlpClassifier::initialized(16, 2, 0), data, tc);
    CHECK(a.classifier == b.classifier);

    TrainConfig bad;
    bad.epochs = 0;
    CHECK_THROWS_AS(bad.validate(), InvalidInput);
    auto wrong = data;
    wrong.entries[0].label = 5;
    CHECK_THROWS_AS((void)train(MlpClassifier::initialized(16, 2, 0), wrong, tc), InvalidLabel);
}

TEST_CASE("KSCL checkpoints") {
    auto clf = MlpClassifier::initialized(8, 3, 4, 16);
    auto bytes = encode_classifier(clf);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "KSCL");
    CHECK(decode_classifier(bytes) == clf);
    auto path = std::filesystem::temp_directory_path() / "ksteer_unit.kscl";
    save_classifier(clf, path);
    CHECK(load_classifier(path) == clf);
    std::filesystem::remove(path);

    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS((void)decode_classifier(bad), FormatError);
    bytes.pop_back();
    CHECK_THROWS_AS((void)decode_classifier(bytes), FormatError);
}
