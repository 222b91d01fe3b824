#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "../oracle/oracle.hpp"
#include "ksteer/error.hpp"
#include "ksteer/numeric.hpp"
#include "ksteer/steering.hpp"

using namespace ksteer;

namespace {

std::vector<float> row_of(const Tensor2& t, std::size_t r) {
    return {t.row(r).begin(), t.row(r).end()};
}

SteeringSpec gradient_spec(float alpha, std::size_t steps, float gamma = 1.0f) {
    SteeringSpec s;
    s.loss = {{0}, {1}};
    s.alpha = alpha;
    s.steps = steps;
    s.gamma = gamma;
    s.layers = {0};
    return s;
}

}  // namespace

TEST_CASE("step sizes decay geometrically") {
    auto s = step_sizes(1.0f, 0.5f, 3);
    REQUIRE(s.size() == 3);
    CHECK(s[0] == 1.0f);
    CHECK(s[1] == 0.5f);
    CHECK(s[2] == 0.25f);
}

TEST_CASE("gradient steering") {
    auto clf = MlpClassifier::initialized(16, 4, 3);
    SeededRng rng(5);
    auto a = gaussian_matrix(rng, 4, 16, 1.0f);
    SUBCASE("alpha 0 or zero steps is the identity") {
        CHECK(gradient_steer(a, clf, gradient_spec(0.0f, 5)) == a);
        CHECK(gradient_steer(a, clf, gradient_spec(2.0f, 0)) == a);
    }
    SUBCASE("one step is a - alpha * input_gradient") {
        auto spec = gradient_spec(0.7f, 1);
        auto g = input_gradient(clf, a, spec.loss);
        Tensor2 expected = a;
        for (std::size_t i = 0; i < a.size(); ++i) expected.values()[i] -= 0.7f * g.values()[i];
        CHECK(gradient_steer(a, clf, spec) == expected);
    }
    SUBCASE("steps recompute the gradient with decayed sizes") {
        auto spec = gradient_spec(0.5f, 3, 0.5f);
        Tensor2 x = a;
        for (float eta : {0.5f, 0.25f, 0.125f}) {
            auto g = input_gradient(clf, x, spec.loss);
            for (std::size_t i = 0; i < x.size(); ++i) x.values()[i] -= eta * g.values()[i];
        }
        CHECK(gradient_steer(a, clf, spec) == x);
    }
    SUBCASE("non-finite intermediate names the step") {
        auto loud = clf;
        for (float& w : loud.layers()[2].weight.values()) w *= 1e20f;
        try {
            (void)gradient_steer(a, loud, gradient_spec(1e20f, 3));
            FAIL("expected NumericOverflow");
        } catch (const NumericOverflow& e) {
            CHECK(e.step() == 0);
        }
    }
    SUBCASE("shape mismatch") {
        CHECK_THROWS_AS((void)gradient_steer(Tensor2(2, 5), clf, gradient_spec(1.0f, 1)), ShapeError);
    }
}

TEST_CASE("spec validation") {
    auto s = gradient_spec(1.0f, 1);
    s.gamma = 0.0f;
    CHECK_THROWS_AS(s.validate(), InvalidInput);
    s = gradient_spec(-1.0f, 1);
    CHECK_THROWS_AS(s.validate(), InvalidInput);
    s = gradient_spec(1.0f, 1);
    s.layers.clear();
    CHECK_THROWS_AS(s.validate(), InvalidInput);
    CHECK(parse_method("projection_removal") == SteeringMethod::projection_removal);
    CHECK(method_name(SteeringMethod::caa_add) == "caa_add");
    CHECK_THROWS_AS((void)parse_method("dct"), InvalidInput);
}

TEST_CASE("householder reflection") {
    std::vector<float> n{0.0f, 2.0f, 0.0f};
    std::vector<float> orth{3.0f, 0.0f, -1.0f};
    auto r = orth;
    CHECK(householder_reflect(r, n));
    CHECK(r == orth);
    std::vector<float> par{0.0f, -1.5f, 0.0f};
    CHECK(householder_reflect(par, n));
    CHECK(par == std::vector<float>{0.0f, 1.5f, 0.0f});
    std::vector<float> tiny{1e-7f, 0.0f, 0.0f};
    auto keep = orth;
    CHECK_FALSE(householder_reflect(keep, tiny));
    CHECK(keep == orth);
    std::vector<float> half{1.0f, 1.0f, 0.0f};
    CHECK(householder_reflect(half, n, 0.5f));
    CHECK(half[1] == doctest::Approx(0.0));
}

TEST_CASE("projection removal") {
    auto clf = MlpClassifier::initialized(16, 4, 9);
    SeededRng rng(2);
    auto a = gaussian_matrix(rng, 5, 16, 1.0f);
    const std::vector<std::size_t> avoid{2};
    auto out = projection_removal(a, clf, avoid);
    CHECK_FALSE(out.degenerate());
    // Per-row reflection across that row's own avoid-logit gradient.
    auto g = input_gradient(clf, a, {{}, {2}});
    for (std::size_t r = 0; r < a.rows(); ++r) {
        auto expect = row_of(a, r);
        householder_reflect(expect, g.row(r));
        CHECK(row_of(out.activations, r) == expect);
        CHECK(l2_norm(out.activations.row(r)) == doctest::Approx(l2_norm(a.row(r))).epsilon(1e-4));
    }
    SUBCASE("zero classifier flags every row") {
        auto z = projection_removal(a, MlpClassifier::zeros(16, 4), avoid);
        CHECK(z.degenerate_rows.size() == a.rows());
        CHECK(z.activations == a);
    }
    SUBCASE("whole-matrix mode preserves the Frobenius norm") {
        auto w = projection_removal(a, clf, avoid, ReflectionMode::whole_matrix);
        CHECK(frobenius_norm(w.activations) == doctest::Approx(frobenius_norm(a)).epsilon(1e-4));
    }
    SUBCASE("empty avoid set") {
        CHECK_THROWS_AS((void)projection_removal(a, clf, {}), InvalidInput);
    }
}

TEST_CASE("caa vectors") {
    SeededRng rng(12);
    std::vector<std::vector<float>> pos, neg;
    for (int i = 0; i < 100; ++i) {
        std::vector<float> p(8), n(8);
        for (auto& x : p) x = static_cast<float>(rng.gaussian());
        for (auto& x : n) x = static_cast<float>(rng.gaussian());
        pos.push_back(p);
        neg.push_back(n);
    }
    auto v = caa_compute_vector(pos, neg);
    auto ref = oracle::mean_difference(pos, neg);
    for (std::size_t j = 0; j < 8; ++j) CHECK(std::abs(v.direction[j] - ref[j]) < 1e-5);

    auto zero = caa_compute_vector(pos, pos);
    for (float x : zero.direction) CHECK(x == 0.0f);
    auto one = caa_compute_vector(std::span(pos).first(1), std::span(neg).first(1));
    for (std::size_t j = 0; j < 8; ++j) CHECK(one.direction[j] == pos[0][j] - neg[0][j]);
    CHECK_THROWS_AS((void)caa_compute_vector(std::span(pos).first(2), std::span(neg).first(1)),
                    InvalidInput);

    std::map<std::uint32_t, SteeringVector> per_label;
    for (std::uint32_t l = 0; l < 3; ++l) {
        SteeringVector s;
        s.direction = std::vector<float>(pos[l].begin(), pos[l].end());
        s.labels = {{l, 1}};
        per_label[l] = s;
    }
    const std::vector<std::size_t> t0{0}, none{}, t01{0, 1}, a2{2};
    CHECK(caa_combine(per_label, t0, none).direction == per_label[0].direction);
    auto mix = caa_combine(per_label, t01, a2);
    for (std::size_t j = 0; j < 8; ++j) {
        const double expect = (double(pos[0][j]) + pos[1][j] - pos[2][j]) / 3.0;
        CHECK(mix.direction[j] == doctest::Approx(expect).epsilon(1e-5));
    }
    CHECK(mix.labels.size() == 3);
    per_label[1] = per_label[0];
    const std::vector<std::size_t> a1{1};
    for (float x : caa_combine(per_label, t0, a1).direction) CHECK(x == 0.0f);
    const std::vector<std::size_t> missing{7};
    CHECK_THROWS_AS((void)caa_combine(per_label, missing, none), InvalidInput);
}

TEST_CASE("caa addition and directional ablation") {
    Tensor2 a(2, 3, 1.0f);
    SteeringVector e1;
    e1.direction = {1.0f, 0.0f, 0.0f};
    auto plus = caa_apply(a, e1, 2.0f);
    CHECK(plus(0, 0) == 3.0f);
    CHECK(plus(1, 0) == 3.0f);
    CHECK(plus(1, 1) == 1.0f);
    CHECK(caa_apply(a, e1, 0.0f) == a);
    SteeringVector zero;
    zero.direction = {0.0f, 0.0f, 0.0f};
    CHECK(caa_apply(a, zero, 5.0f) == a);

    auto abl = directional_ablation(a, e1);
    CHECK(abl(0, 0) == 0.0f);
    CHECK(abl(0, 1) == 1.0f);
    Tensor2 along(1, 3);
    along(0, 0) = 4.0f;
    CHECK(directional_ablation(along, e1)(0, 0) == 0.0f);

    SeededRng rng(4);
    auto r = gaussian_matrix(rng, 6, 10, 1.0f);
    SteeringVector v;
    v.direction.resize(10);
    for (auto& x : v.direction) x = static_cast<float>(rng.gaussian());
    auto once = directional_ablation(r, v);
    const float n = l2_norm(v.direction);
    for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(dot(once.row(i), v.direction) / n) < 1e-5);
    auto twice = directional_ablation(once, v);
    for (std::size_t i = 0; i < once.size(); ++i)
        CHECK(std::abs(twice.values()[i] - once.values()[i]) < 1e-5);
    CHECK_THROWS_AS((void)directional_ablation(a, zero), InvalidInput);
}

TEST_CASE("KSVF round trip") {
    SteeringVector v;
    v.direction = {0.5f, -1.25f, 3.0f};
    v.labels = {{2, 1}, {4, -1}};
    v.method = VectorProvenance::external;
    v.source_layer = 7;
    auto bytes = encode_steering_vector(v);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "KSVF");
    CHECK(decode_steering_vector(bytes) == v);
    auto path = std::filesystem::temp_directory_path() / "ksteer_unit.ksvf";
    save_steering_vector(v, path);
    CHECK(load_steering_vector(path) == v);
    std::filesystem::remove(path);
    bytes.resize(bytes.size() - 2);
    CHECK_THROWS_AS((void)decode_steering_vector(bytes), FormatError);
}

TEST_CASE("interventions") {
    auto clf = std::make_shared<MlpClassifier>(MlpClassifier::initialized(8, 3, 1));
    SeededRng rng(3);
    auto a = gaussian_matrix(rng, 2, 8, 1.0f);
    SteeringSpec spec = gradient_spec(0.5f, 2);
    Intervention iv(spec, clf, nullptr);
    InterventionNotes notes;
    CHECK(iv.apply(a, notes) == gradient_steer(a, *clf, spec));
    CHECK(iv.with_alpha(0.0f).apply(a, notes) == a);
    CHECK(iv.with_steps(1).spec().steps == 1);

    SteeringSpec pr = spec;
    pr.method = SteeringMethod::projection_removal;
    pr.loss = {{}, {1}};
    pr.alpha = 1.0f;
    Intervention rem(pr, clf, nullptr);
    CHECK(rem.apply(a, notes) == projection_removal(a, *clf, pr.loss.avoids).activations);

    SteeringSpec caa = spec;
    caa.method = SteeringMethod::caa_add;
    CHECK_THROWS_AS(Intervention(caa, clf, nullptr), InvalidInput);
}
