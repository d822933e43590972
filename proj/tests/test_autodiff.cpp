// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "dvx/autodiff.hpp"
#include "dvx/gradsuite.hpp"
#include "test_support.hpp"

using namespace dvx;
using ad::GradCheckParam;
using ad::Tape;
using ad::Value;
using dvxtest::max_abs_diff;
using dvxtest::random_tensor;

TEST_CASE("taped single add node matches tensor-core add") {
    Tensor a = random_tensor(1, 2, 3, 3, 1);
    Tensor b = random_tensor(1, 2, 3, 3, 2);
    Tape t;
    Value out = t.add(t.input(a), t.input(b));
    CHECK(t.val(out).data == add(a, b).data);
}

TEST_CASE("taped conv-relu chain is bit-identical to untaped evaluation") {
    Tensor x = random_tensor(1, 2, 6, 6, 3);
    Tensor w = random_tensor(3, 2, 3, 3, 4);
    Tensor b = random_tensor(1, 3, 1, 1, 5);
    ConvSpec spec{2, 3, 3, 3, 1, 1, 1, 1, 1};
    Tape t;
    Value out = t.relu(t.conv2d(t.input(x), t.input(w), t.input(b), spec));
    Tensor direct =
        activation(conv2d(x, w, std::vector<double>(b.data.begin(), b.data.end()), spec),
                   Activation::ReLU);
    CHECK(t.val(out).data == direct.data);
}

TEST_CASE("backward of sum(x) is all ones") {
    Tensor x = random_tensor(2, 3, 4, 4, 6);
    Tape t;
    Value leaf = t.leaf("x", x, true);
    // <ones, x> == sum(x)
    ad::GradientMap g = t.backward(leaf, Tensor(2, 3, 4, 4, 1.0));
    REQUIRE(g.count("x") == 1);
    for (double v : g.at("x").data) CHECK(v == 1.0);
}

TEST_CASE("dead ReLU region has zero gradient") {
    Tensor x = random_tensor(1, 2, 3, 3, 7, -2.0, -0.5);
    Tape t;
    Value leaf = t.leaf("x", x, true);
    Value out = t.relu(leaf);
    ad::GradientMap g = t.backward(out, Tensor(1, 2, 3, 3, 1.0));
    for (double v : g.at("x").data) CHECK(v == 0.0);
}

TEST_CASE("backward seed shape mismatch is rejected") {
    Tape t;
    Value leaf = t.leaf("x", Tensor(1, 2, 2, 2, 1.0), true);
    CHECK_THROWS_AS(t.backward(leaf, Tensor(1, 1, 2, 2, 1.0)), std::invalid_argument);
}

TEST_CASE("gradient of a sum of two losses is the sum of the gradients") {
    Tensor x = random_tensor(1, 2, 3, 3, 8);
    Tensor seed1 = random_tensor(1, 2, 3, 3, 9);
    Tensor seed2 = random_tensor(1, 2, 3, 3, 10);

    auto grad_for = [&](const Tensor& seed) {
        Tape t;
        Value leaf = t.leaf("x", x, true);
        Value out = t.sigmoid(leaf);
        return t.backward(out, seed).at("x");
    };
    Tensor g1 = grad_for(seed1);
    Tensor g2 = grad_for(seed2);
    Tensor combined(1, 2, 3, 3);
    for (std::size_t i = 0; i < combined.data.size(); ++i) {
        combined.data[i] = seed1.data[i] + seed2.data[i];
    }
    Tensor g12 = grad_for(combined);
    for (std::size_t i = 0; i < g12.data.size(); ++i) {
        CHECK(g12.data[i] == doctest::Approx(g1.data[i] + g2.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("backward through concat splits the seed exactly") {
    Tensor a = random_tensor(2, 3, 4, 4, 11);
    Tensor b = random_tensor(2, 5, 4, 4, 12);
    Tape t;
    Value la = t.leaf("a", a, true);
    Value lb = t.leaf("b", b, true);
    Value out = t.concat_channels(la, lb);
    Tensor seed = random_tensor(2, 8, 4, 4, 13);
    ad::GradientMap g = t.backward(out, seed);
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c)
            for (int h = 0; h < 4; ++h)
                for (int w = 0; w < 4; ++w)
                    CHECK(g.at("a").at(n, c, h, w) == seed.at(n, c, h, w));
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 5; ++c)
            for (int h = 0; h < 4; ++h)
                for (int w = 0; w < 4; ++w)
                    CHECK(g.at("b").at(n, c, h, w) == seed.at(n, 3 + c, h, w));
}

TEST_CASE("grad_check validates a quadratic loss on matmul weights") {
    Tensor x = random_tensor(1, 1, 3, 4, 14);
    Tensor w0 = random_tensor(1, 1, 4, 2, 15);
    auto graph = [x](Tape& t, const std::vector<Value>& leaves) {
        Value prod = t.matmul(t.input(x), leaves[0]);
        return t.mul(prod, prod);  // quadratic in the weights
    };
    auto report = ad::grad_check(graph, {{"w", w0}}, 1e-5, 1e-7, 77, 8);
    CHECK(report.pass);
    CHECK(report.max_rel_err < 1e-7);
}

TEST_CASE("grad_check omits frozen parameters from the gradient map") {
    Tensor x = random_tensor(1, 1, 2, 2, 16);
    Tape t;
    Value frozen = t.leaf("frozen", x, false);
    Value live = t.leaf("live", x, true);
    Value out = t.add(live, frozen);
    ad::GradientMap g = t.backward(out, Tensor(1, 1, 2, 2, 1.0));
    CHECK(g.count("frozen") == 0);
    CHECK(g.count("live") == 1);
}

TEST_CASE("unreached grad-requiring leaves report zero gradients") {
    Tape t;
    Value used = t.leaf("used", Tensor(1, 1, 2, 2, 1.0), true);
    Value unused = t.leaf("unused", Tensor(1, 1, 3, 3, 1.0), true);
    Value out = t.scale(used, 2.0);
    ad::GradientMap g = t.backward(out, Tensor(1, 1, 2, 2, 1.0));
    REQUIRE(g.count("unused") == 1);
    CHECK(g.at("unused").shape == std::array<int, 4>{1, 1, 3, 3});
    for (double v : g.at("unused").data) CHECK(v == 0.0);
    for (double v : g.at("used").data) CHECK(v == 2.0);
}

TEST_CASE("per-op gradient suite passes at the primitive tolerance") {
    // >= 20 seeded random instances per registered op, rel err < 1e-5 at
    // h = 1e-5; the three fusion blocks are held to 1e-3
    auto reports = run_gradient_suite(20, 1e-5, 1e-5, 1e-3);
    for (const auto& r : reports) {
        INFO(r.op, " max_rel_err=", r.max_rel_err);
        CHECK(r.pass);
        CHECK(r.instances >= 3);
    }
    CHECK(gradient_suite_passed(reports));
}

TEST_CASE("grad_check rejects a non-positive step") {
    auto graph = [](Tape& t, const std::vector<Value>& leaves) { return leaves[0]; };
    CHECK_THROWS_AS(ad::grad_check(graph, {{"x", Tensor(1, 1, 1, 1, 1.0)}}, 0.0, 1e-5, 1),
                    std::invalid_argument);
}
