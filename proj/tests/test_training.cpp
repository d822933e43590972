// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <map>

#include "doctest.h"
#include "dvx/dataset.hpp"
#include "dvx/training.hpp"
#include "test_support.hpp"

using namespace dvx;
using dvxtest::random_tensor;

namespace {

ModelConfig tiny_config(std::uint64_t seed = 3) {
    ModelConfig c;
    c.widths = {8, 8, 8, 8};
    c.depths = {1, 1, 1, 1};
    c.input_h = 32;
    c.input_w = 32;
    c.num_classes = 4;
    c.heads = 2;
    c.fdim_reduction = 2;
    c.cbam_reduction = 4;
    c.seed = seed;
    return c;
}

}  // namespace

TEST_CASE("loss worked values: ln 2, one-sided saturation, extreme stability") {
    Tensor x1(1, 1, 1, 1, 0.0);
    Tensor y1(1, 1, 1, 1, 1.0);
    CHECK(multilabel_soft_margin_loss(x1, y1) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Tensor x2(1, 2, 1, 1);
    x2.data = {10.0, -10.0};
    Tensor y2(1, 2, 1, 1);
    y2.data = {1.0, 0.0};
    // direct formula evaluation: both labels near-perfect
    const double expect = 0.5 * (std::log1p(std::exp(-10.0)) + std::log1p(std::exp(-10.0)));
    CHECK(multilabel_soft_margin_loss(x2, y2) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(multilabel_soft_margin_loss(x2, y2) == doctest::Approx(4.5398899e-5).epsilon(1e-6));

    Tensor x3(1, 2, 1, 1);
    x3.data = {50.0, -50.0};
    Tensor y3(1, 2, 1, 1);
    y3.data = {1.0, 0.0};
    const double tiny = multilabel_soft_margin_loss(x3, y3);
    CHECK(std::isfinite(tiny));
    CHECK(tiny < 1e-20);
}

TEST_CASE("loss rejects non-binary targets") {
    Tensor x(1, 2, 1, 1, 0.0);
    Tensor y(1, 2, 1, 1, 0.5);
    CHECK_THROWS_AS(multilabel_soft_margin_loss(x, y), std::invalid_argument);
}

TEST_CASE("loss is invariant under permuting label columns of x and y together") {
    Tensor x = random_tensor(3, 5, 1, 1, 301, -2.0, 2.0);
    Tensor y(3, 5, 1, 1, 0.0);
    std::mt19937_64 rng(5);
    for (double& v : y.data) v = rng() % 2;
    const double base = multilabel_soft_margin_loss(x, y);
    const int perm[5] = {3, 0, 4, 1, 2};
    Tensor xp(3, 5, 1, 1), yp(3, 5, 1, 1);
    for (int n = 0; n < 3; ++n)
        for (int c = 0; c < 5; ++c) {
            xp.at(n, perm[c], 0, 0) = x.at(n, c, 0, 0);
            yp.at(n, perm[c], 0, 0) = y.at(n, c, 0, 0);
        }
    CHECK(multilabel_soft_margin_loss(xp, yp) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("loss gradient matches finite differences everywhere") {
    Tensor x = random_tensor(2, 3, 1, 1, 302, -1.5, 1.5);
    Tensor y(2, 3, 1, 1, 0.0);
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = i % 2;
    auto graph = [y](ad::Tape& t, const std::vector<ad::Value>& l) {
        return t.multilabel_soft_margin_loss(l[0], y);
    };
    auto report = ad::grad_check(graph, {{"x", x}}, 1e-5, 1e-6, 303, 6);
    CHECK(report.pass);
}

TEST_CASE("adamw: fixed point, first-step magnitude, pure-decay closed form") {
    ModelConfig mc = tiny_config();
    mc.use_fdim = mc.use_mscfe = mc.use_cafm = false;
    Model m(mc);

    // zero gradient + zero decay leaves parameters unchanged and bumps step
    std::map<std::string, Tensor> before;
    m.for_each_param([&](const std::string& n, Tensor& t, bool) { before[n] = t; });
    ad::GradientMap zero_grads;
    m.for_each_param([&](const std::string& n, Tensor& t, bool) {
        Tensor z = t;
        std::fill(z.data.begin(), z.data.end(), 0.0);
        zero_grads[n] = z;
    });
    OptimState st;
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    adamw_step(m, zero_grads, st, cfg, 0.01);
    CHECK(st.step == 1);
    m.for_each_param([&](const std::string& n, Tensor& t, bool) {
        CHECK(t.data == before.at(n).data);
    });

    // constant unit gradient on the first step moves by ~lr
    ad::GradientMap unit = zero_grads;
    for (auto& [n, g] : unit) std::fill(g.data.begin(), g.data.end(), 1.0);
    OptimState st2;
    adamw_step(m, unit, st2, cfg, 0.01);
    m.for_each_param([&](const std::string& n, Tensor& t, bool) {
        for (std::size_t i = 0; i < t.data.size(); ++i) {
            CHECK(t.data[i] ==
                  doctest::Approx(before.at(n).data[i] - 0.01 / (1.0 + 1e-8)).epsilon(1e-9));
        }
    });

    // decoupled decay with zero gradient: theta <- theta * (1 - lr*lambda)
    Model m2(mc);
    std::map<std::string, Tensor> start;
    m2.for_each_param([&](const std::string& n, Tensor& t, bool) { start[n] = t; });
    OptimState st3;
    AdamWConfig decay_cfg;
    decay_cfg.weight_decay = 0.1;
    adamw_step(m2, zero_grads, st3, decay_cfg, 0.5);
    m2.for_each_param([&](const std::string& n, Tensor& t, bool decay) {
        for (std::size_t i = 0; i < t.data.size(); ++i) {
            const double expect =
                decay ? start.at(n).data[i] * (1.0 - 0.5 * 0.1) : start.at(n).data[i];
            CHECK(t.data[i] == doctest::Approx(expect).epsilon(1e-12));
        }
    });
}

TEST_CASE("weight decay skips biases and BatchNorm affine parameters") {
    ModelConfig mc = tiny_config();
    Model m(mc);
    m.for_each_param([&](const std::string& n, Tensor&, bool decay) {
        const bool is_bias = n.size() >= 2 && n.compare(n.size() - 2, 2, ".b") == 0;
        const bool is_bn = n.find("bn.gamma") != std::string::npos ||
                           n.find("bn.beta") != std::string::npos;
        if (is_bias || is_bn) {
            CHECK_FALSE(decay);
        } else {
            CHECK(decay);
        }
    });
}

TEST_CASE("lr schedule: warmup start, warmup end, cosine tail") {
    ScheduleConfig cfg{1e-3, 5, 40, 1e-6};
    CHECK(lr_schedule(0, cfg) == doctest::Approx(1e-5).epsilon(1e-12));
    CHECK(lr_schedule(5, cfg) == doctest::Approx(1e-3).epsilon(1e-12));
    const int T = 35, t = 34;
    const double expect =
        1e-6 + 0.5 * (1e-3 - 1e-6) * (1.0 + std::cos(3.14159265358979323846 * t / T));
    CHECK(lr_schedule(39, cfg) == doctest::Approx(expect).epsilon(1e-12));
    CHECK_THROWS_AS(lr_schedule(40, cfg), std::invalid_argument);
    CHECK_THROWS_AS(lr_schedule(-1, cfg), std::invalid_argument);
}

TEST_CASE("ema: fixed point, geometric approach, degenerate decay") {
    ModelConfig mc = tiny_config();
    mc.use_fdim = mc.use_mscfe = mc.use_cafm = false;
    Model m(mc);

    EmaState ema;
    ema.decay = 0.9;
    ema_init(ema, m);
    ema_update(ema, m);  // shadow already equals params
    m.for_each_param([&](const std::string& n, Tensor& t, bool) {
        CHECK(ema.shadow.at(n).data == t.data);
    });

    // shadow from zero approaches a constant c as c*(1 - decay^k)
    EmaState ema2;
    ema2.decay = 0.9;
    ema_init(ema2, m);
    for (auto& [n, t] : ema2.shadow) std::fill(t.data.begin(), t.data.end(), 0.0);
    Model constant(mc);
    constant.for_each_param([&](const std::string&, Tensor& t, bool) {
        std::fill(t.data.begin(), t.data.end(), 2.0);
    });
    for (int k = 0; k < 7; ++k) ema_update(ema2, constant);
    const double expect = 2.0 * (1.0 - std::pow(0.9, 7));
    for (auto& [n, t] : ema2.shadow) {
        for (double v : t.data) CHECK(v == doctest::Approx(expect).epsilon(1e-12));
    }

    EmaState ema3;
    ema3.decay = 0.0;
    ema_init(ema3, m);
    for (auto& [n, t] : ema3.shadow) std::fill(t.data.begin(), t.data.end(), 5.0);
    ema_update(ema3, constant);
    for (auto& [n, t] : ema3.shadow) {
        for (double v : t.data) CHECK(v == 2.0);
    }
}

TEST_CASE("lr zero with zero decay leaves parameters untouched for an epoch") {
    ModelConfig mc = tiny_config(21);
    Model m(mc);
    auto data = generate_synthetic_pairs(8, 4, 32, 32, 404);

    std::map<std::string, Tensor> before;
    m.for_each_param([&](const std::string& n, Tensor& t, bool) { before[n] = t; });

    TrainConfig tc;
    tc.batch_size = 4;
    tc.schedule = {0.0, 0, 1, 0.0};
    tc.optimizer.weight_decay = 0.0;
    tc.seed = 5;
    train(m, data.samples, {}, tc);
    m.for_each_param([&](const std::string& n, Tensor& t, bool) {
        CHECK(t.data == before.at(n).data);
    });
}

TEST_CASE("EMA evaluation never mutates the raw parameters") {
    ModelConfig mc = tiny_config(22);
    Model m(mc);
    auto data = generate_synthetic_pairs(8, 4, 32, 32, 505);
    EmaState ema;
    ema.decay = 0.5;
    ema_init(ema, m);
    for (auto& [n, t] : ema.shadow) {
        for (double& v : t.data) v *= 0.9;
    }
    std::map<std::string, Tensor> before;
    m.for_each_param([&](const std::string& n, Tensor& t, bool) { before[n] = t; });
    evaluate_map(m, data.samples, &ema.shadow);
    m.for_each_param([&](const std::string& n, Tensor& t, bool) {
        CHECK(t.data == before.at(n).data);
    });
}

TEST_CASE("two runs from one seed produce identical loss curves") {
    auto data = generate_synthetic_pairs(16, 4, 32, 32, 606);
    TrainConfig tc;
    tc.batch_size = 8;
    tc.schedule = {1e-3, 1, 3, 0.0};
    tc.seed = 77;

    ModelConfig mc = tiny_config(23);
    Model m1(mc), m2(mc);
    TrainResult r1 = train(m1, data.samples, {}, tc);
    TrainResult r2 = train(m2, data.samples, {}, tc);
    REQUIRE(r1.history.size() == r2.history.size());
    for (std::size_t i = 0; i < r1.history.size(); ++i) {
        CHECK(r1.history[i].train_loss == r2.history[i].train_loss);
    }
    CHECK(history_to_csv(r1.history) == history_to_csv(r2.history));
}

TEST_CASE("eight samples are memorized within 200 epochs") {
    auto data = generate_synthetic_pairs(8, 4, 32, 32, 707);
    ModelConfig mc = tiny_config(24);
    mc.use_fdim = mc.use_mscfe = mc.use_cafm = false;  // smallest trainable net
    Model m(mc);
    TrainConfig tc;
    tc.batch_size = 8;
    tc.schedule = {1e-2, 5, 200, 1e-5};
    tc.optimizer.weight_decay = 0.0;
    tc.ema_decay = 0.99;
    tc.seed = 11;
    TrainResult r = train(m, data.samples, {}, tc);
    double final_loss = r.history.back().train_loss;
    CHECK(final_loss < 0.01);
    // and the memorized samples are ranked essentially perfectly
    CHECK(evaluate_map(m, data.samples) > 0.99);
}

TEST_CASE("training aborts with a batch diagnostic when the loss goes non-finite") {
    auto data = generate_synthetic_pairs(8, 4, 32, 32, 808);
    ModelConfig mc = tiny_config(25);
    Model m(mc);
    // poison a head parameter; the first batch's loss turns NaN
    m.for_each_param([](const std::string& n, Tensor& t, bool) {
        if (n == "head.fc.b") t.data[0] = std::numeric_limits<double>::quiet_NaN();
    });
    TrainConfig tc;
    tc.batch_size = 8;
    tc.schedule = {1e-3, 0, 1, 0.0};
    tc.seed = 1;
    CHECK_THROWS_WITH_AS(train(m, data.samples, {}, tc), doctest::Contains("batch"),
                         std::runtime_error);
}

TEST_CASE("history csv has the documented header and one row per epoch") {
    std::vector<EpochStats> h{{0, 1e-3, 0.5, 0.6, 0.55}, {1, 9e-4, 0.4, 0.7, 0.65}};
    const std::string csv = history_to_csv(h);
    CHECK(csv.rfind("epoch,lr,train_loss,val_mAP_raw,val_mAP_ema\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}
