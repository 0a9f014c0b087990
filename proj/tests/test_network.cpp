#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include <json.hpp>

#include "dbranch/network.hpp"

using namespace dbranch;
using ld = long double;

namespace {

// Independent scalar forward pass: batch statistics when `batch_stats`, running ones otherwise.
std::vector<ld> naive_forward(const NetworkParams& p, const Eigen::MatrixXd& in, bool batch_stats)
{
    const auto B = static_cast<std::size_t>(in.cols());
    std::vector<std::vector<ld>> h(B);
    for (std::size_t c = 0; c < B; ++c)
        for (Eigen::Index r = 0; r < in.rows(); ++r) h[c].push_back(in(r, static_cast<Eigen::Index>(c)));
    for (std::size_t k = 0; k < p.hidden.size(); ++k) {
        const auto& L = p.hidden[k];
        const auto m = static_cast<std::size_t>(L.A.rows());
        std::vector<std::vector<ld>> s(B, std::vector<ld>(m));
        for (std::size_t c = 0; c < B; ++c)
            for (std::size_t r = 0; r < m; ++r) {
                ld z = L.b(static_cast<Eigen::Index>(r));
                for (std::size_t q = 0; q < h[c].size(); ++q)
                    z += static_cast<ld>(L.A(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(q))) * h[c][q];
                switch (p.arch.activation) {
                case Activation::Tanh: s[c][r] = std::tanh(z); break;
                case Activation::Relu: s[c][r] = z > 0 ? z : 0; break;
                case Activation::Identity: s[c][r] = z; break;
                }
            }
        if (p.arch.batch_norm())
            for (std::size_t r = 0; r < m; ++r) {
                const auto ri = static_cast<Eigen::Index>(r);
                ld mean = L.bn.running_mean(ri), var = L.bn.running_var(ri);
                if (batch_stats) {
                    mean = 0;
                    for (std::size_t c = 0; c < B; ++c) mean += s[c][r];
                    mean /= B;
                    var = 0;
                    for (std::size_t c = 0; c < B; ++c) var += (s[c][r] - mean) * (s[c][r] - mean);
                    var /= B;
                }
                for (std::size_t c = 0; c < B; ++c)
                    s[c][r] = L.bn.gamma(ri) * (s[c][r] - mean) / std::sqrt(var + 1e-5L) + L.bn.beta(ri);
            }
        for (std::size_t c = 0; c < B; ++c) {
            if (k > 0)
                for (std::size_t r = 0; r < m; ++r) s[c][r] += h[c][r];
            h[c] = s[c];
        }
    }
    std::vector<ld> out(B);
    for (std::size_t c = 0; c < B; ++c) {
        ld v = p.out_b;
        for (std::size_t r = 0; r < h[c].size(); ++r) v += static_cast<ld>(p.out_A(static_cast<Eigen::Index>(r))) * h[c][r];
        out[c] = v;
    }
    return out;
}

ld naive_loss(const NetworkParams& p, const Eigen::MatrixXd& in, const Eigen::RowVectorXd& targets)
{
    const auto v = naive_forward(p, in, true);
    ld s = 0;
    for (std::size_t c = 0; c < v.size(); ++c) s += (v[c] - targets(static_cast<Eigen::Index>(c))) * (v[c] - targets(static_cast<Eigen::Index>(c)));
    return s / static_cast<ld>(v.size());
}

// Random parameters including non-trivial batch-norm scale, shift and running statistics.
NetworkParams random_network(const NetworkArch& arch, unsigned seed)
{
    NetworkParams p = init_network(arch, seed);
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (auto& L : p.hidden) {
        for (Eigen::Index i = 0; i < L.b.size(); ++i) L.b(i) = u(rng);
        if (arch.batch_norm())
            for (Eigen::Index i = 0; i < L.bn.gamma.size(); ++i) {
                L.bn.gamma(i) = 1.0 + u(rng);
                L.bn.beta(i) = u(rng);
                L.bn.running_mean(i) = u(rng);
                L.bn.running_var(i) = 1.0 + u(rng);
            }
    }
    p.out_b = u(rng);
    return p;
}

Eigen::MatrixXd random_inputs(std::size_t rows, std::size_t cols, unsigned seed)
{
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index c = 0; c < m.cols(); ++c)
        for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = u(rng);
    return m;
}

Eigen::RowVectorXd random_targets(std::size_t n, unsigned seed)
{
    std::mt19937 rng(seed);
    std::normal_distribution<double> g;
    Eigen::RowVectorXd t(n);
    for (Eigen::Index i = 0; i < t.size(); ++i) t(i) = g(rng);
    return t;
}

}  // namespace

TEST_CASE("parameter counts")
{
    NetworkArch arch{2, 6, 20, Activation::Tanh};
    CHECK(arch.dense_parameter_count() == 2181);
    const auto p = zero_network(arch);
    CHECK(p.dense_parameter_count() == 2181);
    CHECK(p.trainable_count() == 2181 + 6 * 2 * 20);
    CHECK(p.flatten().size() == p.trainable_count());
    NetworkArch lin{3, 2, 4, Activation::Identity};
    CHECK(lin.dense_parameter_count() == (3 + 1) * 4 + 1 * (4 + 1) * 4 + 5);
    CHECK(zero_network(lin).trainable_count() == lin.dense_parameter_count());
    CHECK(parse_activation("relu") == Activation::Relu);
    CHECK(activation_name(Activation::Identity) == "identity");
    CHECK_THROWS(parse_activation("sigmoid"));
}

TEST_CASE("forward examples")
{
    NetworkArch arch{2, 3, 5, Activation::Tanh};
    const auto zero = zero_network(arch);
    const Eigen::MatrixXd in = random_inputs(2, 7, 1);
    CHECK(forward_eval(zero, in).cwiseAbs().maxCoeff() == 0.0);

    // identity activation, one hidden layer: out = A_out (A x + b) + b_out
    NetworkArch lin{2, 1, 3, Activation::Identity};
    auto p = random_network(lin, 4);
    const Eigen::VectorXd x = in.col(0);
    const double expected = (p.out_A * (p.hidden[0].A * x + p.hidden[0].b))(0) + p.out_b;
    CHECK(forward_eval(p, in)(0) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("forward agrees with an independent scalar implementation")
{
    for (const Activation a : {Activation::Tanh, Activation::Relu, Activation::Identity}) {
        const NetworkArch arch{3, 4, 6, a};
        auto p = random_network(arch, 7);
        const Eigen::MatrixXd in = random_inputs(3, 9, 2);
        const auto ref_eval = naive_forward(p, in, false);
        const auto ref_train = naive_forward(p, in, true);
        const Eigen::RowVectorXd eval = forward_eval(p, in);
        for (std::size_t c = 0; c < ref_eval.size(); ++c)
            CHECK(eval(static_cast<Eigen::Index>(c)) == doctest::Approx(static_cast<double>(ref_eval[c])).epsilon(1e-12));
        auto copy = p;
        const Eigen::RowVectorXd train = forward(copy, in, Mode::Train, 0.1);
        for (std::size_t c = 0; c < ref_train.size(); ++c)
            CHECK(train(static_cast<Eigen::Index>(c)) == doctest::Approx(static_cast<double>(ref_train[c])).epsilon(1e-12));
        // single-column eval equals batched eval, bit for bit
        for (Eigen::Index c = 0; c < in.cols(); ++c) {
            std::vector<double> x(in.col(c).data() + 1, in.col(c).data() + 3);
            CHECK(forward_eval(p, in(0, c), x) == eval(c));
            CHECK(forward_eval(p, Eigen::MatrixXd(in.col(c)))(0) == eval(c));
        }
        CHECK_THROWS(forward_eval(p, random_inputs(2, 3, 1)));
    }
}

TEST_CASE("train mode updates running statistics with the unbiased variance")
{
    const NetworkArch arch{2, 2, 3, Activation::Tanh};
    auto p = init_network(arch, 3);
    const Eigen::MatrixXd in = random_inputs(2, 8, 5);
    const auto before = p.hidden[0].bn;
    const Eigen::MatrixXd s = ((p.hidden[0].A * in).colwise() + p.hidden[0].b).array().tanh().matrix();
    forward(p, in, Mode::Train, 0.25);
    for (Eigen::Index r = 0; r < 3; ++r) {
        const double mean = s.row(r).mean();
        const double var = (s.row(r).array() - mean).square().sum() / 7.0;
        CHECK(p.hidden[0].bn.running_mean(r) == doctest::Approx(0.75 * before.running_mean(r) + 0.25 * mean));
        CHECK(p.hidden[0].bn.running_var(r) == doctest::Approx(0.75 * before.running_var(r) + 0.25 * var));
    }
    auto q = p;
    forward(q, in, Mode::Eval);
    CHECK(q.hidden[1].bn.running_mean == p.hidden[1].bn.running_mean);
}

TEST_CASE("backprop gradient check")
{
    const Eigen::MatrixXd in = random_inputs(2, 16, 8);
    const Eigen::RowVectorXd tg = random_targets(16, 9);
    for (const std::size_t m : {3u, 8u}) {
        const auto p = random_network({2, 4, m, Activation::Tanh}, 10 + m);
        const double err = gradient_check(p, in, tg);
        INFO("tanh m=" << m << " err=" << err);
        CHECK(err < 1e-4);
    }
    const auto lin = random_network({2, 4, 8, Activation::Identity}, 20);
    const double lin_err = gradient_check(lin, in, tg);
    INFO("identity err=" << lin_err);
    CHECK(lin_err < 1e-10);
    const auto relu = random_network({2, 3, 6, Activation::Relu}, 30);
    CHECK(gradient_check(relu, in, tg) < 1e-4);
}

TEST_CASE("backprop against differences of the independent scalar loss")
{
    const Eigen::MatrixXd in = random_inputs(2, 10, 11);
    const Eigen::RowVectorXd tg = random_targets(10, 12);
    for (const Activation a : {Activation::Tanh, Activation::Identity}) {
        auto p = random_network({2, 3, 5, a}, 13);
        std::vector<double> grad;
        const double loss = loss_and_gradient(p, in, tg, &grad);
        CHECK(loss == doctest::Approx(static_cast<double>(naive_loss(p, in, tg))).epsilon(1e-12));
        const auto theta = p.flatten();
        double worst = 0;
        for (std::size_t k = 0; k < theta.size(); ++k) {
            const ld h = 1e-6L * std::max(1.0, std::abs(theta[k]));
            auto shifted = theta;
            shifted[k] = static_cast<double>(theta[k] + h);
            p.unflatten(shifted);
            const ld hi = naive_loss(p, in, tg);
            const ld step_hi = static_cast<ld>(shifted[k]) - theta[k];
            shifted[k] = static_cast<double>(theta[k] - h);
            p.unflatten(shifted);
            const ld lo = naive_loss(p, in, tg);
            const ld step_lo = theta[k] - static_cast<ld>(shifted[k]);
            const ld numeric = (hi - lo) / (step_hi + step_lo);
            worst = std::max(worst, static_cast<double>(std::abs(numeric - grad[k]) /
                                                        std::max({std::abs(numeric), static_cast<ld>(std::abs(grad[k])), 1e-6L})));
        }
        p.unflatten(theta);
        INFO("activation " << activation_name(a) << " worst " << worst);
        CHECK(worst < 1e-6);
    }
}

TEST_CASE("learning-rate schedule")
{
    TrainConfig cfg;
    cfg.steps = 3000;
    cfg.learning_rate = 0.01;
    CHECK(scheduled_learning_rate(cfg, 0) == 0.01);
    CHECK(scheduled_learning_rate(cfg, 999) == 0.01);
    CHECK(scheduled_learning_rate(cfg, 1000) == doctest::Approx(1e-3));
    CHECK(scheduled_learning_rate(cfg, 1999) == doctest::Approx(1e-3));
    CHECK(scheduled_learning_rate(cfg, 2000) == doctest::Approx(1e-4));
    CHECK(scheduled_learning_rate(cfg, 2999) == doctest::Approx(1e-4));
    cfg.steps = 10;  // floor(10/3) = 3
    CHECK(scheduled_learning_rate(cfg, 2) == 0.01);
    CHECK(scheduled_learning_rate(cfg, 3) == doctest::Approx(1e-3));
    CHECK(scheduled_learning_rate(cfg, 6) == doctest::Approx(1e-4));
    CHECK(scheduled_learning_rate(cfg, 9) == doctest::Approx(1e-4));
    cfg.steps = 2;
    CHECK(scheduled_learning_rate(cfg, 1) == 0.01);
}

TEST_CASE("training")
{
    const NetworkArch arch{2, 6, 20, Activation::Tanh};
    SUBCASE("one pair is fitted exactly")
    {
        Eigen::MatrixXd in(2, 1);
        in << 0.0, 0.7;
        Eigen::RowVectorXd tg(1);
        tg << -0.4;
        TrainConfig cfg;
        cfg.steps = 2000;
        const auto res = train(init_network(arch, 1), in, tg, cfg);
        REQUIRE(res.log.size() == 2000);
        CHECK(res.log.back().loss < 1e-4);
        CHECK(res.log.back().learning_rate == doctest::Approx(1e-4));
    }
    SUBCASE("P = 0 returns the initial network")
    {
        const auto init = init_network(arch, 2);
        TrainConfig cfg;
        cfg.steps = 0;
        const auto res = train(init, random_inputs(2, 4, 1), random_targets(4, 1), cfg);
        CHECK(res.log.empty());
        CHECK(res.params.flatten() == init.flatten());
    }
    SUBCASE("constant targets")
    {
        Eigen::MatrixXd in = random_inputs(2, 40, 3);
        in.row(0).setZero();
        const Eigen::RowVectorXd tg = Eigen::RowVectorXd::Constant(40, 0.3);
        TrainConfig cfg;
        cfg.steps = 300;
        const auto res = train(init_network(arch, 3), in, tg, cfg);
        CHECK(res.log.back().loss < 1e-4);
        CHECK(res.log.back().loss < res.log.front().loss);
    }
    SUBCASE("minibatches are reproducible")
    {
        TrainConfig cfg;
        cfg.steps = 20;
        cfg.batch_size = 8;
        cfg.seed = 5;
        const auto in = random_inputs(2, 30, 4);
        const auto tg = random_targets(30, 4);
        const auto a = train(init_network(arch, 4), in, tg, cfg);
        const auto b = train(init_network(arch, 4), in, tg, cfg);
        CHECK(a.params.flatten() == b.params.flatten());
    }
    SUBCASE("errors")
    {
        TrainConfig cfg;
        cfg.steps = 5;
        Eigen::RowVectorXd tg = random_targets(4, 1);
        CHECK_THROWS_AS(train(init_network(arch, 1), random_inputs(2, 3, 1), tg, cfg), std::invalid_argument);
        tg(1) = std::nan("");
        CHECK_THROWS_AS(train(init_network(arch, 1), random_inputs(2, 4, 1), tg, cfg), std::invalid_argument);
        cfg.learning_rate = 1e300;
        try {
            train(init_network(arch, 1), random_inputs(2, 4, 1), random_targets(4, 2) * 1e300, cfg);
            FAIL("expected TrainingError");
        } catch (const TrainingError& e) {
            CHECK(!e.log().empty());
        }
    }
}

TEST_CASE("train log csv")
{
    std::ostringstream os;
    write_train_log_csv({{0, 0.5, 0.01}, {1, 0.25, 0.001}}, os);
    CHECK(os.str() == "step,loss,learning_rate\n0,0.5,0.01\n1,0.25,0.001\n");
}

TEST_CASE("model file round trip")
{
    for (const Activation a : {Activation::Tanh, Activation::Identity}) {
        const NetworkArch arch{3, 3, 7, a};
        const auto p = random_network(arch, 40);
        const std::string text = save_network(p, "{\"note\":1}");
        const auto back = load_network(text, arch);
        CHECK(back.arch == arch);
        CHECK(back.flatten() == p.flatten());
        for (std::size_t k = 0; k < p.hidden.size(); ++k) {
            CHECK(back.hidden[k].bn.running_mean == p.hidden[k].bn.running_mean);
            CHECK(back.hidden[k].bn.running_var == p.hidden[k].bn.running_var);
        }
        const Eigen::MatrixXd in = random_inputs(3, 5, 1);
        CHECK(forward_eval(back, in) == forward_eval(p, in));
        CHECK(save_network(back, "{\"note\":1}") == text);
        CHECK(nlohmann::json::parse(text)["provenance"]["note"] == 1);

        CHECK_THROWS(load_network(text, NetworkArch{3, 3, 8, a}));
        auto j = nlohmann::json::parse(text);
        j["version"] = 2;
        CHECK_THROWS(load_network(j.dump()));
        j = nlohmann::json::parse(text);
        j["format"] = "other";
        CHECK_THROWS(load_network(j.dump()));
        j = nlohmann::json::parse(text);
        j["hidden"][0]["b"].erase(0);
        CHECK_THROWS(load_network(j.dump()));
        j = nlohmann::json::parse(text);
        j["architecture"]["width"] = 6;
        CHECK_THROWS(load_network(j.dump()));
    }
    CHECK_THROWS(load_network("not json"));
}
