#include "dbranch/network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include <json.hpp>

#include "dbranch/rng.hpp"

namespace dbranch {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;
using nlohmann::json;

Activation parse_activation(std::string_view name)
{
    if (name == "tanh") return Activation::Tanh;
    if (name == "relu") return Activation::Relu;
    if (name == "identity" || name == "id") return Activation::Identity;
    throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

std::string activation_name(Activation a)
{
    switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Identity: return "identity";
    }
    return "?";
}

std::size_t NetworkArch::dense_parameter_count() const
{
    return (input_dim + 1) * width + (layers - 1) * (width + 1) * width + (width + 1);
}

std::size_t NetworkParams::dense_parameter_count() const
{
    std::size_t n = static_cast<std::size_t>(out_A.size()) + 1;
    for (const auto& h : hidden) n += static_cast<std::size_t>(h.A.size() + h.b.size());
    return n;
}

std::size_t NetworkParams::trainable_count() const
{
    std::size_t n = dense_parameter_count();
    for (const auto& h : hidden) n += static_cast<std::size_t>(h.bn.gamma.size() + h.bn.beta.size());
    return n;
}

namespace {

// Visits every trainable block in flatten() order. Matrices are walked row-major.
template <class Net, class Fn>
void visit_trainable(Net& p, Fn&& fn)
{
    for (auto& h : p.hidden) {
        for (Eigen::Index r = 0; r < h.A.rows(); ++r)
            for (Eigen::Index c = 0; c < h.A.cols(); ++c) fn(h.A(r, c));
        for (Eigen::Index r = 0; r < h.b.size(); ++r) fn(h.b(r));
        for (Eigen::Index r = 0; r < h.bn.gamma.size(); ++r) fn(h.bn.gamma(r));
        for (Eigen::Index r = 0; r < h.bn.beta.size(); ++r) fn(h.bn.beta(r));
    }
    for (Eigen::Index c = 0; c < p.out_A.size(); ++c) fn(p.out_A(c));
    fn(p.out_b);
}

}  // namespace

std::vector<double> NetworkParams::flatten() const
{
    std::vector<double> theta;
    theta.reserve(trainable_count());
    visit_trainable(*this, [&](const double& v) { theta.push_back(v); });
    return theta;
}

void NetworkParams::unflatten(const std::vector<double>& theta)
{
    if (theta.size() != trainable_count()) throw std::invalid_argument("unflatten: size mismatch");
    std::size_t k = 0;
    visit_trainable(*this, [&](double& v) { v = theta[k++]; });
}

NetworkParams zero_network(const NetworkArch& arch)
{
    if (arch.input_dim < 1 || arch.layers < 1 || arch.width < 1)
        throw std::invalid_argument("network needs input_dim, l, m >= 1");
    NetworkParams p;
    p.arch = arch;
    const auto m = static_cast<Eigen::Index>(arch.width);
    for (std::size_t k = 0; k < arch.layers; ++k) {
        DenseLayer h;
        h.A = MatrixXd::Zero(m, k == 0 ? static_cast<Eigen::Index>(arch.input_dim) : m);
        h.b = VectorXd::Zero(m);
        if (arch.batch_norm())
            h.bn = {VectorXd::Ones(m), VectorXd::Zero(m), VectorXd::Zero(m), VectorXd::Ones(m)};
        p.hidden.push_back(std::move(h));
    }
    p.out_A = RowVectorXd::Zero(m);
    if (p.dense_parameter_count() != arch.dense_parameter_count())
        throw std::logic_error("dense parameter count does not match (d_in+1)m + (l-1)(m+1)m + (m+1)");
    return p;
}

NetworkParams init_network(const NetworkArch& arch, std::uint64_t seed)
{
    NetworkParams p = zero_network(arch);
    Philox rng(mix_seed(seed, seed_purpose::kNetworkInit), 0, 0);
    auto fill = [&](auto& A) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(A.cols()));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (Eigen::Index r = 0; r < A.rows(); ++r)
            for (Eigen::Index c = 0; c < A.cols(); ++c) A(r, c) = u(rng);
    };
    for (auto& h : p.hidden) fill(h.A);
    fill(p.out_A);
    return p;
}

namespace {

MatrixXd activate(Activation a, const MatrixXd& z)
{
    switch (a) {
    case Activation::Tanh: return z.array().tanh().matrix();
    case Activation::Relu: return z.cwiseMax(0.0);
    case Activation::Identity: return z;
    }
    return z;
}

MatrixXd activate_derivative(Activation a, const MatrixXd& z, const MatrixXd& s)
{
    switch (a) {
    case Activation::Tanh: return (1.0 - s.array().square()).matrix();
    case Activation::Relu: return (z.array() > 0.0).cast<double>().matrix();
    case Activation::Identity: return MatrixXd::Ones(z.rows(), z.cols());
    }
    return z;
}

struct LayerCache {
    MatrixXd input, z, s, xhat;
    VectorXd mean, var, inv_std;
};

enum class Stats { Batch, Running };

RowVectorXd run(const NetworkParams& p, const MatrixXd& inputs, Stats stats, std::vector<LayerCache>* caches)
{
    if (static_cast<std::size_t>(inputs.rows()) != p.arch.input_dim)
        throw std::invalid_argument("forward: expected " + std::to_string(p.arch.input_dim) + " input rows");
    if (inputs.cols() < 1) throw std::invalid_argument("forward: empty batch");
    if (stats == Stats::Running && inputs.cols() > 1) {
        // column by column, so a prediction never depends on its batch companions
        RowVectorXd out(inputs.cols());
        for (Eigen::Index c = 0; c < inputs.cols(); ++c) out(c) = run(p, inputs.col(c), stats, nullptr)(0);
        return out;
    }
    const bool bn = p.arch.batch_norm();
    MatrixXd h = inputs;
    if (caches) caches->assign(p.hidden.size(), {});
    for (std::size_t k = 0; k < p.hidden.size(); ++k) {
        const auto& layer = p.hidden[k];
        MatrixXd z = (layer.A * h).colwise() + layer.b;
        MatrixXd s = activate(p.arch.activation, z);
        MatrixXd y;
        VectorXd mean, var, inv_std;
        MatrixXd xhat;
        if (bn) {
            if (stats == Stats::Batch) {
                mean = s.rowwise().mean();
                var = (s.colwise() - mean).array().square().rowwise().mean().matrix();
            } else {
                mean = layer.bn.running_mean;
                var = layer.bn.running_var;
            }
            inv_std = (var.array() + kBatchNormEpsilon).rsqrt().matrix();
            xhat = ((s.colwise() - mean).array().colwise() * inv_std.array()).matrix();
            y = ((xhat.array().colwise() * layer.bn.gamma.array()).colwise() + layer.bn.beta.array()).matrix();
        } else {
            y = s;
        }
        MatrixXd next = k == 0 ? y : MatrixXd(h + y);
        if (caches) (*caches)[k] = {std::move(h), std::move(z), std::move(s), std::move(xhat), mean, var, inv_std};
        h = std::move(next);
    }
    RowVectorXd out = p.out_A * h;
    out.array() += p.out_b;
    if (caches) caches->push_back({std::move(h), {}, {}, {}, {}, {}, {}});
    return out;
}

void update_running(NetworkParams& p, const std::vector<LayerCache>& caches, Eigen::Index batch, double momentum)
{
    if (!p.arch.batch_norm()) return;
    const double unbias = batch > 1 ? static_cast<double>(batch) / static_cast<double>(batch - 1) : 1.0;
    for (std::size_t k = 0; k < p.hidden.size(); ++k) {
        auto& bn = p.hidden[k].bn;
        bn.running_mean = (1.0 - momentum) * bn.running_mean + momentum * caches[k].mean;
        bn.running_var = (1.0 - momentum) * bn.running_var + momentum * unbias * caches[k].var;
    }
}

}  // namespace

RowVectorXd forward(NetworkParams& params, const MatrixXd& inputs, Mode mode, double momentum)
{
    if (mode == Mode::Eval) return run(params, inputs, Stats::Running, nullptr);
    std::vector<LayerCache> caches;
    RowVectorXd out = run(params, inputs, Stats::Batch, &caches);
    update_running(params, caches, inputs.cols(), momentum);
    return out;
}

RowVectorXd forward_eval(const NetworkParams& params, const MatrixXd& inputs)
{
    return run(params, inputs, Stats::Running, nullptr);
}

double forward_eval(const NetworkParams& params, double t, const std::vector<double>& x)
{
    VectorXd in(static_cast<Eigen::Index>(x.size() + 1));
    in(0) = t;
    for (std::size_t i = 0; i < x.size(); ++i) in(static_cast<Eigen::Index>(i + 1)) = x[i];
    return run(params, in, Stats::Running, nullptr)(0);
}

namespace {

double loss_impl(const NetworkParams& p, const MatrixXd& inputs, const RowVectorXd& targets,
                 std::vector<double>* gradient, std::vector<LayerCache>* keep)
{
    if (targets.size() != inputs.cols()) throw std::invalid_argument("loss: targets and inputs differ in size");
    std::vector<LayerCache> caches;
    const RowVectorXd out = run(p, inputs, Stats::Batch, &caches);
    const auto B = static_cast<double>(inputs.cols());
    const RowVectorXd resid = out - targets;
    const double loss = resid.squaredNorm() / B;

    if (gradient) {
        NetworkParams g = zero_network(p.arch);
        const RowVectorXd dy = 2.0 * resid / B;
        g.out_A = dy * caches.back().input.transpose();
        g.out_b = dy.sum();
        MatrixXd dh = p.out_A.transpose() * dy;
        const bool bn = p.arch.batch_norm();
        for (std::size_t k = p.hidden.size(); k-- > 0;) {
            const auto& layer = p.hidden[k];
            const auto& c = caches[k];
            MatrixXd ds;
            if (bn) {
                g.hidden[k].bn.gamma = (dh.array() * c.xhat.array()).rowwise().sum().matrix();
                g.hidden[k].bn.beta = dh.rowwise().sum();
                const MatrixXd dxhat = (dh.array().colwise() * layer.bn.gamma.array()).matrix();
                const VectorXd sum_dxhat = dxhat.rowwise().sum();
                const VectorXd sum_dxhat_xhat = (dxhat.array() * c.xhat.array()).rowwise().sum().matrix();
                ds = ((B * dxhat.array()).colwise() - sum_dxhat.array() -
                      c.xhat.array().colwise() * sum_dxhat_xhat.array())
                         .matrix();
                ds = (ds.array().colwise() * (c.inv_std.array() / B)).matrix();
            } else {
                ds = dh;
            }
            const MatrixXd dz = (ds.array() * activate_derivative(p.arch.activation, c.z, c.s).array()).matrix();
            g.hidden[k].A = dz * c.input.transpose();
            g.hidden[k].b = dz.rowwise().sum();
            MatrixXd dinput = layer.A.transpose() * dz;
            if (k > 0) dinput += dh;
            dh = std::move(dinput);
        }
        *gradient = g.flatten();
    }
    if (keep) *keep = std::move(caches);
    return loss;
}

}  // namespace

double loss_and_gradient(const NetworkParams& params, const MatrixXd& inputs, const RowVectorXd& targets,
                         std::vector<double>* gradient)
{
    return loss_impl(params, inputs, targets, gradient, nullptr);
}

double scheduled_learning_rate(const TrainConfig& cfg, std::size_t step)
{
    const std::size_t third = cfg.steps / 3;
    if (third == 0) return cfg.learning_rate;
    const std::size_t drops = std::min<std::size_t>(step / third, 2);
    return cfg.learning_rate * std::pow(10.0, -static_cast<double>(drops));
}

TrainResult train(NetworkParams init, const MatrixXd& inputs, const RowVectorXd& targets, const TrainConfig& cfg)
{
    if (inputs.cols() < 1) throw std::invalid_argument("train: no training pairs");
    if (targets.size() != inputs.cols()) throw std::invalid_argument("train: targets and inputs differ in size");
    if (!targets.allFinite()) throw std::invalid_argument("train: non-finite target");

    TrainResult result{std::move(init), {}};
    NetworkParams& p = result.params;
    std::vector<double> theta = p.flatten();
    std::vector<double> m1(theta.size(), 0.0), m2(theta.size(), 0.0), grad;
    std::vector<LayerCache> caches;

    const auto N = static_cast<std::size_t>(inputs.cols());
    const bool minibatch = cfg.batch_size > 0 && cfg.batch_size < N;
    Philox rng(mix_seed(cfg.seed, seed_purpose::kNetworkInit), 1, 0);
    std::vector<Eigen::Index> order(N);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    MatrixXd batch_in;
    RowVectorXd batch_t;

    double b1t = 1.0, b2t = 1.0;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const MatrixXd* in = &inputs;
        const RowVectorXd* tg = &targets;
        if (minibatch) {
            std::shuffle(order.begin(), order.end(), rng);
            const std::vector<Eigen::Index> pick(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cfg.batch_size));
            batch_in = inputs(Eigen::all, pick);
            batch_t = targets(pick);
            in = &batch_in;
            tg = &batch_t;
        }
        const double loss = loss_impl(p, *in, *tg, &grad, &caches);
        const double lr = scheduled_learning_rate(cfg, step);
        result.log.push_back({step, loss, lr});
        if (!std::isfinite(loss))
            throw TrainingError("non-finite training loss at step " + std::to_string(step), std::move(result.log));
        update_running(p, caches, in->cols(), cfg.bn_momentum);

        b1t *= cfg.beta1;
        b2t *= cfg.beta2;
        for (std::size_t k = 0; k < theta.size(); ++k) {
            m1[k] = cfg.beta1 * m1[k] + (1.0 - cfg.beta1) * grad[k];
            m2[k] = cfg.beta2 * m2[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
            const double mhat = m1[k] / (1.0 - b1t);
            const double vhat = m2[k] / (1.0 - b2t);
            theta[k] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_epsilon);
        }
        p.unflatten(theta);
    }
    return result;
}

void write_train_log_csv(const std::vector<TrainLogEntry>& log, std::ostream& os)
{
    os << "step,loss,learning_rate\n";
    char buf[96];
    for (const auto& e : log) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", e.step, e.loss, e.learning_rate);
        os << buf;
    }
}

namespace {

// Train-mode loss evaluated in extended precision, for the finite-difference oracle.
long double precise_loss(const NetworkParams& p, const MatrixXd& inputs, const RowVectorXd& targets)
{
    using S = long double;
    using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
    using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
    const bool bn = p.arch.batch_norm();
    Mat h = inputs.cast<S>();
    for (std::size_t k = 0; k < p.hidden.size(); ++k) {
        const auto& layer = p.hidden[k];
        Mat z = (layer.A.cast<S>() * h).colwise() + layer.b.cast<S>();
        Mat s = z;
        for (Eigen::Index i = 0; i < s.size(); ++i) {
            if (p.arch.activation == Activation::Tanh) s(i) = std::tanh(z(i));
            if (p.arch.activation == Activation::Relu) s(i) = z(i) > 0 ? z(i) : S(0);
        }
        if (bn) {
            const Vec mean = s.rowwise().mean();
            Mat centered = s.colwise() - mean;
            const Vec var = centered.array().square().rowwise().mean().matrix();
            for (Eigen::Index r = 0; r < s.rows(); ++r) {
                const S inv = 1 / std::sqrt(var(r) + S(kBatchNormEpsilon));
                for (Eigen::Index c = 0; c < s.cols(); ++c)
                    s(r, c) = S(layer.bn.gamma(r)) * centered(r, c) * inv + S(layer.bn.beta(r));
            }
        }
        h = k == 0 ? s : Mat(h + s);
    }
    S loss = 0;
    for (Eigen::Index c = 0; c < h.cols(); ++c) {
        S v = p.out_b;
        for (Eigen::Index r = 0; r < h.rows(); ++r) v += S(p.out_A(r)) * h(r, c);
        loss += (v - targets(c)) * (v - targets(c));
    }
    return loss / static_cast<S>(h.cols());
}

}  // namespace

double gradient_check(const NetworkParams& params, const MatrixXd& inputs, const RowVectorXd& targets, double step)
{
    std::vector<double> analytic;
    loss_and_gradient(params, inputs, targets, &analytic);
    NetworkParams probe = params;
    std::vector<double> theta = params.flatten();
    double worst = 0.0;
    for (std::size_t k = 0; k < theta.size(); ++k) {
        const double saved = theta[k];
        const double hi = saved + step;
        const double lo = saved - step;
        theta[k] = hi;
        probe.unflatten(theta);
        const long double up = precise_loss(probe, inputs, targets);
        theta[k] = lo;
        probe.unflatten(theta);
        const long double down = precise_loss(probe, inputs, targets);
        theta[k] = saved;
        const auto numeric = static_cast<double>((up - down) / (static_cast<long double>(hi) - lo));
        // Entries that vanish analytically (biases ahead of batch norm) would
        // otherwise divide round-off by zero.
        const double scale = std::max({std::abs(analytic[k]), std::abs(numeric), 1e-6});
        worst = std::max(worst, std::abs(analytic[k] - numeric) / scale);
    }
    return worst;
}

// --- model file --------------------------------------------------------------

namespace {

constexpr int kModelVersion = 1;
constexpr const char* kModelFormat = "dbranch-network";

json to_array(const auto& v)
{
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

json matrix_to_array(const MatrixXd& A)
{
    json a = json::array();
    for (Eigen::Index r = 0; r < A.rows(); ++r)
        for (Eigen::Index c = 0; c < A.cols(); ++c) a.push_back(A(r, c));
    return a;
}

template <class V>
void read_vector(const json& a, V& out, const char* what)
{
    if (!a.is_array() || static_cast<Eigen::Index>(a.size()) != out.size())
        throw std::runtime_error(std::string("model file: wrong size for ") + what);
    for (Eigen::Index i = 0; i < out.size(); ++i) out(i) = a.at(static_cast<std::size_t>(i)).get<double>();
}

void read_matrix(const json& a, MatrixXd& out, const char* what)
{
    if (!a.is_array() || static_cast<Eigen::Index>(a.size()) != out.size())
        throw std::runtime_error(std::string("model file: wrong size for ") + what);
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < out.rows(); ++r)
        for (Eigen::Index c = 0; c < out.cols(); ++c) out(r, c) = a.at(k++).get<double>();
}

}  // namespace

std::string save_network(const NetworkParams& params, const std::string& provenance_json)
{
    json j;
    j["format"] = kModelFormat;
    j["version"] = kModelVersion;
    j["architecture"] = {{"input_dim", params.arch.input_dim},
                         {"layers", params.arch.layers},
                         {"width", params.arch.width},
                         {"activation", activation_name(params.arch.activation)},
                         {"batch_norm", params.arch.batch_norm()},
                         {"bn_epsilon", kBatchNormEpsilon},
                         {"dense_parameters", params.dense_parameter_count()}};
    json hidden = json::array();
    for (const auto& h : params.hidden) {
        json layer = {{"A", matrix_to_array(h.A)}, {"b", to_array(h.b)}};
        if (params.arch.batch_norm())
            layer["bn"] = {{"gamma", to_array(h.bn.gamma)},
                           {"beta", to_array(h.bn.beta)},
                           {"running_mean", to_array(h.bn.running_mean)},
                           {"running_var", to_array(h.bn.running_var)}};
        hidden.push_back(std::move(layer));
    }
    j["hidden"] = std::move(hidden);
    j["output"] = {{"A", to_array(params.out_A)}, {"b", params.out_b}};
    if (!provenance_json.empty()) j["provenance"] = json::parse(provenance_json);
    return j.dump(1) + "\n";
}

NetworkParams load_network(std::string_view text)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("model file: ") + e.what());
    }
    try {
        if (j.value("format", "") != kModelFormat) throw std::runtime_error("model file: unknown format");
        if (!j.contains("version")) throw std::runtime_error("model file: missing version");
        if (j.at("version").get<int>() != kModelVersion)
            throw std::runtime_error("model file: unsupported version " + j.at("version").dump());
        const auto& a = j.at("architecture");
        NetworkArch arch;
        arch.input_dim = a.at("input_dim").get<std::size_t>();
        arch.layers = a.at("layers").get<std::size_t>();
        arch.width = a.at("width").get<std::size_t>();
        arch.activation = parse_activation(a.at("activation").get<std::string>());
        if (a.contains("batch_norm") && a.at("batch_norm").get<bool>() != arch.batch_norm())
            throw std::runtime_error("model file: batch_norm flag inconsistent with activation");
        if (a.contains("dense_parameters") && a.at("dense_parameters").get<std::size_t>() != arch.dense_parameter_count())
            throw std::runtime_error("model file: dense parameter count inconsistent with architecture");

        NetworkParams p = zero_network(arch);
        const auto& hidden = j.at("hidden");
        if (!hidden.is_array() || hidden.size() != arch.layers)
            throw std::runtime_error("model file: layer count does not match header");
        for (std::size_t k = 0; k < arch.layers; ++k) {
            const auto& layer = hidden.at(k);
            auto& h = p.hidden[k];
            read_matrix(layer.at("A"), h.A, "A");
            read_vector(layer.at("b"), h.b, "b");
            if (arch.batch_norm()) {
                const auto& bn = layer.at("bn");
                read_vector(bn.at("gamma"), h.bn.gamma, "gamma");
                read_vector(bn.at("beta"), h.bn.beta, "beta");
                read_vector(bn.at("running_mean"), h.bn.running_mean, "running_mean");
                read_vector(bn.at("running_var"), h.bn.running_var, "running_var");
            } else if (layer.contains("bn")) {
                throw std::runtime_error("model file: batch-norm state present without batch norm");
            }
        }
        read_vector(j.at("output").at("A"), p.out_A, "output A");
        p.out_b = j.at("output").at("b").get<double>();
        return p;
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("model file: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error(std::string("model file: ") + e.what());
    }
}

NetworkParams load_network(std::string_view text, const NetworkArch& expected)
{
    NetworkParams p = load_network(text);
    if (!(p.arch == expected)) throw std::runtime_error("model file: architecture does not match the expected one");
    return p;
}

}  // namespace dbranch
