#include "dbranch/sampler.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

#include "dbranch/errors.hpp"

namespace dbranch {

TreeSampler::TreeSampler(const Problem& problem, std::size_t node_budget, std::optional<double> lifetime_rate)
    : problem_(problem),
      table_(problem.signature(), problem.diffusivity()),
      lifetime_(lifetime_rate ? LifetimeDistribution{*lifetime_rate}
                              : LifetimeDistribution::for_horizon(problem.horizon())),
      budget_(node_budget),
      terminal_(problem.ridge(problem.horizon()))
{
    if (budget_ < 1) throw std::invalid_argument("tree node budget must be >= 1");
    if (!(lifetime_.rate > 0.0)) throw std::invalid_argument("lifetime rate must be positive");
    for (const auto& l : problem.signature().lambdas)
        max_lambda_order_ = std::max(max_lambda_order_, static_cast<unsigned>(l.total_order()));
}

double TreeSampler::terminal_value(const Code& c, std::span<const double> y) const
{
    switch (c.kind()) {
    case Code::Kind::Identity: return terminal_.partial(MultiIndex(y.size()), y);
    case Code::Kind::PhiDeriv: return terminal_.partial(c.index(), y);
    case Code::Kind::FDeriv: {
        // one jet of the profile serves every argument d_lambda phi(y)
        double s = terminal_.offset;
        for (std::size_t i = 0; i < y.size(); ++i) s += terminal_.weights[i] * y[i];
        const Jet j = jet(terminal_.profile, s, max_lambda_order_);
        const auto& lambdas = problem_.signature().lambdas;
        std::vector<double> z(lambdas.size());
        for (std::size_t q = 0; q < lambdas.size(); ++q) {
            double factor = 1.0;
            for (std::size_t i = 0; i < y.size(); ++i)
                for (std::uint32_t k = 0; k < lambdas[q][i]; ++k) factor *= terminal_.weights[i];
            z[q] = factor * j[lambdas[q].total_order()];
        }
        return c.coeff().to_double() * problem_.f_partial(c.index(), z);
    }
    }
    return 0.0;
}

namespace {

struct PendingNode {
    double t;
    std::vector<double> x;
    const Code* code;
};

void add_gaussian(std::vector<double>& x, double variance, Philox& rng)
{
    if (variance <= 0.0) return;
    std::normal_distribution<double> normal(0.0, std::sqrt(variance));
    for (auto& v : x) v += normal(rng);
}

}  // namespace

double tree_sample(const TreeSampler& sampler, double t, std::span<const double> x, const Code& c, Philox& rng,
                   TreeRecorder* recorder, std::size_t* node_count)
{
    const double horizon = sampler.problem().horizon();
    const double diffusivity = sampler.problem().diffusivity_value();
    const auto& lifetime = sampler.lifetime();
    std::exponential_distribution<double> draw_lifetime(lifetime.rate);

    double value = 1.0;
    std::size_t nodes = 0;
    std::vector<PendingNode> stack;
    stack.push_back({t, std::vector<double>(x.begin(), x.end()), &c});

    while (!stack.empty()) {
        PendingNode node = std::move(stack.back());
        stack.pop_back();
        if (++nodes > sampler.node_budget())
            throw BudgetExceeded("coding tree exceeded " + std::to_string(sampler.node_budget()) + " nodes");

        const Code& code = *node.code;
        const double tau = draw_lifetime(rng);
        TreeNodeRecord* rec = nullptr;
        if (recorder) {
            recorder->nodes.push_back({node.t, tau, code, false, 0, 0.0});
            rec = &recorder->nodes.back();
        }

        if (node.t + tau > horizon) {
            add_gaussian(node.x, diffusivity * (horizon - node.t), rng);
            const double terminal = sampler.terminal_value(code, node.x);
            value *= terminal / lifetime.tail(horizon - node.t);
            if (rec) {
                rec->leaf = true;
                rec->terminal = terminal;
            }
            continue;
        }

        // M(a g*) is M(g*) with every coefficient scaled by a
        const Mechanism& mech = sampler.mechanisms().get(code.unit());
        const std::size_t q = mech.size();
        if (rec) rec->q = q;
        if (q == 0) {
            value = 0.0;
            continue;
        }
        std::uniform_int_distribution<std::size_t> pick(0, q - 1);
        const MechanismElement& element = mech.elements[pick(rng)];
        value *= code.coeff().to_double() * static_cast<double>(q) / lifetime.density(tau);
        for (const Code& child : element.codes) {
            std::vector<double> y = node.x;
            add_gaussian(y, diffusivity * tau, rng);
            stack.push_back({node.t + tau, std::move(y), &child});
        }
    }
    if (node_count) *node_count = nodes;
    return value;
}

std::vector<SamplePoint> sample_points(const Problem& problem, std::size_t count, std::uint64_t seed)
{
    if (count < 1) throw std::invalid_argument("sample_points: need at least one point");
    Philox rng(mix_seed(seed, seed_purpose::kPoints), 0, 0);
    std::uniform_real_distribution<double> first(problem.x_min(), problem.x_max());
    std::vector<SamplePoint> out(count);
    for (auto& p : out) {
        p.tau = 0.0;
        p.x.assign(problem.dim(), problem.x_mid());
        p.x[0] = first(rng);
    }
    return out;
}

Philox tree_stream(std::uint64_t seed, std::size_t i, std::size_t j)
{
    return Philox(mix_seed(seed, seed_purpose::kTrees), static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));
}

double SampleBatch::mean(std::size_t i) const
{
    double sum = 0.0;
    std::size_t used = 0;
    for (double v : row(i)) {
        if (policy == NonfinitePolicy::DiscardAndReport && !std::isfinite(v)) continue;
        sum += v;
        ++used;
    }
    return used ? sum / static_cast<double>(used) : std::numeric_limits<double>::quiet_NaN();
}

double SampleBatch::standard_error(std::size_t i) const
{
    const double m = mean(i);
    double ss = 0.0;
    std::size_t used = 0;
    for (double v : row(i)) {
        if (policy == NonfinitePolicy::DiscardAndReport && !std::isfinite(v)) continue;
        ss += (v - m) * (v - m);
        ++used;
    }
    if (used < 2) return std::numeric_limits<double>::quiet_NaN();
    return std::sqrt(ss / static_cast<double>(used - 1) / static_cast<double>(used));
}

std::vector<double> SampleBatch::means() const
{
    std::vector<double> out(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = mean(i);
    return out;
}

namespace {

enum class DrawStatus : std::uint8_t { Ok, Domain, Budget };

// Per-draw results in flat arrays; messages are kept only for failed draws.
struct Outcomes {
    std::vector<double> values;
    std::vector<std::uint32_t> nodes;
    std::vector<DrawStatus> status;
    std::vector<std::pair<std::size_t, std::string>> messages;

    explicit Outcomes(std::size_t n) : values(n), nodes(n), status(n, DrawStatus::Ok) {}
};

// Draw (i, j) into slot k. Returns the failure message, if any.
std::optional<std::string> draw_one(const TreeSampler& sampler, const SamplePoint& p, std::uint64_t seed,
                                    std::size_t i, std::size_t j, std::size_t k, Outcomes& out)
{
    Philox rng = tree_stream(seed, i, j);
    std::size_t nodes = 0;
    try {
        out.values[k] = tree_sample(sampler, p.tau, p.x, Code::identity(), rng, nullptr, &nodes);
        out.nodes[k] = static_cast<std::uint32_t>(std::min<std::size_t>(nodes, UINT32_MAX));
        return std::nullopt;
    } catch (const BudgetExceeded& e) {
        out.status[k] = DrawStatus::Budget;
        out.values[k] = std::numeric_limits<double>::quiet_NaN();
        return std::string(e.what());
    } catch (const DomainError& e) {
        out.status[k] = DrawStatus::Domain;
        out.values[k] = std::numeric_limits<double>::quiet_NaN();
        return std::string(e.what());
    } catch (const OrderTooHigh& e) {
        // derivative orders past the exact-arithmetic range: the draw has no representable value
        out.status[k] = DrawStatus::Domain;
        out.values[k] = std::numeric_limits<double>::quiet_NaN();
        return std::string(e.what());
    } catch (const std::overflow_error& e) {
        out.status[k] = DrawStatus::Domain;
        out.values[k] = std::numeric_limits<double>::quiet_NaN();
        return std::string(e.what());
    }
}

void check_inputs(const Problem& problem, std::span<const SamplePoint> points, std::size_t draws)
{
    if (draws < 1) throw std::invalid_argument("batch_estimate: M must be >= 1");
    if (points.size() > std::numeric_limits<std::uint32_t>::max() || draws > std::numeric_limits<std::uint32_t>::max())
        throw std::invalid_argument("batch_estimate: N and M must fit in 32 bits");
    for (const auto& p : points) {
        if (p.x.size() != problem.dim()) throw std::invalid_argument("batch_estimate: point dimension mismatch");
        if (p.tau < 0.0 || p.tau > problem.horizon()) throw std::invalid_argument("batch_estimate: tau outside [0,T]");
    }
}

// Deterministic, index-ordered reduction of per-draw outcomes.
SampleBatch assemble(std::span<const SamplePoint> points, std::size_t draws, const SamplerConfig& cfg,
                     Outcomes&& outcomes)
{
    std::sort(outcomes.messages.begin(), outcomes.messages.end());
    SampleBatch batch;
    batch.points.assign(points.begin(), points.end());
    batch.draws = draws;
    batch.policy = cfg.nonfinite_policy;
    auto& diag = batch.diagnostics;
    std::vector<SampleFailure> budget_failures;
    auto message = outcomes.messages.begin();
    for (std::size_t k = 0; k < outcomes.values.size(); ++k) {
        const std::size_t i = k / draws;
        const std::size_t j = k % draws;
        const DrawStatus status = outcomes.status[k];
        if (status != DrawStatus::Ok) {
            std::string what = message != outcomes.messages.end() && message->first == k ? (message++)->second : "";
            if (status == DrawStatus::Budget) {
                budget_failures.push_back({i, j, std::move(what)});
                continue;
            }
            diag.failures.push_back({i, j, std::move(what)});
        }
        if (const auto n = outcomes.nodes[k]; n > 0) {
            const auto bucket = static_cast<std::size_t>(std::bit_width(n) - 1);
            if (diag.tree_size_histogram.size() <= bucket) diag.tree_size_histogram.resize(bucket + 1, 0);
            ++diag.tree_size_histogram[bucket];
            diag.max_tree_size = std::max<std::size_t>(diag.max_tree_size, n);
        }
        if (!std::isfinite(outcomes.values[k])) {
            ++diag.nonfinite_count;
            if (cfg.nonfinite_policy == NonfinitePolicy::DiscardAndReport)
                ++diag.discarded;
            else
                diag.failed = true;
        }
    }
    if (!budget_failures.empty()) {
        std::ostringstream msg;
        msg << budget_failures.size() << " tree(s) exceeded the node budget, first at (i=" << budget_failures[0].i
            << ", j=" << budget_failures[0].j << ")";
        throw SamplingError(msg.str(), std::move(budget_failures));
    }
    batch.values = std::move(outcomes.values);
    return batch;
}

}  // namespace

SampleBatch batch_estimate_serial(const Problem& problem, std::span<const SamplePoint> points, std::size_t draws,
                                  const SamplerConfig& cfg)
{
    check_inputs(problem, points, draws);
    const TreeSampler sampler(problem, cfg.tree_node_budget, cfg.lifetime_rate);
    Outcomes out(points.size() * draws);
    for (std::size_t i = 0; i < points.size(); ++i)
        for (std::size_t j = 0; j < draws; ++j) {
            const std::size_t k = i * draws + j;
            if (auto msg = draw_one(sampler, points[i], cfg.seed, i, j, k, out)) out.messages.emplace_back(k, *msg);
        }
    return assemble(points, draws, cfg, std::move(out));
}

SampleBatch batch_estimate(const Problem& problem, std::span<const SamplePoint> points, std::size_t draws,
                           const SamplerConfig& cfg)
{
    check_inputs(problem, points, draws);
    const TreeSampler sampler(problem, cfg.tree_node_budget, cfg.lifetime_rate);
    const auto total = static_cast<std::int64_t>(points.size() * draws);
    Outcomes out(static_cast<std::size_t>(total));
#pragma omp parallel for schedule(dynamic, 64)
    for (std::int64_t kk = 0; kk < total; ++kk) {
        const auto k = static_cast<std::size_t>(kk);
        if (auto msg = draw_one(sampler, points[k / draws], cfg.seed, k / draws, k % draws, k, out)) {
#pragma omp critical(dbranch_sample_messages)
            out.messages.emplace_back(k, std::move(*msg));
        }
    }
    return assemble(points, draws, cfg, std::move(out));
}

// --- CSV ---------------------------------------------------------------------

namespace {

std::string format_double(double v)
{
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

double parse_double(const std::string& s)
{
    if (s == "nan" || s == "-nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw std::runtime_error("samples csv: bad number '" + s + "'");
    return v;
}

}  // namespace

void write_samples_csv(const SampleBatch& batch, std::ostream& os, const std::string& comment)
{
    if (!comment.empty()) os << "# " << comment << '\n';
    const std::size_t d = batch.points.empty() ? 0 : batch.points[0].x.size();
    os << "i,j,tau";
    for (std::size_t k = 1; k <= d; ++k) os << ",x_" << k;
    os << ",H\n";
    for (std::size_t i = 0; i < batch.size(); ++i) {
        std::string prefix = "," + format_double(batch.points[i].tau);
        for (double v : batch.points[i].x) prefix += "," + format_double(v);
        for (std::size_t j = 0; j < batch.draws; ++j)
            os << i << ',' << j << prefix << ',' << format_double(batch.value(i, j)) << '\n';
    }
}

SampleBatch read_samples_csv(std::istream& is)
{
    std::string line;
    do {
        if (!std::getline(is, line)) throw std::runtime_error("samples csv: empty input");
    } while (line.starts_with('#'));
    std::size_t columns = 1 + static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
    if (columns < 5 || line.rfind("i,j,tau", 0) != 0) throw std::runtime_error("samples csv: bad header");
    const std::size_t d = columns - 4;
    SampleBatch batch;
    std::vector<std::string> cells;
    std::size_t expected_i = 0;
    std::size_t expected_j = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        cells.clear();
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != columns) throw std::runtime_error("samples csv: wrong column count");
        const auto i = std::stoull(cells[0]);
        const auto j = std::stoull(cells[1]);
        if (j == 0) {
            if (i != batch.points.size()) throw std::runtime_error("samples csv: rows out of order");
            SamplePoint p;
            p.tau = parse_double(cells[2]);
            for (std::size_t k = 0; k < d; ++k) p.x.push_back(parse_double(cells[3 + k]));
            batch.points.push_back(std::move(p));
            if (i == 1) batch.draws = expected_j;
            if (i > 1 && expected_j != batch.draws) throw std::runtime_error("samples csv: ragged rows");
            expected_i = i;
            expected_j = 0;
        }
        if (i != expected_i || j != expected_j) throw std::runtime_error("samples csv: rows out of order");
        batch.values.push_back(parse_double(cells[3 + d]));
        ++expected_j;
    }
    if (batch.points.empty()) throw std::runtime_error("samples csv: no rows");
    if (batch.points.size() == 1) batch.draws = expected_j;
    if (expected_j != batch.draws || batch.values.size() != batch.points.size() * batch.draws)
        throw std::runtime_error("samples csv: ragged rows");
    return batch;
}

}  // namespace dbranch
