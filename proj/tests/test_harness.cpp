#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <omp.h>

#include "dbranch/harness.hpp"

using namespace dbranch;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p)
{
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name)
{
    const fs::path dir = fs::temp_directory_path() / ("dbranch-test-" + name);
    fs::remove_all(dir);
    return dir;
}

RunConfig small(const std::string& problem = "allen-cahn")
{
    RunConfig cfg;
    cfg.problem = problem;
    cfg.preset = "desk";
    cfg.N = 12;
    cfg.M = 40;
    cfg.P = 15;
    cfg.seed = 17;
    return cfg;
}

}  // namespace

TEST_CASE("evaluation grid")
{
    const auto ac = make_problem("allen-cahn");
    const auto g = evaluation_grid(*ac);
    REQUIRE(g.size() == 101);
    CHECK(g[0].x[0] == -8.0);
    CHECK(g[1].x[0] - g[0].x[0] == doctest::Approx(0.16));
    CHECK(g[100].x[0] == 8.0);
    for (const auto& p : g) CHECK(p.tau == 0.0);
    const auto e5 = make_problem("exponential", {5, std::nullopt});
    for (const auto& p : evaluation_grid(*e5)) {
        REQUIRE(p.x.size() == 5);
        for (std::size_t k = 1; k < 5; ++k) CHECK(p.x[k] == 0.0);
    }
    const auto merton = make_problem("merton");
    CHECK(evaluation_grid(*merton)[50].x[0] == doctest::Approx(150.0));
}

TEST_CASE("lp errors normalize by 100")
{
    const std::vector<double> truth(101, 0.0);
    std::vector<double> pred(101, 0.01);
    CHECK(lp_error(truth, pred, 1) == doctest::Approx(0.0101));
    CHECK(lp_error(truth, pred, 2) == doctest::Approx(1.01e-4));
    CHECK(lp_error(truth, truth, 1) == 0.0);
    CHECK_THROWS(lp_error(truth, std::vector<double>(100, 0.0), 1));
    const auto s = summarize({1.0, 2.0, 3.0});
    CHECK(s.mean == 2.0);
    CHECK(s.stdev == doctest::Approx(1.0));
    CHECK(summarize({4.0}).stdev == 0.0);
}

TEST_CASE("config resolution")
{
    RunConfig full;
    const auto p = resolve(full);
    CHECK(p.problem == "allen-cahn");
    CHECK(p.N == 1000);
    CHECK(p.M == 100000);
    CHECK(p.P == 3000);
    CHECK(p.eta == 0.01);
    CHECK(p.layers == 6);
    CHECK(p.width == 20);
    CHECK(p.activation == "tanh");
    CHECK(p.lifetime_rate == doctest::Approx(-std::log(0.95) / 0.5));
    CHECK(p.arch().input_dim == 2);
    CHECK(p.arch().dense_parameter_count() == 2181);

    RunConfig desk;
    desk.preset = "desk";
    const auto d = resolve(desk);
    CHECK(d.N == 200);
    CHECK(d.M == 2000);
    CHECK(d.P == 600);

    RunConfig merton;
    merton.problem = "merton";
    CHECK(resolve(merton).activation == "relu");
    CHECK(resolve(merton).M == 10000);

    RunConfig cfg;
    apply_json(cfg, json::parse(R"({"problem":"burgers","d":3,"T":0.2,"N":7,"M":9,"P":4,"eta":0.02,"l":2,"m":5,
                                    "activation":"identity","seed":3,"runs":2,"nonfinite_policy":"discard",
                                    "tree_node_budget":50,"batch_size":4,"lifetime_rate":1.5,"preset":"desk"})"));
    const auto r = resolve(cfg);
    CHECK(r.dim == 3);
    CHECK(r.horizon == 0.2);
    CHECK(r.arch().input_dim == 4);
    CHECK(r.arch().activation == Activation::Identity);
    CHECK(r.nonfinite_policy == NonfinitePolicy::DiscardAndReport);
    CHECK(r.sampler_config(9).tree_node_budget == 50);
    CHECK(r.train_config(9).batch_size == 4);
    CHECK(r.train_config(9).steps == 4);
    // the embedded config resolves to the same run
    CHECK(resolve(config_from_json(r.to_json())).to_json() == r.to_json());

    RunConfig bad;
    CHECK_THROWS(apply_json(bad, json::parse(R"({"bogus":1})")));
    CHECK_THROWS(apply_json(bad, json::parse(R"({"nonfinite_policy":"ignore"})")));
    bad.preset = "huge";
    CHECK_THROWS(resolve(bad));
    RunConfig zero;
    zero.N = 0;
    CHECK_THROWS(resolve(zero));
}

TEST_CASE("repetition seeds")
{
    CHECK(repetition_seed(5, 0) == 5);
    CHECK(repetition_seed(5, 1) != 5);
    CHECK(repetition_seed(5, 1) != repetition_seed(5, 2));
    CHECK(repetition_seed(5, 1) == repetition_seed(5, 1));
}

TEST_CASE("end to end run writes every artifact")
{
    const auto dir = scratch("run");
    const auto report = run(small(), {dir, {}});
    for (const char* f : {"samples.csv", "samples.json", "model.json", "grid.csv", "train_log.csv", "report.json",
                          "timing.json"})
        CHECK(fs::exists(dir / f));
    const auto j = json::parse(slurp(dir / "report.json"));
    CHECK(j["status"] == "ok");
    CHECK(j["config"]["N"] == 12);
    CHECK(j["runs"].size() == 1);
    CHECK(j["runs"][0]["l1"].get<double>() == report.runs[0].l1);
    CHECK(json::parse(slurp(dir / "timing.json")).contains("runs"));
    CHECK(slurp(dir / "report.json").find("seconds") == std::string::npos);

    // the saved model reproduces the grid
    const std::string model_text = slurp(dir / "model.json");
    const auto model = load_network(model_text, resolve(small()).arch());
    const auto grid = evaluate_grid(*make_problem("allen-cahn"), model, nullptr);
    REQUIRE(grid.size() == 101);
    for (std::size_t i = 0; i < grid.size(); ++i) CHECK(grid[i].predicted == report.runs[0].grid[i].predicted);
    CHECK(json::parse(model_text)["provenance"]["config"] == j["config"]);

    std::ifstream csv(dir / "grid.csv");
    std::string first, header;
    std::getline(csv, first);
    std::getline(csv, header);
    CHECK(first.rfind("# ", 0) == 0);
    CHECK(header == "x_1,true,predicted,mc_mean,mc_stderr");
    fs::remove_all(dir);
}

TEST_CASE("sample cache round trip gives the same trained model")
{
    const auto dir = scratch("cache");
    const auto first = run(small(), {dir / "a", {}});
    const auto cached = read_sample_cache(dir / "a" / "samples.csv");
    CHECK(cached.size() == 12);
    CHECK(cached.draws == 40);
    const auto second = run(small(), {dir / "b", dir / "a" / "samples.csv"});
    CHECK(second.runs[0].model.flatten() == first.runs[0].model.flatten());
    CHECK(slurp(dir / "a" / "report.json") == slurp(dir / "b" / "report.json"));

    RunConfig other = small();
    other.M = 41;
    CHECK_THROWS_AS(run(other, {dir / "c", dir / "a" / "samples.csv"}), StageError);
    CHECK(json::parse(slurp(dir / "c" / "report.json"))["stage"] == "sample");
    fs::remove_all(dir);
}

TEST_CASE("byte-identical outputs across thread counts")
{
    const auto dir = scratch("determinism");
    const int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    run(small("burgers"), {dir / "one", {}});
    omp_set_num_threads(4);
    run(small("burgers"), {dir / "four", {}});
    omp_set_num_threads(saved);
    for (const char* f : {"samples.csv", "report.json", "model.json", "grid.csv", "train_log.csv"})
        CHECK(slurp(dir / "one" / f) == slurp(dir / "four" / f));
    fs::remove_all(dir);
}

TEST_CASE("repetitions and failures")
{
    const auto dir = scratch("runs");
    RunConfig cfg = small();
    cfg.runs = 3;
    const auto report = run(cfg, {dir, {}});
    REQUIRE(report.runs.size() == 3);
    CHECK(fs::exists(dir / "run-2" / "model.json"));
    CHECK(report.runs[0].seed == 17);
    CHECK(report.runs[1].seed == repetition_seed(17, 1));
    CHECK(report.l1().mean == doctest::Approx((report.runs[0].l1 + report.runs[1].l1 + report.runs[2].l1) / 3));
    CHECK(json::parse(slurp(dir / "report.json"))["aggregate"]["l1"]["mean"].get<double>() == report.l1().mean);

    RunConfig tight = small();
    tight.tree_node_budget = 1;
    tight.lifetime_rate = 50.0;
    try {
        run(tight, {dir / "failed", {}});
        FAIL("expected a sampling failure");
    } catch (const StageError& e) {
        CHECK(e.stage() == "sample");
    }
    CHECK(json::parse(slurp(dir / "failed" / "report.json"))["status"] == "failed");
    fs::remove_all(dir);
}
