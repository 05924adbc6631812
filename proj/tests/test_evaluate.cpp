#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "mcinr/evaluate.hpp"
#include "mcinr/trainer.hpp"

using namespace mcinr;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "mcinr_tests";
    fs::create_directories(dir);
    return dir / name;
}

// Brute-force metric oracles, written independently of the library path.
double oracle_mse(const std::vector<float>& gt, const std::vector<float>& pred) {
    long double acc = 0.0L;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const long double d = (long double)(gt[i]) - (long double)(pred[i]);
        acc += d * d;
    }
    return double(acc / (long double)gt.size());
}

double oracle_psnr(const std::vector<float>& gt, const std::vector<float>& pred, double range) {
    return 10.0 * std::log10(range * range / oracle_mse(gt, pred));
}

double oracle_nrmse(const std::vector<float>& gt, const std::vector<float>& pred, double range) {
    return std::sqrt(oracle_mse(gt, pred)) / range;
}

double oracle_r2(const std::vector<float>& gt, const std::vector<float>& pred) {
    long double mean = 0.0L;
    for (float v : gt) mean += v;
    mean /= (long double)gt.size();
    long double res = 0.0L, tot = 0.0L;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        res += ((long double)gt[i] - pred[i]) * ((long double)gt[i] - pred[i]);
        tot += ((long double)gt[i] - mean) * ((long double)gt[i] - mean);
    }
    return double(1.0L - res / tot);
}

// Model trained by the real pipeline on a small smooth dataset.
struct TrainedFixture {
    Dataset ds;
    PipelineResult result;

    TrainedFixture() {
        SynthSpec spec;
        spec.point_count = 800;
        spec.timesteps = 2;
        spec.fields = {FieldKind::Trig};
        spec.seed = 6;
        ds = synthesize(spec);
        PipelineConfig cfg;
        cfg.shape.width = 10;
        cfg.shape.gfe_blocks = 1;
        cfg.shape.lfe_blocks = 1;
        cfg.shape.pe.num_frequencies = 2;
        cfg.train.k = 2;
        cfg.train.initial_lr = 2e-3;
        cfg.train.max_epochs = 400;
        cfg.train.seed = 4;
        cfg.train.worker_count = 2;
        cfg.meta.meta_iterations = 20;
        result = run_pipeline(ds, cfg);
    }
};

const TrainedFixture& trained() {
    static TrainedFixture f;
    return f;
}

}  // namespace

TEST_SUITE_BEGIN("evaluate");

TEST_CASE("psnr closed-form value and zero-MSE sentinel") {
    std::vector<float> gt(100, 0.0f);
    std::vector<float> pred(100, 0.01f);
    bool capped = false;
    CHECK(psnr(gt, pred, 1.0, &capped) == doctest::Approx(40.0).epsilon(1e-6));
    CHECK_FALSE(capped);

    CHECK(psnr(gt, gt, 1.0, &capped) == kPsnrCap);
    CHECK(capped);
}

TEST_CASE("nrmse closed-form values") {
    std::vector<float> gt(50, 0.0f);
    std::vector<float> pred(50, 0.01f);
    CHECK(nrmse(gt, pred, 1.0) == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(nrmse(gt, gt, 1.0) == 0.0);
}

TEST_CASE("metrics match brute-force oracles on random arrays") {
    std::mt19937 rng(44);
    std::uniform_real_distribution<float> u(-2.0f, 5.0f);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 64 + std::size_t(trial) * 13;
        std::vector<float> gt(n), pred(n);
        for (auto& v : gt) v = u(rng);
        for (auto& v : pred) v = u(rng);
        const double range = 7.0;
        CHECK(psnr(gt, pred, range) == doctest::Approx(oracle_psnr(gt, pred, range)).epsilon(1e-6));
        CHECK(nrmse(gt, pred, range) ==
              doctest::Approx(oracle_nrmse(gt, pred, range)).epsilon(1e-6));
        CHECK(r_squared(gt, pred) == doctest::Approx(oracle_r2(gt, pred)).epsilon(1e-6));
        // Duality through the shared range.
        CHECK(psnr(gt, pred, range) ==
              doctest::Approx(-20.0 * std::log10(nrmse(gt, pred, range))).epsilon(1e-6));
    }
}

TEST_CASE("r_squared exact anchors and the negative regime") {
    std::vector<float> gt{1.0f, 2.0f, 3.0f, 4.0f};
    CHECK(r_squared(gt, gt) == 1.0);

    float mean = (1 + 2 + 3 + 4) / 4.0f;
    std::vector<float> mean_pred(4, mean);
    CHECK(r_squared(gt, mean_pred) == 0.0);

    std::vector<float> bad{4.0f, 1.0f, 6.0f, -3.0f};  // worse than the mean predictor
    const double r2 = r_squared(gt, bad);
    CHECK(r2 < 0.0);
    CHECK(r2 == doctest::Approx(oracle_r2(gt, bad)).epsilon(1e-9));

    bool defined = true;
    std::vector<float> constant(6, 2.5f);
    std::vector<float> any(6, 1.0f);
    r_squared(constant, any, &defined);
    CHECK_FALSE(defined);
}

TEST_CASE("metric functions reject shape mismatches") {
    std::vector<float> a(4, 0.0f), b(5, 0.0f);
    CHECK_THROWS_AS(psnr(a, b, 1.0), std::runtime_error);
    CHECK_THROWS_AS(nrmse(a, b, 1.0), std::runtime_error);
    CHECK_THROWS_AS(r_squared(a, b), std::runtime_error);
}

TEST_CASE("decode is batch independent") {
    const EncodedModel& model = trained().result.model;
    const Dataset& ds = trained().ds;
    std::vector<Query4> batch;
    for (std::uint32_t n = 0; n < 1000 && n < ds.point_count; ++n) {
        batch.push_back({ds.coords[n][0], ds.coords[n][1], ds.coords[n][2], ds.times[0]});
    }
    DecodeResult full = decode(model, batch);
    std::vector<Query4> single{batch[37]};
    DecodeResult one = decode(model, single);
    for (std::uint32_t j = 0; j < model.variable_count; ++j) {
        CHECK(one.values.at(0, j) == full.values.at(37, j));
    }
}

TEST_CASE("every training point decodes through the leaf that trained it") {
    const PipelineResult& result = trained().result;
    const Dataset& ds = trained().ds;
    auto [norm, mapper] = normalize(ds);
    (void)mapper;
    std::size_t mismatches = 0;
    for (std::uint32_t n = 0; n < ds.point_count; ++n) {
        if (result.model.partition.assign(norm.coords[n]) != result.point_leaf[n]) ++mismatches;
    }
    CHECK(mismatches == 0);
}

TEST_CASE("decode flags out-of-bounds queries instead of failing") {
    const EncodedModel& model = trained().result.model;
    std::vector<Query4> q{{100.0f, 100.0f, 100.0f, 100.0f}};
    DecodeResult res = decode(model, q);
    CHECK(res.out_of_bounds[0] == 1);
    CHECK(res.out_of_bounds_count == 1);
    for (std::uint32_t j = 0; j < model.variable_count; ++j) {
        CHECK(std::isfinite(res.values.at(0, j)));
    }
}

TEST_CASE("evaluator cross-checks the trainer residual") {
    const PipelineResult& result = trained().result;
    const Dataset& ds = trained().ds;
    MetricReport rep = evaluate_model(result.model, ds, 2);

    double weighted = 0.0;
    std::uint64_t total = 0;
    for (const auto& r : result.results) {
        weighted += r.residual * double(r.point_count);
        total += r.point_count;
    }
    weighted /= double(total);
    CHECK(rep.normalized_mse == doctest::Approx(weighted).epsilon(0.01));
    CHECK(rep.evaluated_records == std::uint64_t(ds.point_count) * ds.timestep_count);
}

TEST_CASE("constant dataset gives an exact error map of zeros") {
    // Degenerate per-variable range: decode returns the constant exactly, so
    // the model reproduces the data regardless of its weights.
    Dataset ds;
    ds.point_count = 20;
    ds.timestep_count = 2;
    ds.variable_count = 1;
    ds.variable_names = {"c"};
    std::mt19937 rng(8);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    ds.coords.resize(20);
    for (auto& p : ds.coords) p = {u(rng), u(rng), u(rng)};
    ds.times = {0.0f, 1.0f};
    ds.values.assign(40, 3.25f);
    ds.recompute_bounds();

    PipelineConfig cfg;
    cfg.shape.width = 4;
    cfg.shape.gfe_blocks = 1;
    cfg.shape.lfe_blocks = 1;
    cfg.shape.pe.num_frequencies = 1;
    cfg.train.k = 1;
    cfg.train.max_epochs = 2;
    cfg.train.seed = 1;
    cfg.train.worker_count = 1;
    cfg.meta.meta_iterations = 0;
    cfg.use_meta = false;
    PipelineResult result = run_pipeline(ds, cfg);

    const auto map_path = temp_file("errmap.csv");
    export_error_map(ds, result.model, map_path.string(), ErrorMapFormat::Csv);
    std::ifstream is(map_path);
    std::string line;
    std::getline(is, line);
    CHECK(line == "x,y,z,t,variable,abs_error");
    std::size_t rows = 0;
    double max_err = 0.0;
    while (std::getline(is, line)) {
        ++rows;
        const auto pos = line.rfind(',');
        max_err = std::max(max_err, std::stod(line.substr(pos + 1)));
    }
    CHECK(rows == std::size_t(ds.point_count) * ds.timestep_count * ds.variable_count);
    CHECK(max_err == 0.0);

    MetricReport rep = evaluate_model(result.model, ds);
    CHECK(rep.psnr_capped_cells == rep.cells.size());  // zero MSE everywhere
    CHECK(rep.r2_undefined_cells == rep.cells.size());
}

TEST_CASE("error map rows match an independent recomputation") {
    const PipelineResult& result = trained().result;
    const Dataset& ds = trained().ds;
    const auto map_path = temp_file("errmap_full.csv");
    export_error_map(ds, result.model, map_path.string(), ErrorMapFormat::Csv);

    // Recompute the maximum error from scratch.
    std::vector<Query4> queries;
    for (std::uint32_t t = 0; t < ds.timestep_count; ++t) {
        for (std::uint32_t p = 0; p < ds.point_count; ++p) {
            queries.push_back({ds.coords[p][0], ds.coords[p][1], ds.coords[p][2], ds.times[t]});
        }
    }
    DecodeResult dec = decode(result.model, queries, 2);
    double expect_max = 0.0;
    for (std::uint32_t t = 0; t < ds.timestep_count; ++t) {
        for (std::uint32_t p = 0; p < ds.point_count; ++p) {
            expect_max = std::max(
                expect_max, std::abs(double(ds.value(t, p, 0)) -
                                     dec.values.at(std::size_t(t) * ds.point_count + p, 0)));
        }
    }
    std::ifstream is(map_path);
    std::string line;
    std::getline(is, line);
    double file_max = 0.0;
    std::size_t rows = 0;
    while (std::getline(is, line)) {
        ++rows;
        file_max = std::max(file_max, std::stod(line.substr(line.rfind(',') + 1)));
    }
    CHECK(rows == std::size_t(ds.point_count) * ds.timestep_count * ds.variable_count);
    CHECK(file_max == doctest::Approx(expect_max).epsilon(1e-6));

    // Delta export: same values as an MCDS payload.
    const auto delta_path = temp_file("errmap.mcds");
    export_error_map(ds, result.model, delta_path.string(), ErrorMapFormat::McdsDelta);
    Dataset delta = read_dataset(delta_path.string(), DataFormat::Native);
    double delta_max = 0.0;
    for (float v : delta.values) delta_max = std::max(delta_max, double(v));
    CHECK(delta_max == doctest::Approx(expect_max).epsilon(1e-6));
}

TEST_CASE("fingerprint mismatch refuses evaluation naming both sides") {
    const PipelineResult& result = trained().result;
    SynthSpec other;
    other.point_count = 100;
    other.timesteps = 2;
    other.fields = {FieldKind::Trig};
    other.seed = 99;
    Dataset wrong = synthesize(other);
    CHECK_THROWS_WITH_AS(evaluate_model(result.model, wrong),
                         doctest::Contains("does not match"), std::runtime_error);
    const auto path = temp_file("refused.csv");
    CHECK_THROWS_AS(export_error_map(wrong, result.model, path.string(), ErrorMapFormat::Csv),
                    std::runtime_error);
}

TEST_CASE("aggregate metrics are the unweighted cell mean") {
    const PipelineResult& result = trained().result;
    const Dataset& ds = trained().ds;
    MetricReport rep = evaluate_model(result.model, ds);
    double psnr_sum = 0.0;
    for (const auto& c : rep.cells) psnr_sum += c.psnr;
    CHECK(rep.mean_psnr == doctest::Approx(psnr_sum / rep.cells.size()).epsilon(1e-12));
    CHECK(rep.cells.size() == std::size_t(ds.variable_count) * ds.timestep_count);
}

TEST_SUITE_END();
