// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Scales and tolerances are fixed here; every run is seeded.

#include "spinv/experiments.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

using namespace spinv;

namespace {

struct Line {
    std::string name;
    bool pass = false;
    std::string detail;
};

int g_failed = 0;

void report(const std::string& name, const std::function<Line()>& check)
{
    const auto start = std::chrono::steady_clock::now();
    Line l;
    try {
        l = check();
    } catch (const std::exception& e) {
        l = {name, false, fmt::format("threw: {}", e.what())};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!l.pass) ++g_failed;
    fmt::print("{} {:<28} {} [{:.1f}s]\n", l.pass ? "PASS" : "FAIL", name, l.detail, secs);
    std::fflush(stdout);
}

BenchConfig bench_config()
{
    BenchConfig b;
    b.instances = 100;
    b.max_rows = 32;
    b.max_cols = 64;
    b.iterations = 500;
    b.lemma_samples = 1000;
    b.seed = 1;
    return b;
}

// ---- gradient checks ----------------------------------------------------------

Vec fd_grad(const HierarchicalEnergy& h, std::vector<Vec> z, std::size_t layer)
{
    constexpr double step = 1e-5;
    Vec g(z[layer].size());
    for (Eigen::Index i = 0; i < g.size(); ++i) {
        const double keep = z[layer](i);
        z[layer](i) = keep + step;
        const double up = smooth_layer_value(h, z, layer);
        z[layer](i) = keep - step;
        const double down = smooth_layer_value(h, z, layer);
        z[layer](i) = keep;
        g(i) = (up - down) / (2.0 * step);
    }
    return g;
}

bool grad_ok(const HierarchicalEnergy& h, const std::vector<Vec>& z, std::size_t layer, double& worst)
{
    const Vec analytic = grad_smooth_layer(h, z, layer);
    const double scale = std::max(1.0, analytic.cwiseAbs().maxCoeff());
    const double err = (analytic - fd_grad(h, z, layer)).cwiseAbs().maxCoeff() / scale;
    worst = std::max(worst, err);
    return err <= 1e-6;
}

// ---- byte-level determinism ----------------------------------------------------

std::string model_bytes(const Model& m)
{
    const auto path = std::filesystem::temp_directory_path() / "spinv_acceptance_model.bin";
    save_model(m, path.string());
    std::ifstream in(path, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::string bench_text(const BenchConfig& b)
{
    std::string out;
    for (RateKind kind : {RateKind::Fista, RateKind::Ista})
        for (const RateRow& r : bench_rates(b, kind))
            out += fmt::format("{},{},{},{},{}\n", r.instance, r.holds, r.worst_ratio, r.worst_k, r.L);
    for (bool convex : {true, false})
        for (const MonotoneRow& r : bench_monotone(b, convex))
            out += fmt::format("{},{},{}\n", r.instance, r.monotone, r.worst_increase);
    for (int layers : {1, 2})
        for (const LemmaRow& r : bench_descent_lemma(b, layers))
            out += fmt::format("{},{},{},{}\n", r.sample, r.holds, r.slack, r.L);
    for (const OracleRow& r : bench_oracle(b)) out += fmt::format("{},{},{}\n", r.instance, r.energy_solver, r.energy_oracle);
    return out;
}

std::string maps_text(std::span<const ResponseMap> maps)
{
    std::string out;
    for (const ResponseMap& m : maps)
        for (Eigen::Index i = 0; i < m.grid.size(); ++i) out += fmt::format("{},{}\n", m.unit_id, m.grid.data()[i]);
    return out;
}

std::string inpaint_text(const InpaintOutcome& r)
{
    std::string out;
    for (std::size_t i = 0; i < r.rms_one_layer.size(); ++i)
        out += fmt::format("{},{}\n", r.rms_one_layer[i], r.rms_unified[i]);
    return out;
}

// Desk-scale training on synthetic translating patches, as the train command
// runs it by default.
SequenceSource desk_source()
{
    SequenceSource s;
    s.n_sequences = 4000;
    s.seed = 1;
    return s;
}

TrainOptions desk_train()
{
    TrainOptions t;
    t.learning_rate = 0.01;
    t.seed = 1;
    return t;
}

}  // namespace

int main()
{
    const BenchConfig bench = bench_config();

    report("fista-rate", [&] {
        const auto rows = bench_rates(bench, RateKind::Fista);
        int pass = 0;
        double worst = 0.0;
        for (const RateRow& r : rows) {
            pass += r.holds && r.worst_ratio <= 1.0;
            worst = std::max(worst, r.worst_ratio);
        }
        return Line{"", pass == 100 && int(rows.size()) == 100,
                    fmt::format("{}/{} lasso instances, k <= 500, worst ratio {:.4f}", pass, rows.size(), worst)};
    });

    report("ista-rate", [&] {
        const auto rows = bench_rates(bench, RateKind::Ista);
        int pass = 0;
        double worst = 0.0;
        for (const RateRow& r : rows) {
            pass += r.holds;
            worst = std::max(worst, r.worst_ratio);
        }
        return Line{"", pass == 100 && int(rows.size()) == 100,
                    fmt::format("{}/{} lasso instances, worst ratio {:.4f}", pass, rows.size(), worst)};
    });

    report("monotone-descent", [&] {
        int pass = 0;
        int total = 0;
        double worst = -std::numeric_limits<double>::infinity();
        for (bool convex : {true, false})
            for (const MonotoneRow& r : bench_monotone(bench, convex, 1e-12)) {
                pass += r.monotone;
                ++total;
                worst = std::max(worst, r.worst_increase);
            }
        return Line{"", pass == 200 && total == 200,
                    fmt::format("{}/{} traces (100 convex, 100 nonconvex), largest step change {:.3g}", pass, total,
                                worst)};
    });

    report("descent-lemma", [&] {
        int pass = 0;
        int total = 0;
        for (int layers : {1, 2})
            for (const LemmaRow& r : bench_descent_lemma(bench, layers)) {
                pass += r.holds;
                ++total;
            }
        return Line{"", pass == 2000 && total == 2000, fmt::format("{}/{} sampled pairs", pass, total)};
    });

    report("cd-oracle", [&] {
        const auto rows = bench_oracle(bench);
        int pass = 0;
        double worst = 0.0;
        for (const OracleRow& r : rows) {
            const double d = std::abs(r.energy_solver - r.energy_oracle);
            pass += d <= 1e-6;
            worst = std::max(worst, d);
        }
        return Line{"", pass == 100 && int(rows.size()) == 100,
                    fmt::format("{}/{} instances within 1e-6, worst {:.3g}", pass, rows.size(), worst)};
    });

    report("gradient-check", [&] {
        Rng rng = make_rng(1, 7000);
        int pass = 0;
        int total = 0;
        double worst = 0.0;
        for (int i = 0; i < 100; ++i) {
            // lasso
            LassoInstance l = random_lasso(rng, 32, 64);
            const HierarchicalEnergy hl = lasso_energy(l.problem);
            pass += grad_ok(hl, random_point(hl, rng), 0, worst);
            // invariant layer
            const Eigen::Index code = 4 + Eigen::Index(i % 20);
            const Dictionary A = init_nonneg_dictionary(code, 2 + i % 6, rng);
            std::uniform_real_distribution<double> mag(0.0, 2.0);
            Vec z_star(code);
            for (Eigen::Index k = 0; k < code; ++k) z_star[k] = mag(rng);
            const InvariantProblem ip{&A, z_star, 0.5, 0.3};
            const HierarchicalEnergy hi = invariant_energy(ip);
            pass += grad_ok(hi, random_point(hi, rng), 0, worst);
            // unified energy, both layers
            const BenchInstance u = random_unified(rng);
            const auto zu = random_point(u.energy, rng);
            pass += grad_ok(u.energy, zu, 0, worst);
            pass += grad_ok(u.energy, zu, 1, worst);
            // convex two-layer family, both layers
            const BenchInstance c = random_convex_two_layer(rng);
            const auto zc = random_point(c.energy, rng);
            pass += grad_ok(c.energy, zc, 0, worst);
            pass += grad_ok(c.energy, zc, 1, worst);
            total += 6;
        }
        return Line{"", pass == total,
                    fmt::format("{}/{} points (lasso, invariant, unified z/u, two-layer z1/z2), worst rel err {:.3g}",
                                pass, total, worst)};
    });

    std::string toy_bytes_first;
    report("toy-invariance", [&] {
        int split_pass = 0;
        int unified_pass = 0;
        std::string detail;
        for (TrainMode mode : {TrainMode::Split, TrainMode::Unified})
            for (std::uint64_t seed = 1; seed <= 5; ++seed) {
                ToyExperiment e;
                e.mode = mode;
                e.seed = seed;
                const ToyOutcome r = run_toy(e);
                (mode == TrainMode::Split ? split_pass : unified_pass) += r.passed;
                detail += fmt::format(" {}{}:{}/{:.2f}", mode == TrainMode::Split ? 's' : 'u', seed,
                                      r.purity.n_active, r.min_purity);
                if (mode == TrainMode::Split && seed == 1) toy_bytes_first = model_bytes(r.model);
            }
        return Line{"", split_pass >= 4 && unified_pass >= 4,
                    fmt::format("split {}/5, unified {}/5 seeds with 4 pure units;{}", split_pass, unified_pass,
                                detail)};
    });

    Model desk;
    std::vector<std::vector<Vec>> desk_sequences;
    const ResponseGrid grid = ResponseGrid::defaults();
    const SolverOptions infer = TrainOptions::default_infer_options();
    std::string desk_maps;
    report("edge-width-ratio", [&] {
        desk_sequences = make_sequences(desk_source());
        desk = train_split(desk_sequences, 20, 20, 100, 25, 0.5, 0.3, desk_train());
        std::vector<Eigen::Index> simple(100), inv(25);
        std::iota(simple.begin(), simple.end(), Eigen::Index(0));
        std::iota(inv.begin(), inv.end(), Eigen::Index(0));
        const auto s = response_maps(desk, UnitKind::Simple, simple, grid, infer);
        const auto u = response_maps(desk, UnitKind::Invariant, inv, grid, infer);
        desk_maps = maps_text(s) + maps_text(u);
        const WidthSummary w = width_summary(s, u, 1.5);
        return Line{"", w.passed,
                    fmt::format("median width invariant {:.2f} / simple {:.2f} = {:.3f} (>= 1.5), {} and {} active",
                                w.median_invariant, w.median_simple, w.ratio, w.n_invariant, w.n_simple)};
    });

    report("beta-overlap-trend", [&] {
        if (!desk.has_invariant_layer()) throw Error("desk model missing");
        const auto codes = accumulated_codes(desk, desk_sequences, infer);
        const std::vector<double> betas{0.5, 0.3, 0.2, 0.1};
        const auto points = beta_sweep(desk, codes, betas, desk_train(), grid, infer);
        std::string d;
        for (const OverlapPoint& p : points) d += fmt::format(" b={}:{:.4f}", p.beta, p.overlap);
        return Line{"", overlap_nondecreasing(points), fmt::format("overlap as beta falls:{}", d)};
    });

    std::string inpaint_first;
    report("inpainting", [&] {
        int pass = 0;
        std::string detail;
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            InpaintExperiment e;
            e.seed = seed;
            const InpaintRun r = run_inpaint(e);
            pass += r.outcome.passed;
            detail += fmt::format(" {}:{:.4f}<={:.4f}", seed, r.outcome.median_unified, r.outcome.median_one_layer);
            if (seed == 1) inpaint_first = inpaint_text(r.outcome) + model_bytes(r.unified);
        }
        return Line{"", pass >= 4, fmt::format("{}/5 seeds unified <= one-layer median RMS;{}", pass, detail)};
    });

    report("determinism", [&] {
        std::vector<std::string> diffs;
        {
            ToyExperiment e;
            e.seed = 1;
            if (model_bytes(run_toy(e).model) != toy_bytes_first) diffs.push_back("toy");
        }
        {
            InpaintExperiment e;
            e.seed = 1;
            const InpaintRun r = run_inpaint(e);
            if (inpaint_text(r.outcome) + model_bytes(r.unified) != inpaint_first) diffs.push_back("inpaint");
        }
        {
            const auto again = make_sequences(desk_source());
            const Model m = train_split(again, 20, 20, 100, 25, 0.5, 0.3, desk_train());
            if (model_bytes(m) != model_bytes(desk)) diffs.push_back("train");
            std::vector<Eigen::Index> simple(100), inv(25);
            std::iota(simple.begin(), simple.end(), Eigen::Index(0));
            std::iota(inv.begin(), inv.end(), Eigen::Index(0));
            const auto s = response_maps(m, UnitKind::Simple, simple, grid, infer);
            const auto u = response_maps(m, UnitKind::Invariant, inv, grid, infer);
            if (maps_text(s) + maps_text(u) != desk_maps) diffs.push_back("responses");
        }
        {
            BenchConfig b = bench;
            b.instances = 10;
            b.lemma_samples = 100;
            if (bench_text(b) != bench_text(b)) diffs.push_back("bench");
        }
        std::string which;
        for (const auto& d : diffs) which += " " + d;
        return Line{"", diffs.empty(),
                    diffs.empty() ? std::string("toy, train, responses, bench, inpaint reruns byte-identical")
                                  : "differs:" + which};
    });

    fmt::print("{} criteria failed\n", g_failed);
    return g_failed == 0 ? 0 : 1;
}
