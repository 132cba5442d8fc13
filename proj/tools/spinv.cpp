// spinv command-line front end.
//
// Exit codes: 0 = ran and the run's acceptance check passed (or has none),
// 1 = ran but the acceptance check failed, 2 = usage, config or input error.

#include "config.hpp"

#include "spinv/experiments.hpp"
#include "spinv/kernels.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/os.h>
#include <omp.h>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <numeric>

namespace fs = std::filesystem;
using namespace spinv;
using spinv::cli::ConfigError;
using spinv::cli::RunConfig;

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;

struct Options {
    SolverOptions convex;   // lasso and invariant-layer solves
    SolverOptions unified;  // solves on the joint (nonconvex) energy
};

Momentum parse_momentum(const std::string& s)
{
    if (s == "none") return Momentum::None;
    if (s == "fista") return Momentum::Fista;
    if (s == "capped") return Momentum::CappedFista;
    throw ConfigError(fmt::format("momentum: expected auto, none, fista or capped, got '{}'", s));
}

Options solver_options(const RunConfig& c)
{
    SolverOptions base;
    base.max_iter = c.integer("max_iter");
    base.tol = c.num("tol");
    base.L0 = c.num("L0");
    base.eta = c.num("eta");
    base.momentum_cap = c.num("momentum_cap");
    base.record_trace = false;
    Options o{base, base};
    const std::string& m = c.str("momentum");
    if (m == "auto") {
        o.convex.momentum = Momentum::Fista;
        o.unified.momentum = Momentum::None;
    } else {
        o.convex.momentum = o.unified.momentum = parse_momentum(m);
    }
    o.convex.validate();
    o.unified.validate();
    return o;
}

TrainOptions train_options(const RunConfig& c, double rate)
{
    TrainOptions t;
    t.learning_rate = rate;
    t.decay = c.num("decay");
    t.epochs = c.integer("epochs");
    t.batch = c.integer("batch");
    t.seed = c.u64("seed");
    t.infer_opts = solver_options(c).convex;
    t.validate();
    return t;
}

TrainMode parse_mode(const RunConfig& c)
{
    const std::string& m = c.str("mode");
    if (m == "split") return TrainMode::Split;
    if (m == "unified") return TrainMode::Unified;
    throw ConfigError(fmt::format("mode: expected split or unified, got '{}'", m));
}

std::pair<Eigen::Index, Eigen::Index> model_dims(const RunConfig& c)
{
    const std::string& scale = c.str("scale");
    if (scale != "desk" && scale != "paper") throw ConfigError("scale: expected desk or paper");
    Eigen::Index code = c.integer("code_dim");
    Eigen::Index inv = c.integer("inv_dim");
    if (scale == "paper") {
        if (!c.is_set("code_dim")) code = 400;
        if (!c.is_set("inv_dim")) inv = 100;
    }
    if (code < 1 || inv < 1) throw ConfigError("code_dim and inv_dim must be positive");
    return {code, inv};
}

ToyConfig toy_config(const RunConfig& c)
{
    ToyConfig t{c.integer("toy_size"), c.integer("toy_orientations"), c.integer("toy_positions"),
                c.num("toy_line_prob")};
    t.validate();
    return t;
}

fs::path out_dir(const RunConfig& c)
{
    const fs::path dir = c.str("out");
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& path, const std::string& text)
{
    auto f = fmt::output_file(path.string());
    f.print("{}", text);
}

std::string fmt_num(double v)
{
    return std::isnan(v) ? std::string("nan") : fmt::format("{}", v);
}

std::vector<Patch> filters(const Model& m)
{
    std::vector<Patch> out;
    for (Eigen::Index j = 0; j < m.W.cols(); ++j)
        out.push_back(Image::from_vector(m.W.data.col(j), m.patch_height, m.patch_width));
    return out;
}

// One mosaic row per invariant unit: its top_k simple-unit filters by weight.
void write_grouping(const Model& m, int top_k, const fs::path& dir, const std::string& stem,
                    const std::vector<TemplateMatch>* matches)
{
    const auto report = grouping_report(m, top_k);
    const auto fs = filters(m);
    std::vector<Patch> tiles;
    std::string csv = matches ? "invariant_unit,rank,simple_unit,weight,template,correlation\n"
                              : "invariant_unit,rank,simple_unit,weight\n";
    for (std::size_t j = 0; j < report.size(); ++j)
        for (std::size_t r = 0; r < report[j].size(); ++r) {
            const GroupEntry& g = report[j][r];
            tiles.push_back(fs[std::size_t(g.unit)]);
            if (matches) {
                const TemplateMatch& tm = (*matches)[std::size_t(g.unit)];
                csv += fmt::format("{},{},{},{},{},{}\n", j, r, g.unit, g.weight, tm.template_id, tm.correlation);
            } else {
                csv += fmt::format("{},{},{},{}\n", j, r, g.unit, g.weight);
            }
        }
    write_text(dir / (stem + "_grouping.csv"), csv);
    if (!tiles.empty()) write_pgm((dir / (stem + "_invariant.pgm")).string(), mosaic(tiles, int(report[0].size())));
}

// ---- toy ---------------------------------------------------------------------

int cmd_toy(const RunConfig& c)
{
    ToyExperiment e;
    e.toy = toy_config(c);
    e.mode = parse_mode(c);
    e.code_dim = c.integer("toy_code_dim");
    e.inv_dim = c.integer("toy_inv_dim");
    e.alpha = c.num("alpha");
    e.beta = c.num("beta");
    e.n_train = c.integer("toy_train");
    e.n_eval = c.integer("toy_eval");
    e.train = train_options(c, c.num("toy_learning_rate"));
    e.unified_momentum = solver_options(c).unified.momentum;
    e.seed = c.u64("seed");
    const int top_k = c.integer("top_k");
    e.validate();
    const fs::path dir = out_dir(c);

    const ToyOutcome r = run_toy(e);
    save_model(r.model, (dir / "toy_model.bin").string());
    write_pgm((dir / "toy_filters.pgm").string(), mosaic(filters(r.model), 16));
    write_grouping(r.model, top_k, dir, "toy", &r.matches);
    std::string csv = "unit,frequency,purity,orientation,active\n";
    for (const UnitPurity& u : r.purity.units)
        csv += fmt::format("{},{},{},{},{}\n", u.unit, u.frequency, u.purity, u.orientation, u.orientation >= 0);
    write_text(dir / "toy_purity.csv", csv);

    fmt::print("toy ({}): {} active invariant units, {} orientations covered, min purity {:.4f} -> {}\n",
               to_string(e.mode), r.purity.n_active, r.distinct_orientations, r.min_purity,
               r.passed ? "PASS" : "FAIL");
    return r.passed ? kOk : kFailed;
}

// ---- train -------------------------------------------------------------------

SequenceSource sequence_source(const RunConfig& c)
{
    SequenceSource s;
    s.images = c.str_list("images");
    for (const std::string& p : s.images)
        if (!fs::exists(p)) throw ConfigError(fmt::format("input image {} does not exist", p));
    s.synthetic_size = c.integer("synthetic_size");
    s.synthetic_count = c.integer("synthetic_count");
    s.preprocess.sigma = c.num("sigma");
    s.preprocess.radius = c.integer("radius");
    s.preprocess.cutoff_ratio = c.num("cutoff");
    s.sequence.window = c.integer("window");
    s.sequence.frames = c.integer("frames");
    s.sequence.mag_lo = c.num("mag_lo");
    s.sequence.mag_hi = c.num("mag_hi");
    s.sequence.cumulative = c.flag("cumulative");
    s.n_sequences = c.integer("sequences");
    s.seed = c.u64("seed");
    s.validate();
    return s;
}

int cmd_train(const RunConfig& c)
{
    const TrainMode mode = parse_mode(c);
    const auto [code, inv] = model_dims(c);
    const double alpha = c.num("alpha");
    const double beta = c.num("beta");
    TrainOptions opts = train_options(c, c.num("learning_rate"));
    const Options solve = solver_options(c);
    const SequenceSource src = sequence_source(c);
    const fs::path dir = out_dir(c);
    const std::string model_path = c.str("model").empty() ? (dir / "model.bin").string() : c.str("model");

    const auto sequences = make_sequences(src);
    const int side = src.sequence.window;
    Model m;
    if (!c.str("resume").empty()) {
        m = load_model(c.str("resume"));
        const ModelKind want = mode == TrainMode::Split ? ModelKind::SplitLayer2 : ModelKind::Unified;
        if (m.kind != want)
            throw ConfigError(fmt::format("resume: model is {}, mode asks for {}", to_string(m.kind),
                                          to_string(want)));
        if (m.patch_height != side || m.patch_width != side)
            throw ConfigError("resume: model patch size does not match window");
        if (mode == TrainMode::Split) {
            std::vector<Vec> frames;
            for (const auto& s : sequences) frames.insert(frames.end(), s.begin(), s.end());
            train_sparse_coding(m, frames, opts);
            train_invariant(m, accumulated_codes(m, sequences, opts.infer_opts), opts);
        } else {
            opts.infer_opts = solve.unified;
            train_unified(m, sequences, opts);
        }
    } else if (mode == TrainMode::Split) {
        m = train_split(sequences, side, side, code, inv, alpha, beta, opts);
    } else {
        m = init_model(ModelKind::Unified, side, side, code, inv, alpha, beta, src.sequence.frames, opts.seed);
        opts.infer_opts = solve.unified;
        train_unified(m, sequences, opts);
    }

    save_model(m, model_path);
    write_pgm((dir / "filters.pgm").string(), mosaic(filters(m), 20));
    write_grouping(m, c.integer("top_k"), dir, "train", nullptr);
    fmt::print("trained {} model: {} simple / {} invariant units, {} W updates, {} A updates -> {}\n",
               to_string(m.kind), m.W.cols(), m.A.cols(), m.w_steps, m.a_steps, model_path);
    return kOk;
}

// ---- responses ---------------------------------------------------------------

std::vector<Eigen::Index> unit_selection(const RunConfig& c, const std::string& key, Eigen::Index limit)
{
    const std::string& v = c.str(key);
    std::vector<Eigen::Index> out;
    if (v == "all") {
        out.resize(std::size_t(limit));
        std::iota(out.begin(), out.end(), Eigen::Index(0));
        return out;
    }
    if (v == "none") return out;
    for (double id : c.num_list(key)) {
        if (id != std::floor(id) || id < 0 || id >= double(limit))
            throw ConfigError(fmt::format("{}: unit {} out of range [0, {})", key, id, limit));
        out.push_back(Eigen::Index(id));
    }
    return out;
}

void write_maps(const fs::path& path, std::span<const ResponseMap> maps)
{
    std::string csv = "unit,theta,b,response\n";
    for (const ResponseMap& m : maps)
        for (std::size_t t = 0; t < m.theta_samples.size(); ++t)
            for (std::size_t b = 0; b < m.b_samples.size(); ++b)
                csv += fmt::format("{},{},{},{}\n", m.unit_id, m.theta_samples[t], m.b_samples[b],
                                   fmt_num(m.grid(Eigen::Index(t), Eigen::Index(b))));
    write_text(path, csv);
}

int cmd_responses(const RunConfig& c)
{
    if (c.str("model").empty()) throw ConfigError("responses needs model=<file>");
    const Model m = load_model(c.str("model"));
    if (m.patch_height != m.patch_width) throw ConfigError("responses need a model with square patches");
    const Options solve = solver_options(c);

    ResponseGrid grid;
    const int nb = c.integer("b_steps");
    const int nt = c.integer("theta_steps");
    if (nb < 1 || nt < 1) throw ConfigError("b_steps and theta_steps must be positive");
    const double b0 = c.num("b_min");
    const double b1 = c.num("b_max");
    for (int i = 0; i < nb; ++i) grid.b_samples.push_back(nb == 1 ? b0 : b0 + (b1 - b0) * i / (nb - 1));
    for (int i = 0; i < nt; ++i) grid.theta_samples.push_back(i * std::acos(-1.0) / nt);
    grid.k = c.num("k");
    if (!(grid.k > 0.0)) throw ConfigError("k must be positive");

    const auto simple_ids = unit_selection(c, "simple_units", m.W.cols());
    const auto inv_ids = m.has_invariant_layer() ? unit_selection(c, "invariant_units", m.A.cols())
                                                 : std::vector<Eigen::Index>{};
    const double min_ratio = c.num("min_ratio");
    const auto betas = c.num_list("beta_sweep");
    const fs::path dir = out_dir(c);

    std::vector<ResponseMap> simple;
    std::vector<ResponseMap> invariant;
    if (!simple_ids.empty()) simple = response_maps(m, UnitKind::Simple, simple_ids, grid, solve.convex);
    if (!inv_ids.empty()) invariant = response_maps(m, UnitKind::Invariant, inv_ids, grid, solve.convex);
    write_maps(dir / "responses_simple.csv", simple);
    write_maps(dir / "responses_invariant.csv", invariant);

    bool ok = true;
    std::string summary = "n_simple,n_invariant,median_simple,median_invariant,ratio,min_ratio,passed\n";
    if (!simple.empty() && !invariant.empty()) {
        const WidthSummary w = width_summary(simple, invariant, min_ratio);
        summary += fmt::format("{},{},{},{},{},{},{}\n", w.n_simple, w.n_invariant, w.median_simple,
                               w.median_invariant, w.ratio, min_ratio, w.passed);
        fmt::print("width ratio {:.3f} (invariant median {:.3f}, simple median {:.3f}) -> {}\n", w.ratio,
                   w.median_invariant, w.median_simple, w.passed ? "PASS" : "FAIL");
        ok = w.passed;
    }
    write_text(dir / "width_summary.csv", summary);

    if (!betas.empty()) {
        if (!m.has_invariant_layer()) throw ConfigError("beta_sweep needs a model with an invariant layer");
        const SequenceSource src = sequence_source(c);
        if (src.sequence.window != m.patch_height) throw ConfigError("window does not match the model patch size");
        TrainOptions opts = train_options(c, c.num("learning_rate"));
        const auto codes = accumulated_codes(m, make_sequences(src), opts.infer_opts);
        const auto points = beta_sweep(m, codes, betas, opts, grid, solve.convex);
        std::string csv = "beta,overlap,n_active\n";
        for (const OverlapPoint& p : points) csv += fmt::format("{},{},{}\n", p.beta, p.overlap, p.n_active);
        write_text(dir / "overlap_trend.csv", csv);
        const bool trend = overlap_nondecreasing(points);
        fmt::print("overlap trend over {} betas: {}\n", points.size(), trend ? "PASS" : "FAIL");
        ok = ok && trend;
    }
    return ok ? kOk : kFailed;
}

// ---- bench -------------------------------------------------------------------

int cmd_bench(const RunConfig& c)
{
    BenchConfig b;
    b.instances = c.integer("bench_instances");
    b.max_rows = c.integer("bench_rows");
    b.max_cols = c.integer("bench_cols");
    b.iterations = c.integer("bench_iters");
    b.lemma_samples = c.integer("lemma_samples");
    b.seed = c.u64("seed");
    b.validate();
    const fs::path dir = out_dir(c);
    bool ok = true;
    const auto report = [&](const std::string& what, int pass, int total) {
        fmt::print("{:<34} {}/{} -> {}\n", what, pass, total, pass == total ? "PASS" : "FAIL");
        ok = ok && pass == total;
    };

    for (RateKind kind : {RateKind::Fista, RateKind::Ista}) {
        const std::string name = kind == RateKind::Fista ? "fista" : "ista";
        const auto rows = bench_rates(b, kind);
        std::string csv = "instance,holds,worst_ratio,worst_k,L\n";
        int pass = 0;
        for (const RateRow& r : rows) {
            csv += fmt::format("{},{},{},{},{}\n", r.instance, r.holds, r.worst_ratio, r.worst_k, r.L);
            pass += r.holds && r.worst_ratio <= 1.0;
        }
        write_text(dir / fmt::format("bench_rate_{}.csv", name), csv);
        report(fmt::format("{} rate bound", name), pass, int(rows.size()));
    }
    for (bool convex : {true, false}) {
        const auto rows = bench_monotone(b, convex);
        std::string csv = "instance,monotone,worst_increase\n";
        int pass = 0;
        for (const MonotoneRow& r : rows) {
            csv += fmt::format("{},{},{}\n", r.instance, r.monotone, r.worst_increase);
            pass += r.monotone;
        }
        write_text(dir / fmt::format("bench_monotone_{}.csv", convex ? "convex" : "nonconvex"), csv);
        report(fmt::format("monotone descent ({})", convex ? "convex" : "nonconvex"), pass, int(rows.size()));
    }
    for (int layers : {1, 2}) {
        const auto rows = bench_descent_lemma(b, layers);
        std::string csv = "sample,holds,slack,L\n";
        int pass = 0;
        for (const LemmaRow& r : rows) {
            csv += fmt::format("{},{},{},{}\n", r.sample, r.holds, r.slack, r.L);
            pass += r.holds;
        }
        write_text(dir / fmt::format("bench_lemma_{}layer.csv", layers), csv);
        report(fmt::format("descent lemma ({} layer)", layers), pass, int(rows.size()));
    }
    {
        const auto rows = bench_oracle(b);
        std::string csv = "instance,energy_solver,energy_oracle,diff\n";
        int pass = 0;
        for (const OracleRow& r : rows) {
            const double d = std::abs(r.energy_solver - r.energy_oracle);
            csv += fmt::format("{},{},{},{}\n", r.instance, r.energy_solver, r.energy_oracle, d);
            pass += d <= 1e-6;
        }
        write_text(dir / "bench_oracle.csv", csv);
        report("coordinate-descent oracle", pass, int(rows.size()));
    }
    return ok ? kOk : kFailed;
}

// ---- inpaint -----------------------------------------------------------------

int cmd_inpaint(const RunConfig& c)
{
    InpaintExperiment e;
    e.toy = toy_config(c);
    e.code_dim = c.integer("toy_code_dim");
    e.inv_dim = c.integer("toy_inv_dim");
    e.alpha = c.num("alpha");
    e.beta = c.num("beta");
    e.n_train = c.integer("toy_train");
    e.n_test = c.integer("inpaint_test");
    e.hidden_ratio = c.num("mask_ratio");
    e.train = train_options(c, c.num("toy_learning_rate"));
    const Options solve = solver_options(c);
    e.unified_momentum = solve.unified.momentum;
    e.seed = c.u64("seed");
    e.validate();
    const fs::path dir = out_dir(c);

    const std::string one_path = c.str("one_layer_model");
    const std::string uni_path = c.str("unified_model");
    InpaintOutcome r;
    if (!one_path.empty() || !uni_path.empty()) {
        if (one_path.empty() || uni_path.empty())
            throw ConfigError("give both one_layer_model and unified_model, or neither");
        const Model one = load_model(one_path);
        const Model uni = load_model(uni_path);
        if (uni.kind != ModelKind::Unified) throw ConfigError("unified_model is not a unified model");
        if (one.W.rows() != uni.W.rows() || one.patch_height != e.toy.size || one.patch_width != e.toy.size)
            throw ConfigError("model patch sizes do not match toy_size");
        Rng test_rng = make_rng(e.seed, 30);
        std::vector<Vec> test;
        for (int i = 0; i < e.n_test; ++i) test.push_back(gen_toy_patch(e.toy, test_rng).patch.as_vector());
        r = compare_inpainting(one, uni, test, e.hidden_ratio, e.seed, solve.convex, solve.unified);
    } else {
        const InpaintRun run = run_inpaint(e);
        save_model(run.one_layer, (dir / "inpaint_one_layer.bin").string());
        save_model(run.unified, (dir / "inpaint_unified.bin").string());
        r = run.outcome;
    }

    std::string csv = "patch,rms_one_layer,rms_unified\n";
    for (std::size_t i = 0; i < r.rms_one_layer.size(); ++i)
        csv += fmt::format("{},{},{}\n", i, r.rms_one_layer[i], r.rms_unified[i]);
    write_text(dir / "inpaint.csv", csv);
    write_text(dir / "inpaint_summary.csv",
               fmt::format("mask_ratio,median_one_layer,median_unified,passed\n{},{},{},{}\n", e.hidden_ratio,
                           r.median_one_layer, r.median_unified, r.passed));
    fmt::print("in-painting median hidden RMS: unified {:.5f}, one-layer {:.5f} -> {}\n", r.median_unified,
               r.median_one_layer, r.passed ? "PASS" : "FAIL");
    return r.passed ? kOk : kFailed;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Sparse invariant representation learning: toy line-world, training, edge responses, "
                 "solver benchmarks and in-painting."};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "help for every subcommand");
    std::string config_path;
    int threads = 1;
    app.add_option("--config", config_path, "key=value configuration file; flags override it");
    app.add_option("--threads", threads, "worker threads [default: 1]")->check(CLI::PositiveNumber);

    std::map<std::string, std::string> flags;
    std::map<std::string, CLI::Option*> handles;
    for (const auto& k : cli::config_keys()) {
        const std::string def = k.fallback.empty() ? "(empty)" : k.fallback;
        handles[k.name] = app.add_option("--" + k.name, flags[k.name],
                                         fmt::format("{} [default: {}] [basis: {}]", k.help, def, k.basis));
    }

    const auto sub = [&](const char* name, const char* help) {
        return app.add_subcommand(name, help)->fallthrough();
    };
    auto* toy = sub("toy", "train on the line-world and score invariant-unit orientation purity");
    auto* train = sub("train", "train a model on translating patch sequences and save it");
    auto* responses = sub("responses", "edge response maps, tuning widths and the beta overlap trend");
    auto* bench = sub("bench", "rate bounds, monotone descent, descent lemma and oracle checks");
    auto* inpaint = sub("inpaint", "masked reconstruction: unified vs one-layer model");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) cfg.load_file(config_path);
        for (const auto& [name, opt] : handles)
            if (opt->count() > 0) cfg.set(name, flags[name]);

        kernels::set_threads(threads);
        omp_set_num_threads(threads);

        int code = kUsage;
        if (toy->parsed()) code = cmd_toy(cfg);
        else if (train->parsed()) code = cmd_train(cfg);
        else if (responses->parsed()) code = cmd_responses(cfg);
        else if (bench->parsed()) code = cmd_bench(cfg);
        else if (inpaint->parsed()) code = cmd_inpaint(cfg);
        write_text(fs::path(cfg.str("out")) / "config.txt", cfg.dump());
        return code;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
    } catch (const spinv::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
    }
    return kUsage;
}
