#include "spinv/experiments.hpp"

#include "spinv/kernels.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace spinv {

const char* to_string(TrainMode mode)
{
    return mode == TrainMode::Split ? "split" : "unified";
}

namespace {

std::vector<Vec> toy_samples(const ToyConfig& cfg, int n, Rng& rng)
{
    std::vector<Vec> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(gen_toy_patch(cfg, rng).patch.as_vector());
    return out;
}

std::vector<std::vector<Vec>> single_frames(std::span<const Vec> xs)
{
    std::vector<std::vector<Vec>> out;
    out.reserve(xs.size());
    for (const Vec& x : xs) out.push_back({x});
    return out;
}

}  // namespace

// ---- split two-stage training -----------------------------------------------------

std::vector<Vec> accumulated_codes(const Model& model, std::span<const std::vector<Vec>> sequences,
                                   const SolverOptions& opts)
{
    std::vector<Vec> out(sequences.size());
    const long n = long(sequences.size());
#pragma omp parallel for schedule(dynamic) if (kernels::threads() > 1)
    for (long s = 0; s < n; ++s) {
        Vec acc = Vec::Zero(model.W.cols());
        for (const Vec& x : sequences[std::size_t(s)])
            acc += solve_lasso({&model.W, x, model.alpha, {}}, opts).code.cwiseAbs();
        out[std::size_t(s)] = std::move(acc);
    }
    return out;
}

Model train_split(std::span<const std::vector<Vec>> sequences, int patch_height, int patch_width,
                  Eigen::Index code_dim, Eigen::Index inv_dim, double alpha, double beta, const TrainOptions& opts)
{
    if (sequences.empty() || sequences[0].empty()) throw Error("training needs at least one sequence");
    Model m = init_model(ModelKind::SplitLayer2, patch_height, patch_width, code_dim, inv_dim, alpha, beta,
                         int(sequences[0].size()), opts.seed);
    std::vector<Vec> frames;
    for (const auto& seq : sequences) frames.insert(frames.end(), seq.begin(), seq.end());
    train_sparse_coding(m, frames, opts);
    const std::vector<Vec> codes = accumulated_codes(m, sequences, opts.infer_opts);
    train_invariant(m, codes, opts);
    return m;
}

// ---- toy --------------------------------------------------------------------------

TrainOptions ToyExperiment::defaults()
{
    TrainOptions t;
    t.learning_rate = 0.05;
    return t;
}

void ToyExperiment::validate() const
{
    toy.validate();
    train.validate();
    if (code_dim < 1 || inv_dim < 1) throw Error("toy experiment needs positive code and invariant dims");
    if (n_train < 1 || n_eval < 1) throw Error("toy experiment needs training and evaluation patches");
    if (!(alpha > 0.0) || !(beta > 0.0)) throw Error("alpha and beta must be positive");
}

ToyOutcome run_toy(const ToyExperiment& e)
{
    e.validate();
    Rng data_rng = make_rng(e.seed, 10);
    const std::vector<Vec> xs = toy_samples(e.toy, e.n_train, data_rng);
    const auto seqs = single_frames(xs);
    TrainOptions opts = e.train;
    opts.seed = e.seed;

    ToyOutcome out;
    SolverOptions eval_opts = opts.infer_opts;
    if (e.mode == TrainMode::Split) {
        out.model = train_split(seqs, e.toy.size, e.toy.size, e.code_dim, e.inv_dim, e.alpha, e.beta, opts);
    } else {
        out.model = init_model(ModelKind::Unified, e.toy.size, e.toy.size, e.code_dim, e.inv_dim, e.alpha, e.beta, 1,
                               e.seed);
        opts.infer_opts.momentum = e.unified_momentum;
        eval_opts.momentum = e.unified_momentum;
        train_unified(out.model, seqs, opts);
    }

    Rng eval_rng = make_rng(e.seed, 11);
    out.purity = orientation_purity(out.model, e.toy, e.n_eval, eval_rng, eval_opts);
    out.matches = match_templates(out.model.W.data, toy_templates(e.toy));
    std::set<int> orientations;
    out.min_purity = out.purity.n_active > 0 ? 1.0 : 0.0;
    for (const UnitPurity& u : out.purity.active()) {
        orientations.insert(u.orientation);
        out.min_purity = std::min(out.min_purity, u.purity);
    }
    out.distinct_orientations = int(orientations.size());
    out.passed = out.purity.n_active == e.toy.n_orientations && out.min_purity >= 0.9 &&
                 out.distinct_orientations == e.toy.n_orientations;
    return out;
}

// ---- sequences ------------------------------------------------------------------------

void SequenceSource::validate() const
{
    if (images.empty() && (synthetic_size < 1 || synthetic_count < 1))
        throw Error("synthetic source needs a positive image size and count");
    if (n_sequences < 1) throw Error("need at least one sequence");
    if (sequence.frames < 1 || sequence.window < 1) throw Error("sequences need positive window and frame count");
}

std::vector<std::vector<Vec>> make_sequences(const SequenceSource& src)
{
    src.validate();
    std::vector<Image> images;
    if (src.images.empty()) {
        Rng rng = make_rng(src.seed, 20);
        for (int i = 0; i < src.synthetic_count; ++i)
            images.push_back(preprocess(synthetic_image(src.synthetic_size, rng), src.preprocess));
    } else {
        for (const std::string& path : src.images) images.push_back(preprocess(read_pgm(path), src.preprocess));
    }
    Rng rng = make_rng(src.seed, 21);
    std::vector<std::vector<Vec>> out;
    out.reserve(std::size_t(src.n_sequences));
    for (int s = 0; s < src.n_sequences; ++s) {
        const PatchSequence seq = extract_sequences(images[std::size_t(s) % images.size()], src.sequence, rng);
        std::vector<Vec> frames;
        for (const Patch& p : seq.frames) frames.push_back(p.as_vector());
        out.push_back(std::move(frames));
    }
    return out;
}

// ---- responses ----------------------------------------------------------------------------

namespace {

std::vector<double> widths(std::span<const ResponseMap> maps)
{
    std::vector<double> out;
    for (const ResponseMap& m : maps)
        if (const auto w = tuning_width(m)) out.push_back(*w);
    return out;
}

}  // namespace

WidthSummary width_summary(std::span<const ResponseMap> simple, std::span<const ResponseMap> invariant,
                           double min_ratio)
{
    const std::vector<double> ws = widths(simple);
    const std::vector<double> wi = widths(invariant);
    WidthSummary s;
    s.n_simple = int(ws.size());
    s.n_invariant = int(wi.size());
    if (ws.empty() || wi.empty()) return s;
    s.median_simple = median(ws);
    s.median_invariant = median(wi);
    s.ratio = s.median_simple > 0.0 ? s.median_invariant / s.median_simple : 0.0;
    s.passed = s.ratio >= min_ratio;
    return s;
}

std::vector<OverlapPoint> beta_sweep(const Model& base, std::span<const Vec> code_samples,
                                     std::span<const double> betas, const TrainOptions& opts,
                                     const ResponseGrid& grid, const SolverOptions& infer_opts)
{
    if (!base.has_invariant_layer()) throw Error("beta sweep needs a model with an invariant layer");
    std::vector<OverlapPoint> out;
    for (double beta : betas) {
        if (!(beta > 0.0)) throw Error(fmt::format("beta must be positive, got {}", beta));
        Model m = base;
        m.kind = ModelKind::SplitLayer2;
        m.beta = beta;
        m.a_steps = 0;
        Rng a_rng = make_rng(opts.seed, 1);
        m.A = init_nonneg_dictionary(base.A.rows(), base.A.cols(), a_rng);
        train_invariant(m, code_samples, opts);
        std::vector<Eigen::Index> units(std::size_t(m.A.cols()));
        std::iota(units.begin(), units.end(), Eigen::Index(0));
        const auto maps = response_maps(m, UnitKind::Invariant, units, grid, infer_opts);
        OverlapPoint p{beta, mean_region_overlap(maps), 0};
        for (const ResponseMap& r : maps) p.n_active += tuning_width(r).has_value();
        out.push_back(p);
    }
    return out;
}

bool overlap_nondecreasing(std::span<const OverlapPoint> points, double slack)
{
    std::vector<OverlapPoint> sorted(points.begin(), points.end());
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const OverlapPoint& a, const OverlapPoint& b) { return a.beta > b.beta; });
    for (std::size_t i = 1; i < sorted.size(); ++i)
        if (sorted[i].overlap < sorted[i - 1].overlap - slack) return false;
    return true;
}

// ---- in-painting ----------------------------------------------------------------------------

std::vector<bool> random_mask(Eigen::Index n, double hidden_ratio, Rng& rng)
{
    if (!(hidden_ratio >= 0.0 && hidden_ratio <= 1.0))
        throw Error(fmt::format("mask ratio must lie in [0, 1], got {}", hidden_ratio));
    std::vector<std::size_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::shuffle(order.begin(), order.end(), rng);
    const auto hidden = std::size_t(std::lround(hidden_ratio * double(n)));
    std::vector<bool> mask(std::size_t(n), true);
    for (std::size_t i = 0; i < hidden; ++i) mask[order[i]] = false;
    return mask;
}

double hidden_rms(const Vec& truth, const Vec& recon, const std::vector<bool>& mask)
{
    require_dim("reconstruction", truth.size(), recon.size());
    require_dim("mask", truth.size(), long(mask.size()));
    const bool any_hidden = std::find(mask.begin(), mask.end(), false) != mask.end();
    double sum = 0.0;
    int count = 0;
    for (Eigen::Index i = 0; i < truth.size(); ++i) {
        if (any_hidden && mask[std::size_t(i)]) continue;
        const double d = truth[i] - recon[i];
        sum += d * d;
        ++count;
    }
    return std::sqrt(sum / count);
}

InpaintOutcome compare_inpainting(const Model& one_layer, const Model& unified, std::span<const Vec> patches,
                                  double hidden_ratio, std::uint64_t seed, const SolverOptions& one_layer_opts,
                                  const SolverOptions& unified_opts)
{
    if (patches.empty()) throw Error("in-painting comparison needs test patches");
    Rng rng = make_rng(seed, 31);
    std::vector<std::vector<bool>> masks;
    for (const Vec& x : patches) {
        masks.push_back(random_mask(x.size(), hidden_ratio, rng));
        if (std::find(masks.back().begin(), masks.back().end(), true) == masks.back().end())
            throw Error("in-painting needs at least one observed pixel");
    }
    InpaintOutcome out;
    out.rms_one_layer.resize(patches.size());
    out.rms_unified.resize(patches.size());
    const long n = long(patches.size());
#pragma omp parallel for schedule(dynamic) if (kernels::threads() > 1)
    for (long i = 0; i < n; ++i) {
        const auto k = std::size_t(i);
        out.rms_one_layer[k] =
            hidden_rms(patches[k], inpaint(one_layer, patches[k], masks[k], one_layer_opts), masks[k]);
        out.rms_unified[k] = hidden_rms(patches[k], inpaint(unified, patches[k], masks[k], unified_opts), masks[k]);
    }
    out.median_one_layer = median(out.rms_one_layer);
    out.median_unified = median(out.rms_unified);
    out.passed = out.median_unified <= out.median_one_layer;
    return out;
}

void InpaintExperiment::validate() const
{
    toy.validate();
    train.validate();
    if (code_dim < 1 || inv_dim < 1) throw Error("in-painting needs positive code and invariant dims");
    if (n_train < 1 || n_test < 1) throw Error("in-painting needs training and test patches");
    if (!(hidden_ratio >= 0.0 && hidden_ratio < 1.0))
        throw Error(fmt::format("mask ratio must lie in [0, 1), got {}", hidden_ratio));
}

InpaintRun run_inpaint(const InpaintExperiment& e)
{
    e.validate();
    Rng data_rng = make_rng(e.seed, 10);
    const std::vector<Vec> xs = toy_samples(e.toy, e.n_train, data_rng);
    TrainOptions opts = e.train;
    opts.seed = e.seed;

    InpaintRun run;
    run.one_layer = init_model(ModelKind::SplitLayer1, e.toy.size, e.toy.size, e.code_dim, 0, e.alpha, e.beta, 1,
                               e.seed);
    train_sparse_coding(run.one_layer, xs, opts);

    TrainOptions uopts = opts;
    uopts.infer_opts.momentum = e.unified_momentum;
    run.unified = init_model(ModelKind::Unified, e.toy.size, e.toy.size, e.code_dim, e.inv_dim, e.alpha, e.beta, 1,
                             e.seed);
    train_unified(run.unified, single_frames(xs), uopts);

    Rng test_rng = make_rng(e.seed, 30);
    const std::vector<Vec> test = toy_samples(e.toy, e.n_test, test_rng);
    run.outcome = compare_inpainting(run.one_layer, run.unified, test, e.hidden_ratio, e.seed, opts.infer_opts,
                                     uopts.infer_opts);
    return run;
}

// ---- benchmark families ------------------------------------------------------------------------

void BenchConfig::validate() const
{
    if (instances < 1 || iterations < 1 || lemma_samples < 1) throw Error("bench counts must be positive");
    if (max_rows < 4 || max_cols < 4) throw Error("bench problem limits must be at least 4");
}

namespace {

Mat gaussian(Eigen::Index r, Eigen::Index c, Rng& rng)
{
    std::normal_distribution<double> n(0.0, 1.0);
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

std::shared_ptr<Dictionary> random_dictionary(Eigen::Index r, Eigen::Index c, bool nonneg, Rng& rng)
{
    auto d = std::make_shared<Dictionary>(Dictionary{gaussian(r, c, rng), nonneg});
    if (nonneg) d->data = d->data.cwiseAbs();
    normalize_columns(*d);
    return d;
}

Vec sparse_signal(const Dictionary& W, Rng& rng)
{
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> n(0.0, 1.0);
    Vec z = Vec::Zero(W.cols());
    for (Eigen::Index i = 0; i < z.size(); ++i)
        if (unit(rng) < 0.2) z[i] = 2.0 * n(rng);
    Vec x = W.data * z;
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] += 0.1 * n(rng);
    return x;
}

int uniform_int(Rng& rng, int lo, int hi)
{
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

double uniform(Rng& rng, double lo, double hi)
{
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace

LassoInstance random_lasso(Rng& rng, int max_rows, int max_cols)
{
    const int rows = uniform_int(rng, 4, max_rows);
    const int cols = uniform_int(rng, 4, max_cols);
    LassoInstance inst;
    inst.W = random_dictionary(rows, cols, false, rng);
    inst.problem.W = inst.W.get();
    inst.problem.x = sparse_signal(*inst.W, rng);
    inst.problem.alpha = uniform(rng, 0.05, 0.5);
    return inst;
}

BenchInstance random_convex_two_layer(Rng& rng)
{
    BenchInstance b;
    auto W1 = random_dictionary(uniform_int(rng, 4, 16), uniform_int(rng, 4, 24), false, rng);
    auto W2 = random_dictionary(uniform_int(rng, 4, 16), uniform_int(rng, 4, 24), false, rng);
    const Vec x1 = sparse_signal(*W1, rng);
    const Vec x2 = sparse_signal(*W2, rng);
    const double a1 = uniform(rng, 0.05, 0.5);
    const double a2 = uniform(rng, 0.05, 0.5);

    LayerSpec l1;
    l1.dim = W1->cols();
    l1.smooth = {QuadraticReconstruction{W1.get(), {x1}, {}}};
    l1.nonsmooth = {WeightedL1{a1, 1}, ConstantFactor{1}};
    LayerSpec l2;
    l2.dim = W2->cols();
    l2.smooth = {ConstantFactor{1}, QuadraticReconstruction{W2.get(), {x2}, {}}};
    l2.nonsmooth = {WeightedL1{a2, 1}};
    b.energy.layers = {l1, l2};
    b.dictionaries = {W1, W2};
    validate(b.energy);
    return b;
}

BenchInstance random_unified(Rng& rng)
{
    BenchInstance b;
    const int rows = uniform_int(rng, 8, 16);
    const int code = uniform_int(rng, 8, 24);
    const int inv = uniform_int(rng, 2, 8);
    auto W = random_dictionary(rows, code, false, rng);
    auto A = random_dictionary(code, inv, true, rng);
    UnifiedProblem p;
    p.W = W.get();
    p.A = A.get();
    const int frames = uniform_int(rng, 1, 3);
    for (int t = 0; t < frames; ++t) p.frames.push_back(sparse_signal(*W, rng));
    p.alpha = uniform(rng, 0.1, 0.6);
    p.beta = uniform(rng, 0.05, 0.5);
    b.energy = unified_energy(p);
    b.dictionaries = {W, A};
    return b;
}

std::vector<Vec> random_point(const HierarchicalEnergy& h, Rng& rng, double scale)
{
    std::normal_distribution<double> n(0.0, scale);
    std::vector<Vec> z;
    for (const LayerSpec& l : h.layers) {
        Vec v(l.dim);
        for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = n(rng);
        if (l.sign == SignConstraint::NonNegative) v = v.cwiseAbs();
        z.push_back(std::move(v));
    }
    return z;
}

Vec coordinate_descent_lasso(const Mat& W, const Vec& x, double alpha, int max_sweeps, double tol)
{
    require_dim("lasso input", W.rows(), x.size());
    const Eigen::Index n = W.cols();
    Vec z = Vec::Zero(n);
    Vec r = x;
    Vec norms(n);
    for (Eigen::Index j = 0; j < n; ++j) norms[j] = W.col(j).squaredNorm();
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double change = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (norms[j] == 0.0) continue;
            const double rho = W.col(j).dot(r) + norms[j] * z[j];
            const double mag = std::max(std::abs(rho) - alpha, 0.0) / norms[j];
            const double next = rho < 0 ? -mag : mag;
            const double d = next - z[j];
            if (d != 0.0) {
                r -= d * W.col(j);
                z[j] = next;
                change = std::max(change, std::abs(d));
            }
        }
        if (change <= tol) break;
    }
    return z;
}

namespace {

struct Reference {
    Vec z;
    double energy = 0.0;
};

Reference lasso_reference(const SparseCodingProblem& p)
{
    SolverOptions tight;
    tight.tol = 1e-12;
    tight.max_iter = 100000;
    tight.record_trace = false;
    Reference best{solve_lasso(p, tight).code, 0.0};
    best.energy = eval_sparse_energy(p, best.z);
    const Vec cd = coordinate_descent_lasso(p.W->data, p.x, p.alpha);
    if (const double e = eval_sparse_energy(p, cd); e < best.energy) best = {cd, e};
    return best;
}

}  // namespace

std::vector<RateRow> bench_rates(const BenchConfig& cfg, RateKind kind)
{
    cfg.validate();
    std::vector<RateRow> rows(std::size_t(cfg.instances));
#pragma omp parallel for schedule(dynamic) if (kernels::threads() > 1)
    for (int i = 0; i < cfg.instances; ++i) {
        Rng rng = make_rng(cfg.seed, 1000 + std::uint64_t(i));
        const LassoInstance inst = random_lasso(rng, cfg.max_rows, cfg.max_cols);
        SolverOptions opts;
        opts.max_iter = cfg.iterations;
        opts.tol = 0.0;
        opts.momentum = kind == RateKind::Fista ? Momentum::Fista : Momentum::None;
        const CodeResult run = solve_lasso(inst.problem, opts);
        const Reference ref = lasso_reference(inst.problem);
        const double trace_min = *std::min_element(run.trace.energies.begin(), run.trace.energies.end());
        const double e_star = std::min(ref.energy, trace_min);
        const double L = run.trace.final_L.front();
        const RateCheck c = verify_rate(run.trace, e_star, L, ref.z.norm(), kind);
        rows[std::size_t(i)] = {i, kind, c.holds, c.worst_ratio, c.worst_k, L};
    }
    return rows;
}

std::vector<MonotoneRow> bench_monotone(const BenchConfig& cfg, bool convex, double slack)
{
    cfg.validate();
    std::vector<MonotoneRow> rows(std::size_t(cfg.instances));
#pragma omp parallel for schedule(dynamic) if (kernels::threads() > 1)
    for (int i = 0; i < cfg.instances; ++i) {
        Rng rng = make_rng(cfg.seed, (convex ? 2000 : 3000) + std::uint64_t(i));
        const BenchInstance inst = convex ? random_convex_two_layer(rng) : random_unified(rng);
        SolverOptions opts;
        opts.momentum = Momentum::None;
        opts.max_iter = cfg.iterations;
        opts.tol = 0.0;
        const CodeState z0 = initial_state(inst.energy, opts);
        double prev = eval_hierarchical_energy(inst.energy, z0.z);
        const HierarchicalResult res = solve_hierarchical(inst.energy, z0, opts);
        MonotoneRow row{i, convex, true, -std::numeric_limits<double>::infinity()};
        for (double e : res.trace.energies) {
            row.worst_increase = std::max(row.worst_increase, e - prev);
            prev = e;
        }
        row.monotone = row.worst_increase <= slack;
        rows[std::size_t(i)] = row;
    }
    return rows;
}

std::vector<LemmaRow> bench_descent_lemma(const BenchConfig& cfg, int layers)
{
    cfg.validate();
    if (layers != 1 && layers != 2) throw Error("descent-lemma family must have 1 or 2 layers");
    std::vector<LemmaRow> rows(std::size_t(cfg.lemma_samples));
    constexpr int per_instance = 10;
#pragma omp parallel for schedule(dynamic) if (kernels::threads() > 1)
    for (int block = 0; block < (cfg.lemma_samples + per_instance - 1) / per_instance; ++block) {
        Rng rng = make_rng(cfg.seed, std::uint64_t(layers == 1 ? 4000 : 5000) + std::uint64_t(block));
        BenchInstance inst;
        if (layers == 1) {
            LassoInstance l = random_lasso(rng, cfg.max_rows, cfg.max_cols);
            inst.energy = lasso_energy(l.problem);
            inst.dictionaries = {l.W};
        } else {
            inst = random_convex_two_layer(rng);
        }
        for (int s = block * per_instance; s < std::min(cfg.lemma_samples, (block + 1) * per_instance); ++s) {
            const auto z = random_point(inst.energy, rng);
            const auto z_hat = random_point(inst.energy, rng);
            const DescentCheck c = check_descent_lemma(inst.energy, z, z_hat, 1.0);
            rows[std::size_t(s)] = {s, layers, c.holds, c.slack, c.L};
        }
    }
    return rows;
}

std::vector<OracleRow> bench_oracle(const BenchConfig& cfg)
{
    cfg.validate();
    std::vector<OracleRow> rows(std::size_t(cfg.instances));
#pragma omp parallel for schedule(dynamic) if (kernels::threads() > 1)
    for (int i = 0; i < cfg.instances; ++i) {
        Rng rng = make_rng(cfg.seed, 6000 + std::uint64_t(i));
        const LassoInstance inst = random_lasso(rng, cfg.max_rows, cfg.max_cols);
        // Narrow aspect ratios are badly conditioned; the default budget stops short there.
        SolverOptions opts;
        opts.record_trace = false;
        opts.tol = 1e-13;
        opts.max_iter = 50000;
        const Vec z = solve_lasso(inst.problem, opts).code;
        const Vec cd = coordinate_descent_lasso(inst.W->data, inst.problem.x, inst.problem.alpha);
        rows[std::size_t(i)] = {i, eval_sparse_energy(inst.problem, z), eval_sparse_energy(inst.problem, cd)};
    }
    return rows;
}

}  // namespace spinv
