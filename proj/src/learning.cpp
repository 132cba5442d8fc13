#include "spinv/learning.hpp"

#include "spinv/kernels.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace spinv {

const char* to_string(ModelKind kind)
{
    switch (kind) {
    case ModelKind::SplitLayer1: return "split-layer1";
    case ModelKind::SplitLayer2: return "split-layer2";
    case ModelKind::Unified: return "unified";
    }
    return "unknown";
}

bool Model::operator==(const Model& o) const
{
    return kind == o.kind && W.data == o.W.data && W.nonneg == o.W.nonneg && A.data == o.A.data &&
           A.nonneg == o.A.nonneg && alpha == o.alpha && beta == o.beta && frames == o.frames &&
           patch_height == o.patch_height && patch_width == o.patch_width && w_steps == o.w_steps &&
           a_steps == o.a_steps;
}

SolverOptions TrainOptions::default_infer_options()
{
    SolverOptions o;
    o.tol = 1e-6;
    o.max_iter = 200;
    o.record_trace = false;
    return o;
}

double TrainOptions::rate(std::uint64_t step) const
{
    return decay > 0.0 ? learning_rate / (1.0 + double(step) / decay) : learning_rate;
}

void TrainOptions::validate() const
{
    if (!(learning_rate > 0.0)) throw Error("learning rate must be positive");
    if (decay < 0.0) throw Error("learning-rate decay must be nonnegative");
    if (epochs < 0) throw Error("epochs must be nonnegative");
    if (batch < 1) throw Error("batch must be positive");
    infer_opts.validate();
}

Dictionary init_dictionary(Eigen::Index rows, Eigen::Index cols, Rng& rng)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    Dictionary d{Mat(rows, cols), false};
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) d.data(i, j) = normal(rng);
    normalize_columns(d);
    return d;
}

Dictionary init_nonneg_dictionary(Eigen::Index rows, Eigen::Index cols, Rng& rng)
{
    Dictionary d = init_dictionary(rows, cols, rng);
    d.data = d.data.cwiseAbs();
    d.nonneg = true;
    return d;
}

Model init_model(ModelKind kind, int patch_height, int patch_width, Eigen::Index code_dim, Eigen::Index inv_dim,
                 double alpha, double beta, int frames, std::uint64_t seed)
{
    if (patch_height < 1 || patch_width < 1 || code_dim < 1) throw Error("model needs positive dimensions");
    Model m;
    m.kind = kind;
    m.alpha = alpha;
    m.beta = beta;
    m.frames = frames;
    m.patch_height = patch_height;
    m.patch_width = patch_width;
    Rng w_rng = make_rng(seed, 0);
    m.W = init_dictionary(Eigen::Index(patch_height) * patch_width, code_dim, w_rng);
    if (kind != ModelKind::SplitLayer1) {
        if (inv_dim < 1) throw Error("invariant layer needs at least one unit");
        Rng a_rng = make_rng(seed, 1);
        m.A = init_nonneg_dictionary(code_dim, inv_dim, a_rng);
    }
    return m;
}

namespace {

// Position of update `step` within a deterministic per-epoch shuffle.
class SampleSchedule {
public:
    SampleSchedule(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {}

    std::size_t index(std::uint64_t step)
    {
        const std::uint64_t epoch = step / n_;
        if (epoch != epoch_ || order_.empty()) {
            order_.resize(n_);
            std::iota(order_.begin(), order_.end(), std::size_t(0));
            Rng rng = make_rng(seed_, 1000 + epoch);
            std::shuffle(order_.begin(), order_.end(), rng);
            epoch_ = epoch;
        }
        return order_[step % n_];
    }

private:
    std::size_t n_;
    std::uint64_t seed_;
    std::uint64_t epoch_ = 0;
    std::vector<std::size_t> order_;
};

void check_after_update([[maybe_unused]] const Model& m)
{
#ifndef NDEBUG
    check_dictionary(m.W);
    if (m.has_invariant_layer()) check_dictionary(m.A);
#endif
}

[[noreturn]] void rethrow_with_index(const std::exception& e, std::size_t index)
{
    throw Error(fmt::format("inference failed on sample {}: {}", index, e.what()));
}

// Runs `per_sample(index) -> gradient` over batches of the schedule, applying
// `apply(sum of gradients / batch, rate)` after each batch. Per-sample work is
// spread over threads; the reduction runs in sample order.
template <class Grad, class PerSample, class Apply>
void sgd_loop(std::uint64_t& steps, std::size_t n_samples, const TrainOptions& opts, PerSample&& per_sample,
              Apply&& apply, Model& model, const StepObserver& observer)
{
    opts.validate();
    if (n_samples == 0) throw Error("training needs at least one sample");
    const std::uint64_t target = std::uint64_t(opts.epochs) * n_samples;
    SampleSchedule schedule(n_samples, opts.seed);
    while (steps < target) {
        const int batch = int(std::min<std::uint64_t>(std::uint64_t(opts.batch), target - steps));
        std::vector<std::size_t> idx(static_cast<std::size_t>(batch));
        for (int b = 0; b < batch; ++b) idx[b] = schedule.index(steps + std::uint64_t(b));
        std::vector<Grad> grads(static_cast<std::size_t>(batch));
        if (batch == 1) {
            grads[0] = per_sample(idx[0]);
        } else {
            std::vector<std::string> failures(static_cast<std::size_t>(batch));
#pragma omp parallel for schedule(static) if (kernels::threads() > 1)
            for (int b = 0; b < batch; ++b) {
                try {
                    grads[b] = per_sample(idx[b]);
                } catch (const std::exception& e) {
                    failures[b] = e.what();
                }
            }
            for (int b = 0; b < batch; ++b)
                if (!failures[b].empty()) throw Error(failures[b]);
        }
        Grad total = std::move(grads[0]);
        for (int b = 1; b < batch; ++b) total += grads[b];
        apply(total, opts.rate(steps) / batch);
        steps += std::uint64_t(batch);
        check_after_update(model);
        if (observer) observer(model, steps);
    }
}

struct PairGrad {
    Mat w;
    Mat a;
    PairGrad& operator+=(const PairGrad& o)
    {
        w += o.w;
        a += o.a;
        return *this;
    }
};

}  // namespace

void train_sparse_coding(Model& model, std::span<const Vec> samples, const TrainOptions& opts,
                         const StepObserver& observer)
{
    for (const Vec& x : samples) require_dim("training sample", model.W.rows(), x.size());
    const auto per_sample = [&](std::size_t i) -> Mat {
        try {
            const SparseCodingProblem p{&model.W, samples[i], model.alpha, {}};
            const Vec z = solve_lasso(p, opts.infer_opts).code;
            const Vec r = model.W.data * z - samples[i];
            return r * z.transpose();
        } catch (const Error& e) {
            rethrow_with_index(e, i);
        }
    };
    const auto apply = [&](const Mat& grad, double rate) {
        model.W.data -= rate * grad;
        normalize_columns(model.W);
    };
    sgd_loop<Mat>(model.w_steps, samples.size(), opts, per_sample, apply, model, observer);
}

void train_invariant(Model& model, std::span<const Vec> code_samples, const TrainOptions& opts,
                     const StepObserver& observer)
{
    if (!model.has_invariant_layer()) throw Error("model has no invariant layer");
    for (const Vec& z : code_samples) {
        require_dim("accumulated code sample", model.A.rows(), z.size());
        if (z.size() > 0 && z.minCoeff() < 0.0) throw Error("accumulated codes must be nonnegative");
    }
    const auto per_sample = [&](std::size_t i) -> Mat {
        try {
            const InvariantProblem p{&model.A, code_samples[i], model.alpha, model.beta};
            const Vec u = solve_invariant(p, opts.infer_opts).code;
            const Vec au = model.A.data * u;
            const Vec s = code_samples[i].array() * (-au.array()).exp();
            return -model.alpha * s * u.transpose();
        } catch (const Error& e) {
            rethrow_with_index(e, i);
        }
    };
    const auto apply = [&](const Mat& grad, double rate) {
        model.A.data -= rate * grad;
        model.A.data = model.A.data.cwiseMax(0.0);
        normalize_columns(model.A);
    };
    sgd_loop<Mat>(model.a_steps, code_samples.size(), opts, per_sample, apply, model, observer);
}

void train_unified(Model& model, std::span<const std::vector<Vec>> sequences, const TrainOptions& opts,
                   const StepObserver& observer)
{
    if (!model.has_invariant_layer()) throw Error("model has no invariant layer");
    if (sequences.empty()) throw Error("training needs at least one sequence");
    const std::size_t n_t = sequences[0].size();
    for (const auto& seq : sequences) {
        require_dim("sequence length", long(n_t), long(seq.size()));
        for (const Vec& x : seq) require_dim("sequence frame", model.W.rows(), x.size());
    }
    const auto per_sample = [&](std::size_t i) -> PairGrad {
        try {
            const UnifiedProblem p{&model.W, &model.A, sequences[i], model.alpha, model.beta, {}};
            const HierarchicalEnergy h = unified_energy(p);
            const auto result = solve_hierarchical(h, initial_state(h, opts.infer_opts), opts.infer_opts);
            const Vec& stacked = result.state.z[0];
            const Vec& u = result.state.z[1];
            const Eigen::Index m = model.W.cols();
            PairGrad g{Mat::Zero(model.W.rows(), m), Mat()};
            Vec pooled = Vec::Zero(m);
            for (std::size_t t = 0; t < n_t; ++t) {
                const Vec z = stacked.segment(Eigen::Index(t) * m, m);
                const Vec r = model.W.data * z - sequences[i][t];
                g.w += r * z.transpose();
                pooled.array() += z.array().abs();
            }
            const Vec au = model.A.data * u;
            const Vec s = pooled.array() * (-au.array()).exp();
            g.a = -0.5 * model.alpha * s * u.transpose();
            return g;
        } catch (const Error& e) {
            rethrow_with_index(e, i);
        }
    };
    const auto apply = [&](const PairGrad& grad, double rate) {
        model.W.data -= rate * grad.w;
        normalize_columns(model.W);
        model.A.data -= rate * grad.a;
        model.A.data = model.A.data.cwiseMax(0.0);
        normalize_columns(model.A);
    };
    sgd_loop<PairGrad>(model.w_steps, sequences.size(), opts, per_sample, apply, model, observer);
    model.a_steps = model.w_steps;
}

namespace {

int square_side(Eigen::Index n)
{
    const int side = int(std::lround(std::sqrt(double(n))));
    return Eigen::Index(side) * side == n ? side : 0;
}

}  // namespace

Model train_sparse_coding(std::span<const Vec> samples, Eigen::Index code_dim, double alpha, const TrainOptions& opts)
{
    if (samples.empty()) throw Error("training needs at least one sample");
    const Eigen::Index dim = samples[0].size();
    const int side = square_side(dim);
    Model m = init_model(ModelKind::SplitLayer1, side ? side : int(dim), side ? side : 1, code_dim, 0, alpha, 0.3, 1,
                         opts.seed);
    train_sparse_coding(m, samples, opts);
    return m;
}

Model train_invariant(std::span<const Vec> code_samples, Eigen::Index inv_dim, double alpha, double beta,
                      const TrainOptions& opts)
{
    if (code_samples.empty()) throw Error("training needs at least one sample");
    Model m;
    m.kind = ModelKind::SplitLayer2;
    m.alpha = alpha;
    m.beta = beta;
    Rng a_rng = make_rng(opts.seed, 1);
    m.A = init_nonneg_dictionary(code_samples[0].size(), inv_dim, a_rng);
    train_invariant(m, code_samples, opts);
    return m;
}

Model train_unified(std::span<const std::vector<Vec>> sequences, Eigen::Index code_dim, Eigen::Index inv_dim,
                    double alpha, double beta, const TrainOptions& opts)
{
    if (sequences.empty() || sequences[0].empty()) throw Error("training needs at least one sequence");
    const Eigen::Index dim = sequences[0][0].size();
    const int side = square_side(dim);
    Model m = init_model(ModelKind::Unified, side ? side : int(dim), side ? side : 1, code_dim, inv_dim, alpha, beta,
                         int(sequences[0].size()), opts.seed);
    train_unified(m, sequences, opts);
    return m;
}

// ---- inference ------------------------------------------------------------------

Codes infer_split(const Model& model, std::span<const Vec> frames, const SolverOptions& opts)
{
    Codes out;
    for (const Vec& x : frames) out.z.push_back(solve_lasso({&model.W, x, model.alpha, {}}, opts).code);
    if (model.has_invariant_layer()) {
        const InvariantProblem p{&model.A, accumulate_codes(out.z), model.alpha, model.beta};
        out.u = solve_invariant(p, opts).code;
    }
    return out;
}

Codes infer(const Model& model, std::span<const Vec> frames, const SolverOptions& opts)
{
    if (model.kind != ModelKind::Unified) return infer_split(model, frames, opts);
    const UnifiedProblem p{&model.W, &model.A, std::vector<Vec>(frames.begin(), frames.end()), model.alpha,
                           model.beta, {}};
    const HierarchicalEnergy h = unified_energy(p);
    const auto result = solve_hierarchical(h, initial_state(h, opts), opts);
    Codes out;
    const Eigen::Index m = model.W.cols();
    for (std::size_t t = 0; t < frames.size(); ++t) out.z.push_back(result.state.z[0].segment(Eigen::Index(t) * m, m));
    out.u = result.state.z[1];
    return out;
}

Vec inpaint(const Model& model, const Vec& x, const std::vector<bool>& mask, const SolverOptions& opts)
{
    require_dim("in-painting mask", x.size(), long(mask.size()));
    Vec weights(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) weights[i] = mask[std::size_t(i)] ? 1.0 : 0.0;
    if (weights.sum() == 0.0) throw Error("in-painting needs at least one observed pixel");
    if (model.kind == ModelKind::Unified) {
        const UnifiedProblem p{&model.W, &model.A, {x}, model.alpha, model.beta, weights};
        const HierarchicalEnergy h = unified_energy(p);
        const auto result = solve_hierarchical(h, initial_state(h, opts), opts);
        return model.W.data * result.state.z[0];
    }
    const Vec z = solve_lasso({&model.W, x, model.alpha, weights}, opts).code;
    return model.W.data * z;
}

// ---- serialization ----------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'P', 'I', 'N', 'V', 'M', 'D', 'L'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "model files are little-endian");

template <class T>
void put(std::ofstream& out, T v)
{
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_matrix(std::ofstream& out, const Mat& m)
{
    put<std::uint64_t>(out, std::uint64_t(m.rows()));
    put<std::uint64_t>(out, std::uint64_t(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()), std::streamsize(m.size() * sizeof(double)));
}

class Reader {
public:
    Reader(const std::string& path) : path_(path), in_(path, std::ios::binary)
    {
        if (!in_) throw Error(fmt::format("cannot open model file {}", path));
    }

    template <class T>
    T get(const char* field)
    {
        T v{};
        in_.read(reinterpret_cast<char*>(&v), sizeof(T));
        if (in_.gcount() != sizeof(T)) fail(fmt::format("truncated while reading {}", field));
        return v;
    }

    Mat get_matrix(const char* name)
    {
        const auto rows = get<std::uint64_t>(name);
        const auto cols = get<std::uint64_t>(name);
        if (rows > (1u << 24) || cols > (1u << 24) || rows * cols > (1ull << 28))
            fail(fmt::format("implausible {} shape {}x{}", name, rows, cols));
        Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        in_.read(reinterpret_cast<char*>(m.data()), std::streamsize(m.size() * sizeof(double)));
        if (in_.gcount() != std::streamsize(m.size() * sizeof(double)))
            fail(fmt::format("truncated {} data", name));
        return m;
    }

    void expect_end()
    {
        if (in_.peek() != std::ifstream::traits_type::eof()) fail("trailing bytes after model data");
    }

    [[noreturn]] void fail(const std::string& why) const
    {
        throw Error(fmt::format("corrupt model file {}: {}", path_, why));
    }

    std::ifstream& stream() { return in_; }

private:
    std::string path_;
    std::ifstream in_;
};

}  // namespace

void save_model(const Model& model, const std::string& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(fmt::format("cannot write model file {}", path));
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, std::uint32_t(model.kind));
    put<std::uint32_t>(out, std::uint32_t(model.frames));
    put<std::uint32_t>(out, std::uint32_t(model.patch_height));
    put<std::uint32_t>(out, std::uint32_t(model.patch_width));
    put<std::uint64_t>(out, model.w_steps);
    put<std::uint64_t>(out, model.a_steps);
    put<double>(out, model.alpha);
    put<double>(out, model.beta);
    put_matrix(out, model.W.data);
    put_matrix(out, model.A.data);
    if (!out) throw Error(fmt::format("failed writing model file {}", path));
}

Model load_model(const std::string& path)
{
    Reader in(path);
    char magic[8];
    in.stream().read(magic, sizeof(magic));
    if (in.stream().gcount() != sizeof(magic) || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
        in.fail("bad magic header");
    if (const auto v = in.get<std::uint32_t>("version"); v != kVersion) in.fail(fmt::format("unsupported version {}", v));
    Model m;
    const auto kind = in.get<std::uint32_t>("kind");
    if (kind < 1 || kind > 3) in.fail(fmt::format("unknown model kind {}", kind));
    m.kind = ModelKind(kind);
    m.frames = int(in.get<std::uint32_t>("frames"));
    m.patch_height = int(in.get<std::uint32_t>("patch height"));
    m.patch_width = int(in.get<std::uint32_t>("patch width"));
    m.w_steps = in.get<std::uint64_t>("W steps");
    m.a_steps = in.get<std::uint64_t>("A steps");
    m.alpha = in.get<double>("alpha");
    m.beta = in.get<double>("beta");
    m.W = Dictionary{in.get_matrix("W"), false};
    m.A = Dictionary{in.get_matrix("A"), true};
    in.expect_end();
    if (m.W.rows() != Eigen::Index(m.patch_height) * m.patch_width)
        in.fail(fmt::format("W has {} rows for a {}x{} patch", m.W.rows(), m.patch_height, m.patch_width));
    if (m.kind != ModelKind::SplitLayer1 && m.A.rows() != m.W.cols())
        in.fail(fmt::format("A has {} rows but W has {} columns", m.A.rows(), m.W.cols()));
    if (m.has_invariant_layer() && m.A.data.minCoeff() < 0.0) in.fail("A has negative entries");
    return m;
}

void write_matrix_csv(const std::string& path, const Mat& m)
{
    std::ofstream out(path);
    if (!out) throw Error(fmt::format("cannot write {}", path));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << fmt::format("{:.17g}", m(i, j));
        out << '\n';
    }
}

}  // namespace spinv
