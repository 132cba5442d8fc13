#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "spinv/experiments.hpp"
#include "spinv/kernels.hpp"
#include "spinv/learning.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace spinv;

namespace {

std::string temp_path(const std::string& name)
{
    return (std::filesystem::temp_directory_path() / ("spinv_learning_" + name)).string();
}

std::vector<Vec> toy_samples(int n, std::uint64_t seed)
{
    const ToyConfig cfg;
    Rng rng = make_rng(seed, 10);
    std::vector<Vec> out;
    for (int i = 0; i < n; ++i) out.push_back(gen_toy_patch(cfg, rng).patch.as_vector());
    return out;
}

std::vector<Vec> random_vectors(int n, Eigen::Index dim, Rng& rng, bool nonneg = false)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Vec> out;
    for (int i = 0; i < n; ++i) {
        Vec v(dim);
        for (Eigen::Index k = 0; k < dim; ++k) v[k] = nonneg ? std::abs(normal(rng)) : normal(rng);
        out.push_back(v);
    }
    return out;
}

TrainOptions quick(int epochs, std::uint64_t seed = 3)
{
    TrainOptions o;
    o.learning_rate = 0.05;
    o.epochs = epochs;
    o.seed = seed;
    return o;
}

double mean_lasso_energy(const Model& m, const std::vector<Vec>& held_out, const SolverOptions& opts)
{
    double total = 0.0;
    for (const Vec& x : held_out) {
        const SparseCodingProblem p{&m.W, x, m.alpha, {}};
        total += eval_sparse_energy(p, solve_lasso(p, opts).code);
    }
    return total / double(held_out.size());
}

}  // namespace

TEST_CASE("one unit trained on one repeated sample aligns with it")
{
    Rng rng = make_rng(50, 0);
    const Vec x = random_vectors(1, 16, rng)[0].normalized() * 2.0;
    const std::vector<Vec> samples(500, x);
    TrainOptions o = quick(1);
    const Model m = train_sparse_coding(samples, 1, 0.1, o);
    const double cosine = m.W.data.col(0).dot(x) / (m.W.data.col(0).norm() * x.norm());
    CHECK(std::abs(cosine) >= 0.99);
}

TEST_CASE("every update keeps W unit-norm and A nonnegative unit-norm")
{
    Rng rng = make_rng(51, 0);
    const auto xs = random_vectors(60, 16, rng);
    Model m = init_model(ModelKind::SplitLayer1, 4, 4, 12, 0, 0.3, 0.3, 1, 5);
    int calls = 0;
    train_sparse_coding(m, xs, quick(2), [&](const Model& cur, std::uint64_t step) {
        ++calls;
        CHECK(step == std::uint64_t(calls));
        CHECK(column_norm_error(cur.W) <= 1e-9);
    });
    CHECK(calls == 120);

    const auto zs = random_vectors(60, 12, rng, true);
    Model inv = init_model(ModelKind::SplitLayer2, 4, 4, 12, 3, 0.5, 0.05, 1, 5);
    train_invariant(inv, zs, quick(2), [&](const Model& cur, std::uint64_t) {
        CHECK(column_norm_error(cur.A) <= 1e-9);
        CHECK(cur.A.data.minCoeff() >= 0.0);
    });
    CHECK(inv.a_steps == 120);

    std::vector<std::vector<Vec>> seqs;
    for (int i = 0; i < 20; ++i) seqs.push_back(random_vectors(2, 16, rng));
    Model uni = init_model(ModelKind::Unified, 4, 4, 12, 3, 0.3, 0.1, 2, 5);
    train_unified(uni, seqs, quick(1), [&](const Model& cur, std::uint64_t) {
        CHECK(column_norm_error(cur.W) <= 1e-9);
        CHECK(column_norm_error(cur.A) <= 1e-9);
        CHECK(cur.A.data.minCoeff() >= 0.0);
    });
}

TEST_CASE("a huge beta pins u to zero and leaves A where it started")
{
    Rng rng = make_rng(52, 0);
    const auto zs = random_vectors(30, 10, rng, true);
    Model m = init_model(ModelKind::SplitLayer2, 2, 5, 10, 4, 0.5, 1e6, 1, 7);
    const Mat a0 = m.A.data;
    train_invariant(m, zs, quick(1));
    CHECK(m.A.data == a0);
    CHECK(m.a_steps == 30);
}

TEST_CASE("unified training with one frame and u pinned to zero follows sparse coding step by step")
{
    Rng rng = make_rng(53, 0);
    const auto xs = random_vectors(40, 16, rng);
    std::vector<std::vector<Vec>> seqs;
    for (const Vec& x : xs) seqs.push_back({x});

    TrainOptions o = quick(1, 11);
    o.infer_opts.momentum = Momentum::None;
    o.infer_opts.tol = 1e-13;
    o.infer_opts.max_iter = 5000;

    std::vector<Mat> sc_path, uni_path;
    Model sc = init_model(ModelKind::SplitLayer1, 4, 4, 8, 0, 0.3, 1e6, 1, 11);
    train_sparse_coding(sc, xs, o, [&](const Model& cur, std::uint64_t) { sc_path.push_back(cur.W.data); });
    Model uni = init_model(ModelKind::Unified, 4, 4, 8, 3, 0.3, 1e6, 1, 11);
    REQUIRE(uni.W.data == init_model(ModelKind::SplitLayer1, 4, 4, 8, 0, 0.3, 1e6, 1, 11).W.data);
    const Mat a0 = uni.A.data;
    train_unified(uni, seqs, o, [&](const Model& cur, std::uint64_t) { uni_path.push_back(cur.W.data); });

    REQUIRE(sc_path.size() == 40);
    REQUIRE(uni_path.size() == 40);
    double worst = 0.0;
    for (std::size_t k = 0; k < sc_path.size(); ++k)
        worst = std::max(worst, (sc_path[k] - uni_path[k]).cwiseAbs().maxCoeff());
    CHECK(worst <= 1e-10);
    CHECK(uni.A.data == a0);
}

TEST_CASE("in-painting: full mask reproduces inference, a dictionary atom is recovered, no mask fails")
{
    Rng rng = make_rng(54, 0);
    Model m = init_model(ModelKind::SplitLayer1, 5, 5, 30, 0, 0.3, 0.3, 1, 13);
    SolverOptions opts;
    opts.tol = 1e-12;
    opts.max_iter = 20000;

    const Vec x = random_vectors(1, 25, rng)[0];
    const std::vector<bool> all(25, true);
    const Vec plain = m.W.data * solve_lasso({&m.W, x, m.alpha, {}}, opts).code;
    CHECK((inpaint(m, x, all, opts) - plain).cwiseAbs().maxCoeff() <= 1e-12);

    m.alpha = 1e-3;
    const Vec atom = m.W.data.col(7);
    Rng mask_rng = make_rng(54, 31);
    const auto mask = random_mask(25, 0.2, mask_rng);
    const Vec rec = inpaint(m, atom, mask, opts);
    CHECK(hidden_rms(atom, rec, mask) <= 0.05);

    CHECK_THROWS_AS(inpaint(m, x, std::vector<bool>(25, false), opts), Error);
    CHECK_THROWS_AS(inpaint(m, x, std::vector<bool>(24, true), opts), DimensionError);

    Model u = init_model(ModelKind::Unified, 5, 5, 30, 4, 0.3, 0.3, 1, 13);
    const UnifiedProblem p{&u.W, &u.A, {x}, u.alpha, u.beta, {}};
    const HierarchicalEnergy h = unified_energy(p);
    const auto full = solve_hierarchical(h, initial_state(h, opts), opts);
    CHECK((inpaint(u, x, all, opts) - u.W.data * full.state.z[0]).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("model files round trip bitwise and reject corruption")
{
    Rng rng = make_rng(55, 0);
    Model m = init_model(ModelKind::Unified, 3, 4, 6, 2, 0.4, 0.2, 3, 17);
    m.w_steps = 12;
    m.a_steps = 12;
    const std::string path = temp_path("m.bin");
    save_model(m, path);
    CHECK(load_model(path) == m);

    std::ifstream in(path, std::ios::binary);
    const std::string bytes((std::istreambuf_iterator<char>(in)), {});
    const auto write = [&](const std::string& b) {
        std::ofstream out(path, std::ios::binary);
        out << b;
    };
    write(bytes.substr(0, bytes.size() - 5));
    CHECK_THROWS_AS(load_model(path), Error);
    write("NOTAMODEL" + bytes.substr(9));
    CHECK_THROWS_AS(load_model(path), Error);
    write(bytes + "x");
    CHECK_THROWS_AS(load_model(path), Error);
    std::string bad_version = bytes;
    bad_version[8] = 9;
    write(bad_version);
    CHECK_THROWS_AS(load_model(path), Error);
    CHECK_THROWS_AS(load_model(temp_path("missing.bin")), Error);

    const std::string csv = temp_path("w.csv");
    write_matrix_csv(csv, m.W.data);
    std::ifstream c(csv);
    std::string line;
    int rows = 0;
    while (std::getline(c, line)) ++rows;
    CHECK(rows == 12);
}

TEST_CASE("training is deterministic and resumable")
{
    const auto xs = toy_samples(80, 2);
    const TrainOptions o = quick(3, 21);
    Model a = init_model(ModelKind::SplitLayer1, 20, 20, 16, 0, 0.5, 0.3, 1, 21);
    Model b = a;
    train_sparse_coding(a, xs, o);
    train_sparse_coding(b, xs, o);
    CHECK(a == b);

    Model c = init_model(ModelKind::SplitLayer1, 20, 20, 16, 0, 0.5, 0.3, 1, 21);
    TrainOptions first = o;
    first.epochs = 1;
    train_sparse_coding(c, xs, first);
    const std::string path = temp_path("resume.bin");
    save_model(c, path);
    Model d = load_model(path);
    train_sparse_coding(d, xs, o);
    CHECK(d == a);
}

TEST_CASE("batched gradients reduce in sample order whatever the thread count")
{
    const auto xs = toy_samples(40, 3);
    TrainOptions o = quick(1, 23);
    o.batch = 4;
    Model a = init_model(ModelKind::SplitLayer1, 20, 20, 12, 0, 0.5, 0.3, 1, 23);
    Model b = a;
    kernels::set_threads(1);
    train_sparse_coding(a, xs, o);
    kernels::set_threads(3);
    train_sparse_coding(b, xs, o);
    kernels::set_threads(1);
    CHECK(a == b);
}

TEST_CASE("held-out toy energy falls between the first and the last epoch")
{
    const ToyExperiment toy;
    const auto train = toy_samples(1000, 4);
    const auto held_out = toy_samples(200, 5);
    const SolverOptions eval = TrainOptions::default_infer_options();
    Model m = init_model(ModelKind::SplitLayer1, 20, 20, toy.code_dim, 0, toy.alpha, toy.beta, 1, 4);
    TrainOptions o = toy.train;
    o.seed = 4;
    std::vector<double> per_epoch;
    for (int e = 1; e <= 6; ++e) {
        o.epochs = e;
        train_sparse_coding(m, train, o);
        per_epoch.push_back(mean_lasso_energy(m, held_out, eval));
    }
    CHECK(per_epoch.back() < per_epoch.front());
}

TEST_CASE("bad training input is rejected")
{
    Model m = init_model(ModelKind::SplitLayer1, 2, 2, 3, 0, 0.5, 0.3, 1, 1);
    const std::vector<Vec> wrong{Vec::Ones(5)};
    CHECK_THROWS_AS(train_sparse_coding(m, wrong, quick(1)), DimensionError);
    CHECK_THROWS_AS(train_sparse_coding(m, std::vector<Vec>{}, quick(1)), Error);
    TrainOptions bad = quick(1);
    bad.learning_rate = 0.0;
    CHECK_THROWS_AS(train_sparse_coding(m, std::vector<Vec>{Vec::Ones(4)}, bad), Error);
    CHECK_THROWS_AS(train_invariant(m, std::vector<Vec>{Vec::Ones(3)}, quick(1)), Error);
    Model inv = init_model(ModelKind::SplitLayer2, 2, 2, 3, 2, 0.5, 0.3, 1, 1);
    CHECK_THROWS_AS(train_invariant(inv, std::vector<Vec>{-Vec::Ones(3)}, quick(1)), Error);
    CHECK_THROWS_AS(init_model(ModelKind::Unified, 2, 2, 3, 0, 0.5, 0.3, 1, 1), Error);
}
