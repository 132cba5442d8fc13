#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "spinv/energy.hpp"

#include <cmath>

using namespace spinv;

namespace {

Dictionary random_dict(Eigen::Index r, Eigen::Index c, Rng& rng, bool nonneg = false)
{
    std::normal_distribution<double> n(0.0, 1.0);
    Dictionary d{Mat(r, c), nonneg};
    for (Eigen::Index i = 0; i < d.data.size(); ++i) {
        const double v = n(rng);
        d.data.data()[i] = nonneg ? std::abs(v) : v;
    }
    normalize_columns(d);
    return d;
}

Vec random_vec(Eigen::Index n, Rng& rng, double scale = 1.0)
{
    std::normal_distribution<double> d(0.0, scale);
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = d(rng);
    return v;
}

Vec random_nonneg(Eigen::Index n, Rng& rng, double scale = 1.0)
{
    return random_vec(n, rng, scale).cwiseAbs();
}

bool rel_close(double a, double b, double tol)
{
    return std::abs(a - b) <= tol * std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

// Scalar loops, written independently of the Eigen expressions in the library.
double loop_sparse(const Mat& W, const Vec& x, const Vec& z, double alpha)
{
    double r2 = 0.0;
    for (Eigen::Index i = 0; i < W.rows(); ++i) {
        double s = x(i);
        for (Eigen::Index j = 0; j < W.cols(); ++j) s -= W(i, j) * z(j);
        r2 += s * s;
    }
    double l1 = 0.0;
    for (Eigen::Index j = 0; j < z.size(); ++j) l1 += std::abs(z(j));
    return 0.5 * r2 + alpha * l1;
}

double loop_invariant(const Mat& A, const Vec& zs, const Vec& u, double alpha, double beta)
{
    double e = 0.0;
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
        double au = 0.0;
        for (Eigen::Index j = 0; j < A.cols(); ++j) au += A(i, j) * u(j);
        e += alpha * zs(i) * std::exp(-au);
    }
    for (Eigen::Index j = 0; j < u.size(); ++j) e += beta * std::abs(u(j));
    return e;
}

double loop_unified(const Mat& W, const Mat& A, const std::vector<Vec>& x, const std::vector<Vec>& z, const Vec& u,
                    double alpha, double beta)
{
    double e = 0.0;
    for (std::size_t t = 0; t < x.size(); ++t) e += loop_sparse(W, x[t], z[t], 0.0);
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
        double au = 0.0;
        for (Eigen::Index j = 0; j < A.cols(); ++j) au += A(i, j) * u(j);
        const double g = 0.5 * (1.0 + std::exp(-au));
        for (std::size_t t = 0; t < z.size(); ++t) e += alpha * std::abs(z[t](i)) * g;
    }
    for (Eigen::Index j = 0; j < u.size(); ++j) e += beta * std::abs(u(j));
    return e;
}

// Three separable convex layers chained through constant partner factors.
struct ThreeLayer {
    std::vector<Dictionary> W;
    std::vector<Vec> x;
    std::vector<double> a;
    HierarchicalEnergy h;
};

ThreeLayer three_layer(Rng& rng)
{
    ThreeLayer t;
    const Eigen::Index dims[] = {5, 4, 3};
    const Eigen::Index rows[] = {6, 5, 4};
    t.W.reserve(3);
    for (int l = 0; l < 3; ++l) {
        t.W.push_back(random_dict(rows[l], dims[l], rng));
        t.x.push_back(random_vec(rows[l], rng));
        t.a.push_back(0.1 + 0.2 * l);
    }
    for (int l = 0; l < 3; ++l) {
        LayerSpec s;
        s.dim = dims[l];
        if (l == 0) {
            s.smooth = {QuadraticReconstruction{&t.W[0], {t.x[0]}, {}}};
        } else {
            s.smooth = {ConstantFactor{1}, QuadraticReconstruction{&t.W[std::size_t(l)], {t.x[std::size_t(l)]}, {}}};
        }
        if (l < 2)
            s.nonsmooth = {WeightedL1{t.a[std::size_t(l)], 1}, ConstantFactor{1}};
        else
            s.nonsmooth = {WeightedL1{t.a[2], 1}};
        t.h.layers.push_back(s);
    }
    return t;
}

// Central differences of the smooth part seen by `layer`.
Vec fd_grad(const HierarchicalEnergy& h, std::vector<Vec> z, std::size_t layer, double step = 1e-5)
{
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

bool grad_matches(const Vec& analytic, const Vec& fd)
{
    const double scale = std::max(1.0, analytic.cwiseAbs().maxCoeff());
    return (analytic - fd).cwiseAbs().maxCoeff() <= 1e-6 * scale;
}

}  // namespace

TEST_CASE("sparse energy: small cases and scalar-loop oracle")
{
    Dictionary I{Mat::Identity(2, 2), false};
    SparseCodingProblem p{&I, Vec::Unit(2, 0), 0.5, {}};
    CHECK(eval_sparse_energy(p, Vec::Zero(2)) == doctest::Approx(0.5));
    CHECK(eval_sparse_energy(p, Vec::Unit(2, 0)) == doctest::Approx(0.5));

    Rng rng = make_rng(11, 0);
    for (int trial = 0; trial < 20; ++trial) {
        Dictionary W = random_dict(6, 10, rng);
        SparseCodingProblem q{&W, random_vec(6, rng), 0.3, {}};
        const Vec z = random_vec(10, rng);
        CHECK(rel_close(eval_sparse_energy(q, z), loop_sparse(W.data, q.x, z, 0.3), 1e-12));
    }
}

TEST_CASE("sparse energy rejects mismatched dimensions")
{
    Dictionary I{Mat::Identity(3, 3), false};
    SparseCodingProblem p{&I, Vec::Zero(3), 0.5, {}};
    CHECK_THROWS_AS(eval_sparse_energy(p, Vec::Zero(4)), DimensionError);
    try {
        eval_sparse_energy(p, Vec::Zero(4));
    } catch (const DimensionError& e) {
        CHECK(e.expected() == 3);
        CHECK(e.got() == 4);
    }
    SparseCodingProblem bad{&I, Vec::Zero(2), 0.5, {}};
    CHECK_THROWS_AS(validate(bad), DimensionError);
    SparseCodingProblem neg{&I, Vec::Zero(3), -1.0, {}};
    CHECK_THROWS_AS(validate(neg), Error);
}

TEST_CASE("accumulate_codes sums magnitudes")
{
    const std::vector<Vec> zero{Vec::Zero(3)};
    CHECK(accumulate_codes(zero) == Vec::Zero(3));
    const std::vector<Vec> two{(Vec(2) << 1, -2).finished(), (Vec(2) << 0, 1).finished()};
    CHECK(accumulate_codes(two) == (Vec(2) << 1, 3).finished());
    CHECK_THROWS_AS(accumulate_codes(std::vector<Vec>{}), Error);

    Rng rng = make_rng(12, 0);
    std::vector<Vec> three{random_vec(7, rng), random_vec(7, rng), random_vec(7, rng)};
    const Vec acc = accumulate_codes(three);
    for (Eigen::Index i = 0; i < 7; ++i) {
        double s = 0.0;
        for (const Vec& c : three) s += std::abs(c(i));
        CHECK(acc(i) == doctest::Approx(s).epsilon(1e-15));
        CHECK(acc(i) >= 0.0);
    }
    auto flipped = three;
    flipped[1] = -flipped[1];
    flipped[2](3) = -flipped[2](3);
    CHECK(accumulate_codes(flipped) == acc);
}

TEST_CASE("invariant energy: limiting cases and oracle")
{
    Rng rng = make_rng(13, 0);
    Dictionary A = random_dict(8, 3, rng, true);
    const Vec u = random_nonneg(3, rng);
    InvariantProblem zero{&A, Vec::Zero(8), 0.5, 0.3};
    CHECK(eval_invariant_energy(zero, u) == doctest::Approx(0.3 * u.sum()).epsilon(1e-14));
    InvariantProblem p{&A, random_nonneg(8, rng), 0.5, 0.3};
    CHECK(eval_invariant_energy(p, Vec::Zero(3)) == doctest::Approx(0.5 * p.z_star.sum()).epsilon(1e-14));
    for (int trial = 0; trial < 20; ++trial) {
        InvariantProblem q{&A, random_nonneg(8, rng), 0.7, 0.2};
        const Vec v = random_nonneg(3, rng);
        CHECK(rel_close(eval_invariant_energy(q, v), loop_invariant(A.data, q.z_star, v, 0.7, 0.2), 1e-12));
    }
    InvariantProblem negative{&A, -Vec::Ones(8), 0.5, 0.3};
    CHECK_THROWS_AS(validate(negative), Error);
    CHECK_THROWS_AS(eval_invariant_energy(p, Vec::Zero(4)), DimensionError);
}

TEST_CASE("unified energy: reductions and oracle")
{
    Rng rng = make_rng(14, 0);
    Dictionary W = random_dict(6, 5, rng);
    Dictionary A = random_dict(5, 2, rng, true);
    UnifiedProblem p{&W, &A, {random_vec(6, rng), random_vec(6, rng), random_vec(6, rng)}, 0.5, 0.3, {}};
    const std::vector<Vec> z0(3, Vec::Zero(5));
    double half = 0.0;
    for (const Vec& x : p.frames) half += 0.5 * x.squaredNorm();
    CHECK(eval_unified_energy(p, z0, Vec::Zero(2)) == doctest::Approx(half).epsilon(1e-14));

    const std::vector<Vec> z{random_vec(5, rng), random_vec(5, rng), random_vec(5, rng)};
    double split = 0.0;
    for (std::size_t t = 0; t < 3; ++t) {
        SparseCodingProblem s{&W, p.frames[t], 0.5, {}};
        split += eval_sparse_energy(s, z[t]);
    }
    CHECK(rel_close(eval_unified_energy(p, z, Vec::Zero(2)), split, 1e-12));

    for (int trial = 0; trial < 20; ++trial) {
        const std::vector<Vec> zz{random_vec(5, rng), random_vec(5, rng), random_vec(5, rng)};
        const Vec u = random_nonneg(2, rng);
        CHECK(rel_close(eval_unified_energy(p, zz, u), loop_unified(W.data, A.data, p.frames, zz, u, 0.5, 0.3), 1e-12));
    }
    UnifiedProblem empty{&W, &A, {}, 0.5, 0.3, {}};
    CHECK_THROWS_AS(validate(empty), Error);
}

TEST_CASE("hierarchical form reproduces the concrete energies")
{
    Rng rng = make_rng(15, 0);
    Dictionary W = random_dict(6, 5, rng);
    Dictionary A = random_dict(5, 2, rng, true);
    SparseCodingProblem s{&W, random_vec(6, rng), 0.4, {}};
    const HierarchicalEnergy lasso = lasso_energy(s);
    for (int trial = 0; trial < 20; ++trial) {
        const std::vector<Vec> z{random_vec(5, rng)};
        CHECK(rel_close(eval_hierarchical_energy(lasso, z), eval_sparse_energy(s, z[0]), 1e-12));
    }

    UnifiedProblem p{&W, &A, {random_vec(6, rng), random_vec(6, rng), random_vec(6, rng)}, 0.5, 0.3, {}};
    const HierarchicalEnergy uni = unified_energy(p);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Vec> frames{random_vec(5, rng), random_vec(5, rng), random_vec(5, rng)};
        Vec stacked(15);
        for (int t = 0; t < 3; ++t) stacked.segment(5 * t, 5) = frames[std::size_t(t)];
        const Vec u = random_nonneg(2, rng);
        const std::vector<Vec> z{stacked, u};
        CHECK(rel_close(eval_hierarchical_energy(uni, z), eval_unified_energy(p, frames, u), 1e-12));
    }

    ThreeLayer t = three_layer(rng);
    validate(t.h);
    for (int trial = 0; trial < 20; ++trial) {
        const std::vector<Vec> z{random_vec(5, rng), random_vec(4, rng), random_vec(3, rng)};
        double want = 0.0;
        for (int l = 0; l < 3; ++l)
            want += loop_sparse(t.W[std::size_t(l)].data, t.x[std::size_t(l)], z[std::size_t(l)], t.a[std::size_t(l)]);
        CHECK(rel_close(eval_hierarchical_energy(t.h, z), want, 1e-12));
    }
}

TEST_CASE("hierarchical validation and layer bounds")
{
    CHECK_THROWS_AS(validate(HierarchicalEnergy{}), Error);
    Rng rng = make_rng(16, 0);
    Dictionary W = random_dict(4, 3, rng);
    SparseCodingProblem s{&W, random_vec(4, rng), 0.4, {}};
    const HierarchicalEnergy h = lasso_energy(s);
    const std::vector<Vec> z{Vec::Zero(3)};
    CHECK_THROWS_AS(grad_smooth_layer(h, z, 1), Error);
    const std::vector<Vec> wrong{Vec::Zero(4)};
    CHECK_THROWS_AS(eval_hierarchical_energy(h, wrong), DimensionError);

    HierarchicalEnergy mismatched = h;
    mismatched.layers[0].nonsmooth = {WeightedL1{0.4, 2}};
    CHECK_THROWS_AS(validate(mismatched), Error);
}

TEST_CASE("gradients: closed forms at the origin")
{
    Rng rng = make_rng(17, 0);
    Dictionary W = random_dict(6, 4, rng);
    SparseCodingProblem s{&W, random_vec(6, rng), 0.5, {}};
    const std::vector<Vec> z{Vec::Zero(4)};
    const Vec g = grad_smooth_layer(lasso_energy(s), z, 0);
    CHECK((g - (-(W.data.transpose() * s.x))).cwiseAbs().maxCoeff() < 1e-14);

    Dictionary A = random_dict(6, 3, rng, true);
    InvariantProblem p{&A, random_nonneg(6, rng), 0.7, 0.3};
    const std::vector<Vec> u{Vec::Zero(3)};
    const Vec gu = grad_smooth_layer(invariant_energy(p), u, 0);
    CHECK((gu - (-0.7 * (A.data.transpose() * p.z_star))).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("gradients match central differences")
{
    Rng rng = make_rng(18, 0);
    int lasso_ok = 0, inv_ok = 0, uni_z_ok = 0, uni_u_ok = 0, three_ok = 0;
    constexpr int n = 20;
    for (int trial = 0; trial < n; ++trial) {
        Dictionary W = random_dict(8, 6, rng);
        Dictionary A = random_dict(6, 3, rng, true);
        SparseCodingProblem s{&W, random_vec(8, rng), 0.5, {}};
        const HierarchicalEnergy hl = lasso_energy(s);
        const std::vector<Vec> zl{random_vec(6, rng)};
        lasso_ok += grad_matches(grad_smooth_layer(hl, zl, 0), fd_grad(hl, zl, 0));

        InvariantProblem ip{&A, random_nonneg(6, rng), 0.5, 0.3};
        const HierarchicalEnergy hi = invariant_energy(ip);
        const std::vector<Vec> ui{random_nonneg(3, rng)};
        inv_ok += grad_matches(grad_smooth_layer(hi, ui, 0), fd_grad(hi, ui, 0));

        UnifiedProblem up{&W, &A, {random_vec(8, rng), random_vec(8, rng)}, 0.5, 0.3, {}};
        const HierarchicalEnergy hu = unified_energy(up);
        const std::vector<Vec> zu{random_vec(12, rng), random_nonneg(3, rng)};
        uni_z_ok += grad_matches(grad_smooth_layer(hu, zu, 0), fd_grad(hu, zu, 0));
        uni_u_ok += grad_matches(grad_smooth_layer(hu, zu, 1), fd_grad(hu, zu, 1));

        ThreeLayer t = three_layer(rng);
        const std::vector<Vec> z3{random_vec(5, rng), random_vec(4, rng), random_vec(3, rng)};
        bool all = true;
        for (std::size_t l = 0; l < 3; ++l) all = all && grad_matches(grad_smooth_layer(t.h, z3, l), fd_grad(t.h, z3, l));
        three_ok += all;
    }
    CHECK(lasso_ok == n);
    CHECK(inv_ok == n);
    CHECK(uni_z_ok == n);
    CHECK(uni_u_ok == n);
    CHECK(three_ok == n);
}

TEST_CASE("energies with norm penalties are nonnegative")
{
    Rng rng = make_rng(19, 0);
    for (int trial = 0; trial < 50; ++trial) {
        Dictionary W = random_dict(5, 7, rng);
        Dictionary A = random_dict(7, 2, rng, true);
        SparseCodingProblem s{&W, random_vec(5, rng), 0.5, {}};
        CHECK(eval_sparse_energy(s, random_vec(7, rng)) >= 0.0);
        InvariantProblem p{&A, random_nonneg(7, rng), 0.5, 0.3};
        CHECK(eval_invariant_energy(p, random_nonneg(2, rng)) >= 0.0);
    }
}

TEST_CASE("dictionary checks")
{
    Rng rng = make_rng(20, 0);
    Dictionary d = random_dict(5, 4, rng);
    CHECK(column_norm_error(d) < 1e-12);
    CHECK_NOTHROW(check_dictionary(d));
    d.data(0, 0) += 0.1;
    CHECK_THROWS_AS(check_dictionary(d), Error);
    Dictionary a = random_dict(5, 4, rng, true);
    a.data(1, 1) = -1e-3;
    normalize_columns(a);
    CHECK_THROWS_AS(check_dictionary(a), Error);
}
