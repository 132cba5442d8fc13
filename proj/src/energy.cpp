#include "spinv/energy.hpp"

#include "spinv/kernels.hpp"

#include <fmt/format.h>

#include <cmath>

namespace spinv {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::span<const double> as_span(const Vec& v, Eigen::Index offset, Eigen::Index n)
{
    return {v.data() + offset, std::size_t(n)};
}

std::span<double> as_span(Vec& v, Eigen::Index offset, Eigen::Index n)
{
    return {v.data() + offset, std::size_t(n)};
}

void require_dict(const Dictionary* d, const char* what)
{
    if (d == nullptr) throw Error(fmt::format("{}: missing dictionary", what));
}

void require_positive(double v, const char* what)
{
    if (!(v > 0.0)) throw Error(fmt::format("{} must be positive, got {}", what, v));
}

void require_mask(const Vec& mask, Eigen::Index pixels)
{
    if (mask.size() != 0) require_dim("mask", pixels, mask.size());
}

double masked_sq(const Vec& r, const Vec& mask)
{
    if (mask.size() == 0) return r.squaredNorm();
    return (r.array() * r.array() * mask.array()).sum();
}

}  // namespace

void normalize_columns(Dictionary& d)
{
    for (Eigen::Index j = 0; j < d.cols(); ++j) {
        const double n = d.data.col(j).norm();
        if (n > 0.0) d.data.col(j) /= n;
    }
}

double column_norm_error(const Dictionary& d)
{
    double worst = 0.0;
    for (Eigen::Index j = 0; j < d.cols(); ++j) worst = std::max(worst, std::abs(d.data.col(j).norm() - 1.0));
    return worst;
}

void check_dictionary(const Dictionary& d, double tol)
{
    if (const double e = column_norm_error(d); e > tol)
        throw Error(fmt::format("dictionary column norm off by {}", e));
    if (d.nonneg && d.data.size() > 0 && d.data.minCoeff() < 0.0)
        throw Error("nonnegative dictionary has a negative entry");
}

void validate(const SparseCodingProblem& p)
{
    require_dict(p.W, "sparse coding problem");
    require_positive(p.alpha, "alpha");
    require_dim("sparse coding input", p.W->rows(), p.x.size());
    require_mask(p.mask, p.W->rows());
}

void validate(const InvariantProblem& p)
{
    require_dict(p.A, "invariant problem");
    require_positive(p.alpha, "alpha");
    require_positive(p.beta, "beta");
    require_dim("accumulated code", p.A->rows(), p.z_star.size());
    if (p.z_star.size() > 0 && p.z_star.minCoeff() < 0.0) throw Error("accumulated code must be nonnegative");
}

void validate(const UnifiedProblem& p)
{
    require_dict(p.W, "unified problem");
    require_dict(p.A, "unified problem");
    require_positive(p.alpha, "alpha");
    require_positive(p.beta, "beta");
    if (p.frames.empty()) throw Error("unified problem needs at least one frame");
    for (const Vec& x : p.frames) require_dim("unified frame", p.W->rows(), x.size());
    require_dim("invariant dictionary rows", p.W->cols(), p.A->rows());
    require_mask(p.mask, p.W->rows());
}

double eval_sparse_energy(const SparseCodingProblem& p, const Vec& z)
{
    validate(p);
    require_dim("sparse code", p.W->cols(), z.size());
    const Vec r = p.x - p.W->data * z;
    return 0.5 * masked_sq(r, p.mask) + p.alpha * z.lpNorm<1>();
}

double eval_invariant_energy(const InvariantProblem& p, const Vec& u)
{
    validate(p);
    require_dim("invariant code", p.A->cols(), u.size());
    const Vec au = p.A->data * u;
    return p.alpha * (p.z_star.array() * (-au.array()).exp()).sum() + p.beta * u.lpNorm<1>();
}

double eval_unified_energy(const UnifiedProblem& p, std::span<const Vec> z, const Vec& u)
{
    validate(p);
    require_dim("unified code count", long(p.frames.size()), long(z.size()));
    require_dim("invariant code", p.A->cols(), u.size());
    const Vec au = p.A->data * u;
    const Vec g = 0.5 * (1.0 + (-au.array()).exp());
    double e = 0.0;
    for (std::size_t t = 0; t < z.size(); ++t) {
        require_dim("unified code", p.W->cols(), z[t].size());
        const Vec r = p.frames[t] - p.W->data * z[t];
        e += 0.5 * masked_sq(r, p.mask);
        e += p.alpha * (z[t].array().abs() * g.array()).sum();
    }
    return e + p.beta * u.lpNorm<1>();
}

Vec accumulate_codes(std::span<const Vec> codes)
{
    if (codes.empty()) throw Error("accumulate_codes needs at least one code");
    Vec acc = Vec::Zero(codes[0].size());
    for (const Vec& c : codes) {
        require_dim("accumulated code", acc.size(), c.size());
        acc.array() += c.array().abs();
    }
    return acc;
}

// ---- factors ----------------------------------------------------------------

Eigen::Index width(const SmoothFactor& f)
{
    return std::visit(overloaded{
                          [](const ConstantFactor& c) { return c.width; },
                          [](const QuadraticReconstruction&) { return Eigen::Index(1); },
                          [](const ExpModulation&) { return Eigen::Index(1); },
                          [](const LogisticModulation& l) { return l.A->rows(); },
                      },
                      f);
}

Eigen::Index width(const NonsmoothFactor& f)
{
    return std::visit(overloaded{
                          [](const ConstantFactor& c) { return c.width; },
                          [](const WeightedL1& w) { return w.groups; },
                      },
                      f);
}

namespace {

Eigen::Index factor_dim(const SmoothFactor& f)
{
    return std::visit(overloaded{
                          [](const ConstantFactor&) { return Eigen::Index(-1); },
                          [](const QuadraticReconstruction& q) { return Eigen::Index(q.frames.size()) * q.W->cols(); },
                          [](const ExpModulation& e) { return e.A->cols(); },
                          [](const LogisticModulation& l) { return l.A->cols(); },
                      },
                      f);
}

void validate_factor(const SmoothFactor& f)
{
    std::visit(overloaded{
                   [](const ConstantFactor& c) {
                       if (c.width < 1) throw Error("constant factor width must be >= 1");
                   },
                   [](const QuadraticReconstruction& q) {
                       require_dict(q.W, "quadratic factor");
                       if (q.frames.empty()) throw Error("quadratic factor needs a frame");
                       for (const Vec& x : q.frames) require_dim("quadratic factor frame", q.W->rows(), x.size());
                       require_mask(q.mask, q.W->rows());
                   },
                   [](const ExpModulation& e) {
                       require_dict(e.A, "exp modulation");
                       require_dim("exp modulation weights", e.A->rows(), e.weights.size());
                   },
                   [](const LogisticModulation& l) { require_dict(l.A, "logistic modulation"); },
               },
               f);
}

}  // namespace

void validate(const HierarchicalEnergy& h)
{
    if (h.layers.empty()) throw Error("hierarchical energy needs at least one layer");
    for (std::size_t a = 0; a < h.size(); ++a) {
        const LayerSpec& layer = h.layers[a];
        if (layer.dim < 1) throw Error(fmt::format("layer {} has no units", a));
        for (const SmoothFactor& f : layer.smooth) {
            validate_factor(f);
            if (const auto d = factor_dim(f); d >= 0) require_dim("smooth factor layer dim", layer.dim, d);
        }
        for (const NonsmoothFactor& g : layer.nonsmooth) {
            if (const auto* w = std::get_if<WeightedL1>(&g)) {
                if (w->groups < 1 || layer.dim % w->groups != 0)
                    throw Error(fmt::format("layer {}: {} groups do not divide dim {}", a, w->groups, layer.dim));
                if (w->weight < 0.0) throw Error("L1 weight must be nonnegative");
            }
        }
        if (a + 1 < h.size()) {
            const LayerSpec& next = h.layers[a + 1];
            require_dim("factor pairs between layers", long(layer.nonsmooth.size()), long(next.smooth.size()));
            for (std::size_t b = 0; b < layer.nonsmooth.size(); ++b)
                require_dim("paired factor width", width(layer.nonsmooth[b]), width(next.smooth[b]));
        }
    }
}

HierarchicalEnergy lasso_energy(const SparseCodingProblem& p)
{
    validate(p);
    LayerSpec layer{p.W->cols(), SignConstraint::Free, {QuadraticReconstruction{p.W, {p.x}, p.mask}},
                    {WeightedL1{p.alpha, 1}}};
    return HierarchicalEnergy{{std::move(layer)}};
}

HierarchicalEnergy invariant_energy(const InvariantProblem& p)
{
    validate(p);
    LayerSpec layer{p.A->cols(), SignConstraint::NonNegative, {ExpModulation{p.A, p.alpha, p.z_star}},
                    {WeightedL1{p.beta, 1}}};
    return HierarchicalEnergy{{std::move(layer)}};
}

HierarchicalEnergy unified_energy(const UnifiedProblem& p)
{
    validate(p);
    const Eigen::Index m = p.W->cols();
    LayerSpec codes{Eigen::Index(p.frames.size()) * m, SignConstraint::Free,
                    {QuadraticReconstruction{p.W, p.frames, p.mask}}, {WeightedL1{1.0, m}}};
    LayerSpec invariant{p.A->cols(), SignConstraint::NonNegative, {LogisticModulation{p.A, p.alpha}},
                        {WeightedL1{p.beta, 1}}};
    return HierarchicalEnergy{{std::move(codes), std::move(invariant)}};
}

namespace factor {

Vec image(const SmoothFactor& f, const Vec& z)
{
    return std::visit(overloaded{
                          [](const ConstantFactor&) { return Vec(); },
                          [&](const QuadraticReconstruction& q) {
                              const Eigen::Index rows = q.W->rows();
                              const Eigen::Index cols = q.W->cols();
                              Vec img(rows * Eigen::Index(q.frames.size()));
                              for (Eigen::Index t = 0; t < Eigen::Index(q.frames.size()); ++t)
                                  kernels::gemv(q.W->data, as_span(z, t * cols, cols), as_span(img, t * rows, rows));
                              return img;
                          },
                          [&](const ExpModulation& e) { return kernels::apply(e.A->data, z); },
                          [&](const LogisticModulation& l) { return kernels::apply(l.A->data, z); },
                      },
                      f);
}

Vec values(const SmoothFactor& f, const Vec& img)
{
    return std::visit(overloaded{
                          [](const ConstantFactor& c) { return Vec(Vec::Ones(c.width)); },
                          [&](const QuadraticReconstruction& q) {
                              const Eigen::Index rows = q.W->rows();
                              double s = 0.0;
                              for (Eigen::Index t = 0; t < Eigen::Index(q.frames.size()); ++t) {
                                  const Vec r = q.frames[t] - img.segment(t * rows, rows);
                                  s += masked_sq(r, q.mask);
                              }
                              return Vec(Vec::Constant(1, 0.5 * s));
                          },
                          [&](const ExpModulation& e) {
                              return Vec(Vec::Constant(1, e.alpha * (e.weights.array() * (-img.array()).exp()).sum()));
                          },
                          [&](const LogisticModulation& l) {
                              return Vec(0.5 * l.alpha * (1.0 + (-img.array()).exp()));
                          },
                      },
                      f);
}

Vec weighted_grad(const SmoothFactor& f, const Vec& img, const Vec& c, Eigen::Index dim)
{
    return std::visit(overloaded{
                          [&](const ConstantFactor&) { return Vec(Vec::Zero(dim)); },
                          [&](const QuadraticReconstruction& q) {
                              const Eigen::Index rows = q.W->rows();
                              const Eigen::Index cols = q.W->cols();
                              Vec grad(dim);
                              for (Eigen::Index t = 0; t < Eigen::Index(q.frames.size()); ++t) {
                                  Vec r = img.segment(t * rows, rows) - q.frames[t];
                                  if (q.mask.size() != 0) r.array() *= q.mask.array();
                                  kernels::gemv_t(q.W->data, as_span(r, 0, rows), as_span(grad, t * cols, cols));
                              }
                              return Vec(c[0] * grad);
                          },
                          [&](const ExpModulation& e) {
                              const Vec s = e.weights.array() * (-img.array()).exp();
                              return Vec(-c[0] * e.alpha * kernels::apply_t(e.A->data, s));
                          },
                          [&](const LogisticModulation& l) {
                              const Vec s = c.array() * (-img.array()).exp();
                              return Vec(-0.5 * l.alpha * kernels::apply_t(l.A->data, s));
                          },
                      },
                      f);
}

Vec values(const NonsmoothFactor& g, const Vec& z)
{
    return std::visit(overloaded{
                          [](const ConstantFactor& c) { return Vec(Vec::Ones(c.width)); },
                          [&](const WeightedL1& w) {
                              Vec out = Vec::Zero(w.groups);
                              for (Eigen::Index i = 0; i < z.size(); ++i) out[i % w.groups] += std::abs(z[i]);
                              return Vec(w.weight * out);
                          },
                      },
                      g);
}

}  // namespace factor

namespace {

void require_point(const HierarchicalEnergy& h, std::span<const Vec> z)
{
    require_dim("layer count", long(h.size()), long(z.size()));
    for (std::size_t a = 0; a < h.size(); ++a) require_dim("layer code", h.layers[a].dim, z[a].size());
}

// Components of g_{a-1}(z_{a-1}) paired with smooth factor b of layer a.
Vec lower_weights(const HierarchicalEnergy& h, std::span<const Vec> z, std::size_t a, std::size_t b)
{
    if (a == 0) return Vec::Ones(width(h.layers[0].smooth[b]));
    return factor::values(h.layers[a - 1].nonsmooth[b], z[a - 1]);
}

// Components of e_{a+1}(z_{a+1}) paired with nonsmooth factor b of layer a.
Vec upper_values(const HierarchicalEnergy& h, std::span<const Vec> z, std::size_t a, std::size_t b)
{
    if (a + 1 == h.size()) return Vec::Ones(width(h.layers[a].nonsmooth[b]));
    const SmoothFactor& e = h.layers[a + 1].smooth[b];
    return factor::values(e, factor::image(e, z[a + 1]));
}

void require_layer(const HierarchicalEnergy& h, std::size_t layer)
{
    if (layer >= h.size()) throw Error(fmt::format("layer index {} out of range for {} layers", layer, h.size()));
}

}  // namespace

double smooth_layer_value(const HierarchicalEnergy& h, std::span<const Vec> z, std::size_t layer)
{
    require_layer(h, layer);
    require_point(h, z);
    double s = 0.0;
    const LayerSpec& spec = h.layers[layer];
    for (std::size_t b = 0; b < spec.smooth.size(); ++b) {
        const Vec e = factor::values(spec.smooth[b], factor::image(spec.smooth[b], z[layer]));
        s += lower_weights(h, z, layer, b).dot(e);
    }
    return s;
}

double eval_hierarchical_energy(const HierarchicalEnergy& h, std::span<const Vec> z)
{
    validate(h);
    require_point(h, z);
    double e = 0.0;
    for (std::size_t a = 0; a < h.size(); ++a) e += smooth_layer_value(h, z, a);
    const std::size_t top = h.size() - 1;
    for (const NonsmoothFactor& g : h.layers[top].nonsmooth) e += factor::values(g, z[top]).sum();
    return e;
}

Vec grad_smooth_layer(const HierarchicalEnergy& h, std::span<const Vec> z, std::size_t layer)
{
    require_layer(h, layer);
    require_point(h, z);
    const LayerSpec& spec = h.layers[layer];
    Vec grad = Vec::Zero(spec.dim);
    for (std::size_t b = 0; b < spec.smooth.size(); ++b) {
        const SmoothFactor& f = spec.smooth[b];
        grad += factor::weighted_grad(f, factor::image(f, z[layer]), lower_weights(h, z, layer, b), spec.dim);
    }
    return grad;
}

Vec layer_thresholds(const HierarchicalEnergy& h, std::span<const Vec> z, std::size_t layer)
{
    require_layer(h, layer);
    require_point(h, z);
    const LayerSpec& spec = h.layers[layer];
    Vec thr = Vec::Zero(spec.dim);
    for (std::size_t b = 0; b < spec.nonsmooth.size(); ++b) {
        const auto* w = std::get_if<WeightedL1>(&spec.nonsmooth[b]);
        if (w == nullptr) continue;
        const Vec up = upper_values(h, z, layer, b);
        for (Eigen::Index c = 0; c < spec.dim; ++c) thr[c] += w->weight * up[c % w->groups];
    }
    return thr;
}

}  // namespace spinv
