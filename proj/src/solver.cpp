#include "spinv/solver.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>

namespace spinv {

namespace {

// Rounding allowance for the quadratic upper-bound test.
double bound_slack(double reference)
{
    return 8.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(reference));
}

bool upper_bound_holds(double f_new, double f_old, const Vec& step, const Vec& grad, double L)
{
    // A zero step lands on the start point. Any gap is then rounding in the
    // extrapolated image, and raising L cannot remove it.
    if (step.isZero(0.0)) return true;
    const double q = f_old + step.dot(grad) + 0.5 * L * step.squaredNorm();
    return f_new <= q + bound_slack(f_old);
}

// Stop on a small decrease, never on a small increase: with momentum the
// energy oscillates and its turning points look converged while the gap is
// still large. The step's own energy scale (L/2)|dz|^2 must be small too, and
// the solve ends only after kCalmIterations such iterations in a row.
constexpr int kCalmIterations = 3;

bool converged(double previous, double current, double moved, double tol)
{
    const double scale = tol * std::max(1.0, std::abs(current));
    const double decrease = previous - current;
    return tol > 0.0 && decrease >= 0.0 && decrease <= scale && moved <= scale;
}

double momentum_ratio(const SolverOptions& opts, double& t)
{
    if (opts.momentum == Momentum::None) return 0.0;
    const MomentumStep m = momentum_update(t);
    t = m.t_next;
    return opts.momentum == Momentum::CappedFista ? std::min(m.r, opts.momentum_cap) : m.r;
}

double weighted_l1(const Vec& thr, const Vec& z) { return (thr.array() * z.array().abs()).sum(); }

}  // namespace

void SolverOptions::validate() const
{
    if (max_iter < 1) throw Error("max_iter must be positive");
    if (!(tol >= 0.0)) throw Error("tol must be nonnegative");
    if (!(L0 > 0.0)) throw Error("L0 must be positive");
    if (!(eta > 1.0)) throw Error("eta must exceed 1");
    if (momentum == Momentum::CappedFista && !(momentum_cap > 0.0 && momentum_cap < 1.0))
        throw Error("momentum cap must lie in (0, 1)");
    if (max_backtracks < 1) throw Error("max_backtracks must be positive");
}

CodeState initial_state(const HierarchicalEnergy& h, const SolverOptions& opts)
{
    CodeState s;
    for (const LayerSpec& layer : h.layers) {
        s.z.push_back(Vec::Zero(layer.dim));
        s.L.push_back(opts.L0);
    }
    s.z_prev = s.z;
    return s;
}

Vec shrink(const Vec& v, double tau, SignConstraint sign)
{
    return shrink(v, Vec::Constant(v.size(), tau), sign);
}

Vec shrink(const Vec& v, const Vec& tau, SignConstraint sign)
{
    require_dim("shrink threshold", v.size(), tau.size());
    Vec out(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (sign == SignConstraint::NonNegative) {
            out[i] = std::max(v[i] - tau[i], 0.0);
        } else {
            const double m = std::abs(v[i]) - tau[i];
            out[i] = m > 0.0 ? std::copysign(m, v[i]) : 0.0;
        }
    }
    return out;
}

Vec layer_step(const HierarchicalEnergy& h, std::span<const Vec> z, std::size_t layer, double L)
{
    if (!(L > 0.0)) throw Error("layer_step needs L > 0");
    const Vec grad = grad_smooth_layer(h, z, layer);
    const Vec thr = layer_thresholds(h, z, layer);
    return shrink(z[layer] - grad / L, thr / L, h.layers[layer].sign);
}

BacktrackResult backtrack(const HierarchicalEnergy& h, std::span<const Vec> z, std::size_t layer, double L_prev,
                          double eta, int max_trials)
{
    if (!(eta > 1.0)) throw Error("backtracking needs eta > 1");
    if (!(L_prev > 0.0)) throw Error("backtracking needs L_prev > 0");
    const Vec grad = grad_smooth_layer(h, z, layer);
    const Vec thr = layer_thresholds(h, z, layer);
    const double f0 = smooth_layer_value(h, z, layer);
    std::vector<Vec> trial(z.begin(), z.end());
    double L = L_prev;
    for (int i = 0; i <= max_trials; ++i) {
        Vec p = shrink(z[layer] - grad / L, thr / L, h.layers[layer].sign);
        trial[layer] = p;
        const double f1 = smooth_layer_value(h, trial, layer);
        if (upper_bound_holds(f1, f0, p - z[layer], grad, L)) return {L, std::move(p), i};
        L *= eta;
    }
    throw BacktrackError(fmt::format("layer {}: no admissible step after {} increases of L", layer, max_trials));
}

MomentumStep momentum_update(double t)
{
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    return {t_next, (t - 1.0) / t_next};
}

// ---- hierarchical solver ----------------------------------------------------

namespace {

// Iterate plus the linear images of its dictionary-backed smooth factors.
struct CachedPoint {
    std::vector<Vec> z;
    std::vector<std::vector<Vec>> img;  // [layer][smooth factor]
};

CachedPoint cache_point(const HierarchicalEnergy& h, const std::vector<Vec>& z)
{
    CachedPoint p{z, {}};
    for (std::size_t a = 0; a < h.size(); ++a) {
        std::vector<Vec> imgs;
        for (const SmoothFactor& f : h.layers[a].smooth) imgs.push_back(factor::image(f, z[a]));
        p.img.push_back(std::move(imgs));
    }
    return p;
}

Vec lower_weights(const HierarchicalEnergy& h, const CachedPoint& p, std::size_t a, std::size_t b)
{
    if (a == 0) return Vec::Ones(width(h.layers[0].smooth[b]));
    return factor::values(h.layers[a - 1].nonsmooth[b], p.z[a - 1]);
}

double layer_smooth(const HierarchicalEnergy& h, const CachedPoint& lower, std::size_t a,
                    const std::vector<Vec>& imgs)
{
    double s = 0.0;
    for (std::size_t b = 0; b < h.layers[a].smooth.size(); ++b)
        s += lower_weights(h, lower, a, b).dot(factor::values(h.layers[a].smooth[b], imgs[b]));
    return s;
}

double cached_energy(const HierarchicalEnergy& h, const CachedPoint& p)
{
    double e = 0.0;
    for (std::size_t a = 0; a < h.size(); ++a) e += layer_smooth(h, p, a, p.img[a]);
    const std::size_t top = h.size() - 1;
    for (const NonsmoothFactor& g : h.layers[top].nonsmooth) e += factor::values(g, p.z[top]).sum();
    return e;
}

// Thresholds of layer a from the cached images of layer a+1 in `upper`.
Vec cached_thresholds(const HierarchicalEnergy& h, const CachedPoint& upper, std::size_t a)
{
    const LayerSpec& spec = h.layers[a];
    Vec thr = Vec::Zero(spec.dim);
    for (std::size_t b = 0; b < spec.nonsmooth.size(); ++b) {
        const auto* w = std::get_if<WeightedL1>(&spec.nonsmooth[b]);
        if (w == nullptr) continue;
        const Vec up = a + 1 == h.size() ? Vec(Vec::Ones(w->groups))
                                         : factor::values(h.layers[a + 1].smooth[b], upper.img[a + 1][b]);
        for (Eigen::Index c = 0; c < spec.dim; ++c) thr[c] += w->weight * up[c % w->groups];
    }
    return thr;
}

}  // namespace

HierarchicalResult solve_hierarchical(const HierarchicalEnergy& h, CodeState z0, const SolverOptions& opts)
{
    validate(h);
    opts.validate();
    require_dim("initial layer count", long(h.size()), long(z0.z.size()));
    for (std::size_t a = 0; a < h.size(); ++a) require_dim("initial code", h.layers[a].dim, z0.z[a].size());
    if (z0.L.size() != h.size()) z0.L.assign(h.size(), opts.L0);

    HierarchicalResult out;
    SolverTrace& trace = out.trace;
    CachedPoint y = cache_point(h, z0.z);  // point the next sweep starts from
    CachedPoint accepted = y;              // z~_k
    CachedPoint previous = y;              // z~_{k-1}
    std::vector<double> L = z0.L;
    double t = z0.t;
    double last_energy = cached_energy(h, y);
    int calm = 0;

    for (int k = 1; k <= opts.max_iter; ++k) {
        int trials_this_iter = 0;
        for (std::size_t a = 0; a < h.size(); ++a) {
            const LayerSpec& spec = h.layers[a];
            // Lower layers already hold their new values in `accepted`.
            Vec grad = Vec::Zero(spec.dim);
            double f_y = 0.0;
            for (std::size_t b = 0; b < spec.smooth.size(); ++b) {
                const Vec c = lower_weights(h, accepted, a, b);
                f_y += c.dot(factor::values(spec.smooth[b], y.img[a][b]));
                grad += factor::weighted_grad(spec.smooth[b], y.img[a][b], c, spec.dim);
            }
            const Vec thr = cached_thresholds(h, y, a);
            double La = L[a];
            for (int i = 0;; ++i) {
                if (i > opts.max_backtracks)
                    throw BacktrackError(fmt::format("iteration {}, layer {}: no admissible step", k, a));
                Vec p = shrink(y.z[a] - grad / La, thr / La, spec.sign);
                std::vector<Vec> imgs;
                for (const SmoothFactor& f : spec.smooth) imgs.push_back(factor::image(f, p));
                const double f_p = layer_smooth(h, accepted, a, imgs);
                if (upper_bound_holds(f_p, f_y, p - y.z[a], grad, La)) {
                    accepted.z[a] = std::move(p);
                    accepted.img[a] = std::move(imgs);
                    break;
                }
                La *= opts.eta;
                ++trials_this_iter;
            }
            L[a] = La;
        }

        const double energy = cached_energy(h, accepted);
        if (opts.record_trace) {
            trace.energies.push_back(energy);
            trace.backtracks.push_back(trials_this_iter);
        }
        trace.iterations = k;

        const double r = momentum_ratio(opts, t);
        y = accepted;
        if (r != 0.0) {
            for (std::size_t a = 0; a < h.size(); ++a) {
                y.z[a] += r * (accepted.z[a] - previous.z[a]);
                for (std::size_t b = 0; b < y.img[a].size(); ++b)
                    y.img[a][b] += r * (accepted.img[a][b] - previous.img[a][b]);
            }
        }
        double moved = 0.0;
        for (std::size_t a = 0; a < h.size(); ++a) moved += 0.5 * L[a] * (accepted.z[a] - previous.z[a]).squaredNorm();
        previous = accepted;
        calm = k > 1 && converged(last_energy, energy, moved, opts.tol) ? calm + 1 : 0;
        last_energy = energy;
        if (calm >= kCalmIterations) break;
    }

    out.state.z = accepted.z;
    out.state.z_prev = previous.z;
    out.state.L = L;
    out.state.t = t;
    trace.final_L = L;
    return out;
}

// ---- single layer -----------------------------------------------------------

namespace {

CodeResult prox_gradient(const SmoothFactor& f, const Vec& thr, SignConstraint sign, Vec x0,
                         const SolverOptions& opts)
{
    opts.validate();
    const Eigen::Index dim = thr.size();
    const Vec ones = Vec::Ones(1);
    CodeResult out;
    SolverTrace& trace = out.trace;

    Vec x = std::move(x0);
    Vec img_x = factor::image(f, x);
    Vec y = x;
    Vec img_y = img_x;
    double L = opts.L0;
    double t = 1.0;
    double last_energy = factor::values(f, img_x)[0] + weighted_l1(thr, x);
    int calm = 0;

    for (int k = 1; k <= opts.max_iter; ++k) {
        const double f_y = factor::values(f, img_y)[0];
        const Vec grad = factor::weighted_grad(f, img_y, ones, dim);
        int trials = 0;
        Vec p;
        Vec img_p;
        double f_p = 0.0;
        for (;; ++trials) {
            if (trials > opts.max_backtracks)
                throw BacktrackError(fmt::format("iteration {}: no admissible step", k));
            p = shrink(y - grad / L, thr / L, sign);
            img_p = factor::image(f, p);
            f_p = factor::values(f, img_p)[0];
            if (upper_bound_holds(f_p, f_y, p - y, grad, L)) break;
            L *= opts.eta;
        }
        const double energy = f_p + weighted_l1(thr, p);
        if (opts.record_trace) {
            trace.energies.push_back(energy);
            trace.backtracks.push_back(trials);
        }
        trace.iterations = k;

        const double r = momentum_ratio(opts, t);
        if (r != 0.0) {
            y = p + r * (p - x);
            img_y = img_p + r * (img_p - img_x);
        } else {
            y = p;
            img_y = img_p;
        }
        const double moved = 0.5 * L * (p - x).squaredNorm();
        x = std::move(p);
        img_x = std::move(img_p);
        calm = k > 1 && converged(last_energy, energy, moved, opts.tol) ? calm + 1 : 0;
        last_energy = energy;
        if (calm >= kCalmIterations) break;
    }
    out.code = std::move(x);
    trace.final_L = {L};
    return out;
}

}  // namespace

CodeResult solve_lasso(const SparseCodingProblem& p, const SolverOptions& opts, const Vec& z0)
{
    validate(p);
    Vec start = z0.size() == 0 ? Vec(Vec::Zero(p.W->cols())) : z0;
    require_dim("initial code", p.W->cols(), start.size());
    const SmoothFactor f = QuadraticReconstruction{p.W, {p.x}, p.mask};
    return prox_gradient(f, Vec::Constant(p.W->cols(), p.alpha), SignConstraint::Free, std::move(start), opts);
}

CodeResult solve_invariant(const InvariantProblem& p, const SolverOptions& opts)
{
    validate(p);
    const SmoothFactor f = ExpModulation{p.A, p.alpha, p.z_star};
    return prox_gradient(f, Vec::Constant(p.A->cols(), p.beta), SignConstraint::NonNegative, Vec::Zero(p.A->cols()),
                         opts);
}

// ---- certificates -------------------------------------------------------------

DescentCheck check_descent_lemma(const HierarchicalEnergy& h, std::span<const Vec> z, std::span<const Vec> z_hat,
                                 double L, double eta)
{
    validate(h);
    if (!(L > 0.0) || !(eta > 1.0)) throw Error("descent check needs L > 0 and eta > 1");
    std::vector<Vec> stepped;
    for (int attempt = 0;; ++attempt) {
        if (attempt > 100) throw BacktrackError("descent check: no shared L satisfies the upper bound");
        stepped.assign(z.begin(), z.end());
        bool ok = true;
        for (std::size_t a = 0; a < h.size() && ok; ++a) {
            const Vec grad = grad_smooth_layer(h, stepped, a);
            const double f0 = smooth_layer_value(h, stepped, a);
            const Vec before = stepped[a];
            stepped[a] = layer_step(h, stepped, a, L);
            ok = upper_bound_holds(smooth_layer_value(h, stepped, a), f0, stepped[a] - before, grad, L);
        }
        if (ok) break;
        L *= eta;
    }
    double step_sq = 0.0;
    double cross = 0.0;
    for (std::size_t a = 0; a < h.size(); ++a) {
        const Vec d = stepped[a] - z[a];
        step_sq += d.squaredNorm();
        cross += (z[a] - z_hat[a]).dot(d);
    }
    const double e_hat = eval_hierarchical_energy(h, z_hat);
    const double e_step = eval_hierarchical_energy(h, stepped);
    const double lhs = e_hat - e_step;
    const double rhs = 0.5 * L * step_sq + L * cross;
    const double scale = std::abs(e_hat) + std::abs(e_step) + 0.5 * L * step_sq + L * std::abs(cross);
    const double slack = lhs - rhs;
    return {slack >= -1e-12 * std::max(1.0, scale), slack, L};
}

double stationarity_residual(const HierarchicalEnergy& h, std::span<const Vec> z, std::size_t layer)
{
    const Vec grad = grad_smooth_layer(h, z, layer);
    const Vec thr = layer_thresholds(h, z, layer);
    const bool nonneg = h.layers[layer].sign == SignConstraint::NonNegative;
    double worst = 0.0;
    for (Eigen::Index c = 0; c < grad.size(); ++c) {
        const double v = z[layer][c];
        double r = 0.0;
        if (v > 0.0)
            r = std::abs(grad[c] + thr[c]);
        else if (v < 0.0)
            r = nonneg ? std::numeric_limits<double>::infinity() : std::abs(grad[c] - thr[c]);
        else
            r = nonneg ? std::max(0.0, -grad[c] - thr[c]) : std::max(0.0, std::abs(grad[c]) - thr[c]);
        worst = std::max(worst, r);
    }
    return worst;
}

bool check_stationarity(const HierarchicalEnergy& h, std::span<const Vec> z, std::size_t layer, double tol)
{
    return stationarity_residual(h, z, layer) <= tol;
}

}  // namespace spinv
