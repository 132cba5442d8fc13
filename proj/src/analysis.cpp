#include "spinv/analysis.hpp"

#include "spinv/kernels.hpp"

#include <fmt/format.h>
#include <unsupported/Eigen/NonLinearOptimization>
#include <unsupported/Eigen/NumericalDiff>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numbers>
#include <numeric>

namespace spinv {

std::vector<std::vector<GroupEntry>> grouping_report(const Model& model, int top_k)
{
    if (!model.has_invariant_layer()) throw Error("grouping report needs an invariant layer");
    const Eigen::Index code = model.A.rows();
    if (top_k > code) {
        std::cerr << fmt::format("warning: top_k {} exceeds {} simple units; clamping\n", top_k, code);
        top_k = int(code);
    }
    top_k = std::max(top_k, 0);
    std::vector<std::vector<GroupEntry>> out;
    for (Eigen::Index j = 0; j < model.A.cols(); ++j) {
        std::vector<Eigen::Index> idx(static_cast<std::size_t>(code));
        std::iota(idx.begin(), idx.end(), Eigen::Index(0));
        std::stable_sort(idx.begin(), idx.end(),
                         [&](Eigen::Index a, Eigen::Index b) { return model.A.data(a, j) > model.A.data(b, j); });
        std::vector<GroupEntry> row;
        for (int r = 0; r < top_k; ++r) row.push_back({idx[r], model.A.data(idx[r], j)});
        out.push_back(std::move(row));
    }
    return out;
}

std::vector<TemplateMatch> match_templates(const Mat& W, const std::vector<Patch>& templates)
{
    std::vector<Vec> normed;
    for (const Patch& t : templates) {
        Vec v = t.as_vector();
        require_dim("template size", W.rows(), v.size());
        const double n = v.norm();
        normed.push_back(n > 0 ? Vec(v / n) : v);
    }
    std::vector<TemplateMatch> out;
    for (Eigen::Index j = 0; j < W.cols(); ++j) {
        const Vec col = W.col(j);
        const double n = col.norm();
        TemplateMatch best;
        for (std::size_t t = 0; t < normed.size(); ++t) {
            const double c = n > 0 ? normed[t].dot(col) / n : 0.0;
            if (best.template_id < 0 || std::abs(c) > best.correlation) best = {int(t), std::abs(c)};
        }
        out.push_back(best);
    }
    return out;
}

// ---- Gabor ------------------------------------------------------------------------

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Envelope and carrier basis at one pixel for shape parameters
// (x0, y0, theta, f, sx, sy).
inline void gabor_basis(double x0, double y0, double theta, double f, double sx, double sy, double c, double r,
                        double& cos_part, double& sin_part)
{
    const double dx = c - x0;
    const double dy = r - y0;
    const double xp = std::cos(theta) * dx + std::sin(theta) * dy;
    const double yp = -std::sin(theta) * dx + std::cos(theta) * dy;
    const double env = std::exp(-0.5 * (xp * xp / (sx * sx) + yp * yp / (sy * sy)));
    cos_part = env * std::cos(kTwoPi * f * xp);
    sin_part = env * std::sin(kTwoPi * f * xp);
}

struct GaborResidual {
    using Scalar = double;
    enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };
    using InputType = Eigen::VectorXd;
    using ValueType = Eigen::VectorXd;
    using JacobianType = Eigen::MatrixXd;

    const Patch* target = nullptr;

    int inputs() const { return 8; }
    int values() const { return int(target->pixels.size()); }

    int operator()(const Eigen::VectorXd& p, Eigen::VectorXd& out) const
    {
        const double sx = std::max(std::abs(p[4]), 0.3);
        const double sy = std::max(std::abs(p[5]), 0.3);
        for (int r = 0; r < target->height; ++r)
            for (int c = 0; c < target->width; ++c) {
                double cp = 0.0;
                double sp = 0.0;
                gabor_basis(p[0], p[1], p[2], p[3], sx, sy, c, r, cp, sp);
                out[r * target->width + c] = p[6] * cp + p[7] * sp - target->at(r, c);
            }
        return 0;
    }
};

struct Candidate {
    double sse = std::numeric_limits<double>::infinity();
    Eigen::VectorXd params;
};

GaborFit to_fit(const Eigen::VectorXd& p, double sse, double energy)
{
    GaborFit fit;
    fit.x0 = p[0];
    fit.y0 = p[1];
    double theta = p[2];
    double f = p[3];
    double a = p[6];
    double b = p[7];
    // Canonical form: f > 0, theta in [0, pi). Flipping the wave vector
    // mirrors x' and so negates the sine coefficient.
    if (f < 0.0) {
        f = -f;
        b = -b;
    }
    const double turns = std::floor(theta / std::numbers::pi);
    theta -= turns * std::numbers::pi;
    if (std::fmod(std::abs(turns), 2.0) == 1.0) b = -b;
    fit.orientation = theta;
    fit.frequency = f;
    fit.sigma_x = std::abs(p[4]);
    fit.sigma_y = std::abs(p[5]);
    fit.amplitude = std::hypot(a, b);
    fit.phase = std::atan2(-b, a);
    fit.residual = energy > 0.0 ? sse / energy : 0.0;
    return fit;
}

}  // namespace

Patch render_gabor(const GaborParams& p, int height, int width)
{
    Patch out(height, width);
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) {
            double cp = 0.0;
            double sp = 0.0;
            gabor_basis(p.x0, p.y0, p.orientation, p.frequency, p.sigma_x, p.sigma_y, c, r, cp, sp);
            out.at(r, c) = p.amplitude * (std::cos(p.phase) * cp - std::sin(p.phase) * sp);
        }
    return out;
}

GaborFit fit_gabor(const Patch& filter)
{
    const Vec target = filter.as_vector();
    const double energy = target.squaredNorm();
    if (!(energy > 0.0)) throw Error("cannot fit a Gabor to an all-zero filter");

    const int h = filter.height;
    const int w = filter.width;
    const std::vector<double> freqs{0.04, 0.06, 0.09, 0.13, 0.18, 0.25, 0.33};
    const std::vector<double> sigmas{1.5, 2.5, 4.0, 6.0};
    constexpr int n_theta = 16;
    const int step = std::max(1, std::min(h, w) / 10);

    std::vector<Candidate> best(3);
    std::vector<double> cb(target.size());
    std::vector<double> sb(target.size());
    for (int ti = 0; ti < n_theta; ++ti) {
        const double theta = ti * std::numbers::pi / n_theta;
        for (double f : freqs)
            for (double s : sigmas)
                for (int y0 = step / 2; y0 < h; y0 += step)
                    for (int x0 = step / 2; x0 < w; x0 += step) {
                        double cc = 0, ss = 0, cs = 0, ct = 0, st = 0;
                        for (int r = 0; r < h; ++r)
                            for (int c = 0; c < w; ++c) {
                                double cp = 0.0;
                                double sp = 0.0;
                                gabor_basis(x0, y0, theta, f, s, s, c, r, cp, sp);
                                const double t = target[r * w + c];
                                cc += cp * cp;
                                ss += sp * sp;
                                cs += cp * sp;
                                ct += cp * t;
                                st += sp * t;
                            }
                        const double det = cc * ss - cs * cs;
                        if (det <= 1e-12) continue;
                        const double a = (ct * ss - st * cs) / det;
                        const double b = (st * cc - ct * cs) / det;
                        const double sse = energy - (a * ct + b * st);
                        if (sse < best.back().sse) {
                            Eigen::VectorXd p(8);
                            p << x0, y0, theta, f, s, s, a, b;
                            best.back() = {sse, p};
                            std::sort(best.begin(), best.end(),
                                      [](const Candidate& l, const Candidate& r) { return l.sse < r.sse; });
                        }
                    }
    }

    GaborResidual functor;
    functor.target = &filter;
    Candidate winner = best.front();
    for (const Candidate& start : best) {
        if (!std::isfinite(start.sse)) continue;
        Eigen::VectorXd p = start.params;
        Eigen::NumericalDiff<GaborResidual> diff(functor);
        Eigen::LevenbergMarquardt<Eigen::NumericalDiff<GaborResidual>> lm(diff);
        lm.parameters.maxfev = 2000;
        lm.minimize(p);
        Eigen::VectorXd res(target.size());
        functor(p, res);
        const double sse = res.squaredNorm();
        if (std::isfinite(sse) && sse < winner.sse) winner = {sse, p};
    }
    winner.params[4] = std::max(std::abs(winner.params[4]), 0.3);
    winner.params[5] = std::max(std::abs(winner.params[5]), 0.3);
    return to_fit(winner.params, winner.sse, energy);
}

// ---- response maps ---------------------------------------------------------------

ResponseGrid ResponseGrid::defaults()
{
    ResponseGrid g;
    for (int i = 0; i < 41; ++i) g.b_samples.push_back(-10.0 + 0.5 * i);
    for (int i = 0; i < 36; ++i) g.theta_samples.push_back(i * std::numbers::pi / 36.0);
    return g;
}

std::vector<ResponseMap> response_maps(const Model& model, UnitKind kind, std::span<const Eigen::Index> units,
                                       const ResponseGrid& grid, const SolverOptions& opts)
{
    if (model.patch_height != model.patch_width) throw Error("response maps need square patches");
    if (kind == UnitKind::Invariant && !model.has_invariant_layer())
        throw Error("model has no invariant units");
    const Eigen::Index limit = kind == UnitKind::Simple ? model.W.cols() : model.A.cols();
    for (Eigen::Index u : units)
        if (u < 0 || u >= limit) throw Error(fmt::format("unit {} out of range [0, {})", u, limit));

    const int nt = int(grid.theta_samples.size());
    const int nb = int(grid.b_samples.size());
    std::vector<ResponseMap> maps;
    for (Eigen::Index u : units)
        maps.push_back({kind, u, grid.b_samples, grid.theta_samples,
                        Mat::Constant(nt, nb, std::numeric_limits<double>::quiet_NaN())});

    const int points = nt * nb;
#pragma omp parallel for schedule(dynamic) if (kernels::threads() > 1)
    for (int idx = 0; idx < points; ++idx) {
        const int ti = idx / nb;
        const int bi = idx % nb;
        try {
            const Vec x =
                edge_stimulus(grid.b_samples[bi], grid.theta_samples[ti], grid.k, model.patch_height).as_vector();
            const Vec z = solve_lasso({&model.W, x, model.alpha, {}}, opts).code;
            Vec response;
            if (kind == UnitKind::Simple) {
                response = z.cwiseAbs();
            } else {
                const Vec z_star = double(std::max(model.frames, 1)) * z.cwiseAbs();
                response = solve_invariant({&model.A, z_star, model.alpha, model.beta}, opts).code;
            }
            for (std::size_t m = 0; m < maps.size(); ++m) maps[m].grid(ti, bi) = response[maps[m].unit_id];
        } catch (const Error&) {
            // Left as NaN: a failed grid point is a missing value.
        }
    }
    return maps;
}

ResponseMap response_map(const Model& model, UnitKind kind, Eigen::Index unit, const ResponseGrid& grid,
                         const SolverOptions& opts)
{
    const Eigen::Index units[] = {unit};
    return std::move(response_maps(model, kind, units, grid, opts).front());
}

std::optional<double> tuning_width(const ResponseMap& map, double silent)
{
    double peak = -1.0;
    Eigen::Index best_row = 0;
    for (Eigen::Index r = 0; r < map.grid.rows(); ++r)
        for (Eigen::Index c = 0; c < map.grid.cols(); ++c)
            if (const double v = map.grid(r, c); std::isfinite(v) && v > peak) {
                peak = v;
                best_row = r;
            }
    if (!(peak > silent)) return std::nullopt;
    const double step = map.b_samples.size() > 1 ? map.b_samples[1] - map.b_samples[0] : 1.0;
    int count = 0;
    for (Eigen::Index c = 0; c < map.grid.cols(); ++c)
        if (const double v = map.grid(best_row, c); std::isfinite(v) && v > 0.5 * peak) ++count;
    return count * step;
}

double mean_region_overlap(std::span<const ResponseMap> maps, double threshold)
{
    std::vector<std::vector<bool>> regions;
    for (const ResponseMap& m : maps) {
        std::vector<bool> region(std::size_t(m.grid.size()));
        bool any = false;
        for (Eigen::Index i = 0; i < m.grid.size(); ++i) {
            const double v = m.grid.data()[i];
            region[std::size_t(i)] = std::isfinite(v) && v > threshold;
            any = any || region[std::size_t(i)];
        }
        if (any) regions.push_back(std::move(region));
    }
    if (regions.size() < 2) return 0.0;
    double total = 0.0;
    int pairs = 0;
    for (std::size_t i = 0; i < regions.size(); ++i)
        for (std::size_t j = i + 1; j < regions.size(); ++j) {
            int inter = 0;
            int uni = 0;
            for (std::size_t p = 0; p < regions[i].size(); ++p) {
                inter += regions[i][p] && regions[j][p];
                uni += regions[i][p] || regions[j][p];
            }
            total += double(inter) / uni;
            ++pairs;
        }
    return total / pairs;
}

double median(std::vector<double> values)
{
    if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// ---- purity ----------------------------------------------------------------------

std::vector<UnitPurity> PurityReport::active() const
{
    std::vector<UnitPurity> out;
    for (const UnitPurity& u : units)
        if (u.orientation >= 0) out.push_back(u);
    return out;
}

PurityReport orientation_purity(const Model& model, const ToyConfig& cfg, int n_eval, Rng& rng,
                                const SolverOptions& opts, const PurityOptions& popts)
{
    if (!model.has_invariant_layer()) throw Error("orientation purity needs a trained invariant layer");
    if (n_eval < 1) throw Error("orientation purity needs at least one evaluation patch");
    const Eigen::Index units = model.A.cols();
    Mat mass = Mat::Zero(units, cfg.n_orientations);
    Vec fired = Vec::Zero(units);

    std::vector<ToyPatch> patches;
    for (int i = 0; i < n_eval; ++i) patches.push_back(gen_toy_patch(cfg, rng));
    std::vector<Vec> codes(static_cast<std::size_t>(n_eval));
#pragma omp parallel for schedule(dynamic) if (kernels::threads() > 1)
    for (int i = 0; i < n_eval; ++i) {
        const Vec x = patches[std::size_t(i)].patch.as_vector();
        codes[std::size_t(i)] = infer(model, std::span<const Vec>(&x, 1), opts).u;
    }
    for (int i = 0; i < n_eval; ++i) {
        const Vec& u = codes[std::size_t(i)];
        for (Eigen::Index j = 0; j < units; ++j)
            if (u[j] > popts.fire_threshold) {
                fired[j] += 1.0;
                mass(j, patches[std::size_t(i)].orientation) += u[j];
            }
    }

    PurityReport report;
    for (Eigen::Index j = 0; j < units; ++j) {
        UnitPurity p{j, fired[j] / n_eval, 0.0, -1};
        const double total = mass.row(j).sum();
        if (total > 0.0) {
            Eigen::Index best = 0;
            p.purity = mass.row(j).maxCoeff(&best) / total;
            if (p.frequency > popts.active_frequency) {
                p.orientation = int(best);
                ++report.n_active;
            }
        }
        report.units.push_back(p);
    }
    return report;
}

// ---- rates -------------------------------------------------------------------------

double rate_bound(RateKind kind, double L, double z0_dist, int k)
{
    const double d2 = z0_dist * z0_dist;
    return kind == RateKind::Fista ? 2.0 * L * d2 / ((k + 1.0) * (k + 1.0)) : L * d2 / (2.0 * k);
}

RateCheck verify_rate(const SolverTrace& trace, double E_star, double L, double z0_dist, RateKind kind)
{
    if (trace.energies.empty()) throw Error("verify_rate needs a recorded trace");
    const double min_e = *std::min_element(trace.energies.begin(), trace.energies.end());
    if (E_star > min_e + 1e-12 * std::max(1.0, std::abs(min_e)))
        throw Error(fmt::format("reference energy {} exceeds the trace minimum {}", E_star, min_e));
    RateCheck out{true, 0.0, 0};
    for (std::size_t i = 0; i < trace.energies.size(); ++i) {
        const int k = int(i) + 1;
        const double gap = trace.energies[i] - E_star;
        const double bound = rate_bound(kind, L, z0_dist, k);
        const double ratio = bound > 0.0 ? gap / bound : (gap > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
        if (k == 1 || ratio > out.worst_ratio) {
            out.worst_ratio = ratio;
            out.worst_k = k;
        }
        if (gap > bound) out.holds = false;
    }
    return out;
}

}  // namespace spinv
