#pragma once

// Proximal-gradient inference: shrinkage, single-layer ISTA/FISTA with
// backtracking, and the hierarchical (F)ISTA sweep over the layers of a
// HierarchicalEnergy.

#include "spinv/energy.hpp"

#include <optional>

namespace spinv {

enum class Momentum { None, Fista, CappedFista };

struct SolverOptions {
    int max_iter = 1000;
    // Stop after a few iterations in a row whose energy decrease and step size
    // both stay below tol * max(1, |E_k|). Zero runs max_iter iterations.
    double tol = 1e-9;
    double L0 = 1.0;
    double eta = 2.0;
    Momentum momentum = Momentum::Fista;
    double momentum_cap = 0.9;
    bool record_trace = true;
    int max_backtracks = 100;

    void validate() const;
};

struct SolverTrace {
    std::vector<double> energies;  // energies[k-1] = E(z_k)
    std::vector<int> backtracks;   // backtracking trials per iteration (summed over layers)
    int iterations = 0;
    std::vector<double> final_L;   // per-layer Lipschitz estimates on exit
};

struct CodeState {
    std::vector<Vec> z;       // accepted iterate, one vector per layer
    std::vector<double> L;    // per-layer Lipschitz estimates
    double t = 1.0;           // momentum sequence state
    std::vector<Vec> z_prev;  // previous accepted iterate
};

// Zero codes with L_a = opts.L0 for every layer.
CodeState initial_state(const HierarchicalEnergy& h, const SolverOptions& opts);

// Free: sign(v) max(|v| - tau, 0). NonNegative: max(v - tau, 0).
Vec shrink(const Vec& v, double tau, SignConstraint sign);
Vec shrink(const Vec& v, const Vec& tau, SignConstraint sign);

// Proximal step of one layer with step 1/L, holding the other layers fixed.
// `layer` is 0-based; layers below should already hold their updated values.
Vec layer_step(const HierarchicalEnergy& h, std::span<const Vec> z, std::size_t layer, double L);

struct BacktrackResult {
    double L = 0.0;
    Vec step;
    int trials = 0;  // number of increases of L
};

// Smallest L = eta^i L_prev (i >= 0) for which the quadratic upper bound holds
// at the stepped point. Throws BacktrackError after max_trials increases.
BacktrackResult backtrack(const HierarchicalEnergy& h, std::span<const Vec> z, std::size_t layer, double L_prev,
                          double eta, int max_trials = 100);

struct MomentumStep {
    double t_next = 1.0;
    double r = 0.0;
};

// t_{k+1} = (1 + sqrt(1 + 4 t_k^2)) / 2, r_k = (t_k - 1) / t_{k+1}
MomentumStep momentum_update(double t);

struct HierarchicalResult {
    CodeState state;
    SolverTrace trace;
};

HierarchicalResult solve_hierarchical(const HierarchicalEnergy& h, CodeState z0, const SolverOptions& opts);

struct CodeResult {
    Vec code;
    SolverTrace trace;
};

// Single-layer FISTA/ISTA on the lasso energy; starts from z0 (zero if empty).
CodeResult solve_lasso(const SparseCodingProblem& p, const SolverOptions& opts, const Vec& z0 = Vec());
// Single-layer FISTA/ISTA on the invariant energy with u >= 0, starting at u = 0.
CodeResult solve_invariant(const InvariantProblem& p, const SolverOptions& opts);

struct DescentCheck {
    bool holds = false;
    double slack = 0.0;  // lhs - rhs
    double L = 0.0;      // shared step constant actually used
};

// Evaluates E(z_hat) - E(P_L(z)) >= (L/2)|P_L(z) - z|^2 + L <z - z_hat, P_L(z) - z>
// for the full sweep P_L with one L shared by all layers. L is raised by eta
// until the quadratic upper bound holds at every layer of the sweep.
DescentCheck check_descent_lemma(const HierarchicalEnergy& h, std::span<const Vec> z, std::span<const Vec> z_hat,
                                 double L, double eta = 2.0);

// Fixed-point certificate: a subgradient gamma of the layer's L1 term exists
// with grad + thr .* gamma = 0 up to tol (max norm).
bool check_stationarity(const HierarchicalEnergy& h, std::span<const Vec> z, std::size_t layer, double tol);

// Largest coordinate violation of the stationarity condition above.
double stationarity_residual(const HierarchicalEnergy& h, std::span<const Vec> z, std::size_t layer);

}  // namespace spinv
