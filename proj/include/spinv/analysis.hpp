#pragma once

// Measurements on trained models and solver traces: invariant-unit grouping,
// Gabor fits of filters, edge response maps with tuning-width and overlap
// summaries, toy orientation purity, and convergence-rate verification.

#include "spinv/learning.hpp"

#include <optional>

namespace spinv {

struct GroupEntry {
    Eigen::Index unit = 0;
    double weight = 0.0;
};

// For every invariant unit j, the top_k simple units by A(i, j), descending,
// ties broken by ascending unit index. top_k is clamped to the code size.
std::vector<std::vector<GroupEntry>> grouping_report(const Model& model, int top_k);

// Index of the best-correlated template for each column of W and the
// absolute normalized correlation (codes are signed, so -t matches t).
struct TemplateMatch {
    int template_id = -1;
    double correlation = 0.0;
};
std::vector<TemplateMatch> match_templates(const Mat& W, const std::vector<Patch>& templates);

// ---- Gabor fitting ------------------------------------------------------------

struct GaborParams {
    double x0 = 0.0;  // center column
    double y0 = 0.0;  // center row
    double orientation = 0.0;  // direction of the carrier wave vector, [0, pi)
    double frequency = 0.1;    // cycles per pixel
    double phase = 0.0;
    double sigma_x = 3.0;  // envelope along the wave vector
    double sigma_y = 3.0;  // envelope along the wave fronts
    double amplitude = 1.0;
};

struct GaborFit : GaborParams {
    double residual = 0.0;  // ||filter - fit||^2 / ||filter||^2
};

Patch render_gabor(const GaborParams& p, int height, int width);
// Coarse grid over orientation, frequency, envelope and center with the
// carrier's cosine/sine amplitudes solved in closed form, followed by
// Levenberg-Marquardt refinement of the best candidates.
GaborFit fit_gabor(const Patch& filter);

// ---- response maps --------------------------------------------------------------

enum class UnitKind { Simple, Invariant };

struct ResponseGrid {
    std::vector<double> b_samples;
    std::vector<double> theta_samples;
    double k = 1.0;

    // b in [-10, 10] (41 steps), theta in [0, pi) (36 steps), k = 1.
    static ResponseGrid defaults();
};

struct ResponseMap {
    UnitKind kind = UnitKind::Simple;
    Eigen::Index unit_id = 0;
    std::vector<double> b_samples;
    std::vector<double> theta_samples;
    Mat grid;  // theta x b; NaN where inference failed
};

// Responses of several units from one inference per grid point. The stimulus
// is presented as a static sequence of model.frames identical frames through
// the split pipeline; Simple units report |z_i|, invariant units report u_j.
std::vector<ResponseMap> response_maps(const Model& model, UnitKind kind, std::span<const Eigen::Index> units,
                                       const ResponseGrid& grid, const SolverOptions& opts);
ResponseMap response_map(const Model& model, UnitKind kind, Eigen::Index unit, const ResponseGrid& grid,
                         const SolverOptions& opts);

// Extent in b of the response above half the unit's peak, at the orientation
// holding the peak. nullopt for a silent unit.
std::optional<double> tuning_width(const ResponseMap& map, double silent = 1e-9);

// Mean pairwise Jaccard overlap of the response regions (response > threshold)
// of the non-silent units; 0 with fewer than two such units.
double mean_region_overlap(std::span<const ResponseMap> maps, double threshold = 1e-6);

double median(std::vector<double> values);

// ---- toy purity ------------------------------------------------------------------

struct UnitPurity {
    Eigen::Index unit = 0;
    double frequency = 0.0;  // fraction of patches on which the unit fires
    double purity = 0.0;     // share of activation mass from the best orientation
    int orientation = -1;
};

struct PurityReport {
    int n_active = 0;
    std::vector<UnitPurity> units;  // every invariant unit
    std::vector<UnitPurity> active() const;
};

struct PurityOptions {
    double fire_threshold = 1e-4;  // u_j above this counts as firing
    double active_frequency = 0.05;
};

PurityReport orientation_purity(const Model& model, const ToyConfig& cfg, int n_eval, Rng& rng,
                                const SolverOptions& opts, const PurityOptions& popts = {});

// ---- rates ------------------------------------------------------------------------

enum class RateKind { Ista, Fista };

struct RateCheck {
    bool holds = false;
    double worst_ratio = 0.0;  // max_k (E(z_k) - E*) / bound(k)
    int worst_k = 0;
};

// Fista: 2 L d^2 / (k+1)^2. Ista: L d^2 / (2k). d = ||z_0 - z*||.
double rate_bound(RateKind kind, double L, double z0_dist, int k);
RateCheck verify_rate(const SolverTrace& trace, double E_star, double L, double z0_dist, RateKind kind);

}  // namespace spinv
