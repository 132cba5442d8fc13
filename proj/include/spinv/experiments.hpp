#pragma once

// Experiment drivers shared by the CLI and the acceptance suite: the toy
// line-world, training on translating synthetic sequences, edge-response
// width and overlap summaries, the in-painting comparison, and the seeded
// random problem families behind the convergence benchmarks.

#include "spinv/analysis.hpp"

#include <memory>
#include <string>

namespace spinv {

enum class TrainMode { Split, Unified };

const char* to_string(TrainMode mode);

// ---- split two-stage training ---------------------------------------------------

// |z| summed over the frames of every sequence, with z from the model's W.
std::vector<Vec> accumulated_codes(const Model& model, std::span<const std::vector<Vec>> sequences,
                                   const SolverOptions& opts);

// Sparse coding on every frame, then the invariant layer on the accumulated
// codes. W is initialized from stream 0 of opts.seed and A from stream 1.
Model train_split(std::span<const std::vector<Vec>> sequences, int patch_height, int patch_width,
                  Eigen::Index code_dim, Eigen::Index inv_dim, double alpha, double beta, const TrainOptions& opts);

// ---- toy line-world ---------------------------------------------------------------

struct ToyExperiment {
    ToyConfig toy;
    TrainMode mode = TrainMode::Split;
    Eigen::Index code_dim = 64;
    Eigen::Index inv_dim = 4;
    double alpha = 0.5;
    double beta = 0.3;
    int n_train = 6000;
    int n_eval = 400;
    TrainOptions train = defaults();
    Momentum unified_momentum = Momentum::None;  // for solves on the unified energy
    std::uint64_t seed = 1;

    static TrainOptions defaults();
    void validate() const;
};

struct ToyOutcome {
    Model model;
    PurityReport purity;
    std::vector<TemplateMatch> matches;  // per simple unit
    int distinct_orientations = 0;       // among active invariant units
    double min_purity = 0.0;
    bool passed = false;  // exactly n_orientations active, each pure, all orientations covered
};

// Data from stream 10 of the seed, evaluation patches from stream 11.
ToyOutcome run_toy(const ToyExperiment& e);

// ---- translating sequences ----------------------------------------------------------

struct SequenceSource {
    std::vector<std::string> images;  // PGM paths; synthetic dead-leaves images when empty
    int synthetic_size = 96;
    int synthetic_count = 8;
    PreprocessOptions preprocess;
    SequenceOptions sequence;
    int n_sequences = 4000;
    std::uint64_t seed = 1;

    void validate() const;
};

// Preprocessed images are drawn from stream 20 of the seed, windows from 21.
std::vector<std::vector<Vec>> make_sequences(const SequenceSource& src);

// ---- edge responses -------------------------------------------------------------------

struct WidthSummary {
    int n_simple = 0;     // non-silent simple units
    int n_invariant = 0;  // non-silent invariant units
    double median_simple = 0.0;
    double median_invariant = 0.0;
    double ratio = 0.0;
    bool passed = false;
};

WidthSummary width_summary(std::span<const ResponseMap> simple, std::span<const ResponseMap> invariant,
                           double min_ratio = 1.5);

struct OverlapPoint {
    double beta = 0.0;
    double overlap = 0.0;
    int n_active = 0;
};

// Retrains the invariant layer of `base` once per beta from the same initial A
// (stream 1 of opts.seed) on the given accumulated codes, and measures the mean
// response-region overlap of its invariant units.
std::vector<OverlapPoint> beta_sweep(const Model& base, std::span<const Vec> code_samples,
                                     std::span<const double> betas, const TrainOptions& opts,
                                     const ResponseGrid& grid, const SolverOptions& infer_opts);

// True when overlap never decreases along the sweep, compared in order of
// decreasing beta.
bool overlap_nondecreasing(std::span<const OverlapPoint> points, double slack = 1e-12);

// ---- in-painting --------------------------------------------------------------------

// Exactly round(ratio * n) hidden pixels (false entries), chosen uniformly.
std::vector<bool> random_mask(Eigen::Index n, double hidden_ratio, Rng& rng);

// RMS over hidden pixels; over all pixels when nothing is hidden.
double hidden_rms(const Vec& truth, const Vec& recon, const std::vector<bool>& mask);

struct InpaintOutcome {
    std::vector<double> rms_one_layer;
    std::vector<double> rms_unified;
    double median_one_layer = 0.0;
    double median_unified = 0.0;
    bool passed = false;  // median unified <= median one-layer
};

// Masks come from stream 31 of `seed`; the same mask is used for both models.
InpaintOutcome compare_inpainting(const Model& one_layer, const Model& unified, std::span<const Vec> patches,
                                  double hidden_ratio, std::uint64_t seed, const SolverOptions& one_layer_opts,
                                  const SolverOptions& unified_opts);

struct InpaintExperiment {
    ToyConfig toy;
    Eigen::Index code_dim = 64;
    Eigen::Index inv_dim = 4;
    double alpha = 0.5;
    double beta = 0.3;
    int n_train = 6000;
    int n_test = 200;
    double hidden_ratio = 0.3;
    TrainOptions train = ToyExperiment::defaults();
    Momentum unified_momentum = Momentum::None;
    std::uint64_t seed = 1;

    void validate() const;
};

struct InpaintRun {
    Model one_layer;
    Model unified;
    InpaintOutcome outcome;
};

// Trains both models on the same toy data (stream 10) and compares them on
// held-out patches (stream 30).
InpaintRun run_inpaint(const InpaintExperiment& e);

// ---- benchmark families -----------------------------------------------------------------

struct BenchConfig {
    int instances = 100;
    int max_rows = 32;
    int max_cols = 64;
    int iterations = 500;
    int lemma_samples = 1000;
    std::uint64_t seed = 1;

    void validate() const;
};

// Owns its dictionaries so the energies built from it stay valid.
struct BenchInstance {
    std::vector<std::shared_ptr<Dictionary>> dictionaries;
    HierarchicalEnergy energy;
};

// Random lasso problem: W unit-norm gaussian (rows x cols drawn up to the
// limits), x from a sparse code plus noise, alpha in [0.05, 0.5].
struct LassoInstance {
    std::shared_ptr<Dictionary> W;
    SparseCodingProblem problem;
};
LassoInstance random_lasso(Rng& rng, int max_rows, int max_cols);

// Two separable convex layers: each a quadratic reconstruction paired with an
// L1 weight, coupled only through the layer structure.
BenchInstance random_convex_two_layer(Rng& rng);
// The unified model's energy (nonconvex) on random W, A and frames.
BenchInstance random_unified(Rng& rng);
// Random point of the instance's layer dimensions (nonnegative where required).
std::vector<Vec> random_point(const HierarchicalEnergy& h, Rng& rng, double scale = 1.0);

// Cyclic coordinate descent on the lasso energy: an independent oracle.
Vec coordinate_descent_lasso(const Mat& W, const Vec& x, double alpha, int max_sweeps = 100000, double tol = 1e-14);

struct RateRow {
    int instance = 0;
    RateKind kind = RateKind::Fista;
    bool holds = false;
    double worst_ratio = 0.0;
    int worst_k = 0;
    double L = 0.0;
};
// Lasso family: trace of `iterations` steps from z = 0 against E* from a
// 1e-12 reference solve.
std::vector<RateRow> bench_rates(const BenchConfig& cfg, RateKind kind);

struct MonotoneRow {
    int instance = 0;
    bool convex = true;
    bool monotone = false;
    double worst_increase = 0.0;  // max_k E_k - E_{k-1}
};
// Hierarchical solver without momentum on the convex two-layer or the
// unified family; monotone means no increase beyond `slack`.
std::vector<MonotoneRow> bench_monotone(const BenchConfig& cfg, bool convex, double slack = 1e-12);

struct LemmaRow {
    int sample = 0;
    int layers = 1;
    bool holds = false;
    double slack = 0.0;
    double L = 0.0;
};
// Descent-lemma sampling on the lasso (1 layer) or convex two-layer family.
std::vector<LemmaRow> bench_descent_lemma(const BenchConfig& cfg, int layers);

struct OracleRow {
    int instance = 0;
    double energy_solver = 0.0;
    double energy_oracle = 0.0;
};
std::vector<OracleRow> bench_oracle(const BenchConfig& cfg);

}  // namespace spinv
