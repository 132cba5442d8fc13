#pragma once

// Energy functions of the two-layer sparse invariance model and their
// embedding into the generic n-layer product form
//
//   E(z) = sum_{a=0..n} < g_a(z_a), e_{a+1}(z_{a+1}) >,   g_0 = 1, e_{n+1} = 1
//
// where each e_a is smooth (Lipschitz gradient) and each g_a is a weighted L1
// norm or a constant. Factors are vector valued: the K components of g_a pair
// with the K components of e_{a+1}. A layer may carry several factor pairs.

#include "spinv/types.hpp"

#include <span>
#include <variant>
#include <vector>

namespace spinv {

enum class SignConstraint { Free, NonNegative };

// Dense dictionary with (after learning updates) unit-norm columns.
struct Dictionary {
    Mat data;
    bool nonneg = false;

    Eigen::Index rows() const { return data.rows(); }
    Eigen::Index cols() const { return data.cols(); }
};

// Rescales every column to unit norm. Zero columns are left untouched.
void normalize_columns(Dictionary& d);
// max_j | ||d_j|| - 1 |
double column_norm_error(const Dictionary& d);
// Throws if the dictionary violates its invariants beyond tol.
void check_dictionary(const Dictionary& d, double tol = 1e-9);

// (1/2)||x - Wz||^2 + alpha ||z||_1
struct SparseCodingProblem {
    const Dictionary* W = nullptr;
    Vec x;
    double alpha = 0.5;
    Vec mask;  // optional 0/1 weights on pixels; empty means fully observed
};

// alpha sum_i z*_i exp(-(Au)_i) + beta ||u||_1, u >= 0
struct InvariantProblem {
    const Dictionary* A = nullptr;
    Vec z_star;
    double alpha = 0.5;
    double beta = 0.3;
};

// (1/2) sum_t ||x_t - W z_t||^2 + alpha sum_i sum_t |z_ti| g(u)_i + beta ||u||_1
// with g(u)_i = (1 + exp(-(Au)_i)) / 2.
struct UnifiedProblem {
    const Dictionary* W = nullptr;
    const Dictionary* A = nullptr;
    std::vector<Vec> frames;
    double alpha = 0.5;
    double beta = 0.3;
    Vec mask;
};

void validate(const SparseCodingProblem& p);
void validate(const InvariantProblem& p);
void validate(const UnifiedProblem& p);

double eval_sparse_energy(const SparseCodingProblem& p, const Vec& z);
double eval_invariant_energy(const InvariantProblem& p, const Vec& u);
double eval_unified_energy(const UnifiedProblem& p, std::span<const Vec> z, const Vec& u);

// z*_i = sum_t |z_ti|
Vec accumulate_codes(std::span<const Vec> codes);

// ---- generic n-layer form -------------------------------------------------

// Vector of ones of the given width.
struct ConstantFactor {
    Eigen::Index width = 1;
};

// K = 1: (1/2) sum_t || m .* (x_t - W z_t) ||^2, z = (z_1, ..., z_T) stacked.
struct QuadraticReconstruction {
    const Dictionary* W = nullptr;
    std::vector<Vec> frames;
    Vec mask;
};

// K = 1: alpha sum_i w_i exp(-(Au)_i)
struct ExpModulation {
    const Dictionary* A = nullptr;
    double alpha = 1.0;
    Vec weights;
};

// K = rows(A): component i is alpha (1 + exp(-(Au)_i)) / 2. The pooled
// weights come from the paired g factor of the layer below.
struct LogisticModulation {
    const Dictionary* A = nullptr;
    double alpha = 1.0;
};

using SmoothFactor = std::variant<ConstantFactor, QuadraticReconstruction, ExpModulation, LogisticModulation>;

// K = groups: component k is weight * sum_{c mod groups == k} |z_c|
struct WeightedL1 {
    double weight = 1.0;
    Eigen::Index groups = 1;
};

using NonsmoothFactor = std::variant<ConstantFactor, WeightedL1>;

struct LayerSpec {
    Eigen::Index dim = 0;
    SignConstraint sign = SignConstraint::Free;
    // e_a factors; pair with g_{a-1} (with g_0 = 1 for the first layer).
    std::vector<SmoothFactor> smooth;
    // g_a factors; pair with the smooth factors of the next layer (or e_{n+1} = 1).
    std::vector<NonsmoothFactor> nonsmooth;
};

struct HierarchicalEnergy {
    std::vector<LayerSpec> layers;

    std::size_t size() const { return layers.size(); }
};

// Throws on incompatible factor widths or layer dimensions.
void validate(const HierarchicalEnergy& h);

HierarchicalEnergy lasso_energy(const SparseCodingProblem& p);
HierarchicalEnergy invariant_energy(const InvariantProblem& p);
// Layer 0 holds the stacked frame codes, layer 1 holds u.
HierarchicalEnergy unified_energy(const UnifiedProblem& p);

Eigen::Index width(const SmoothFactor& f);
Eigen::Index width(const NonsmoothFactor& f);

double eval_hierarchical_energy(const HierarchicalEnergy& h, std::span<const Vec> z);

// g_{a-1}(z_{a-1}) * grad e_a(z_a), summed over factor pairs. `layer` is 0-based.
Vec grad_smooth_layer(const HierarchicalEnergy& h, std::span<const Vec> z, std::size_t layer);

// Smooth part of the energy seen by one layer: sum <g_{a-1}(z_{a-1}), e_a(z_a)>.
double smooth_layer_value(const HierarchicalEnergy& h, std::span<const Vec> z, std::size_t layer);

// Per-coordinate L1 weight of layer a given the layer above:
// sum over pairs of weight * e_{a+1}(z_{a+1})_{group(c)}.
Vec layer_thresholds(const HierarchicalEnergy& h, std::span<const Vec> z, std::size_t layer);

// ---- cached evaluation ----------------------------------------------------
//
// The solvers keep the linear image D z of every dictionary-backed smooth
// factor so an iteration costs one product by each dictionary and one by its
// transpose. These helpers expose factor evaluation on top of such images.

namespace factor {

// D z for dictionary-backed factors; empty for constants.
Vec image(const SmoothFactor& f, const Vec& z);
// e(z) as a K-vector, given the image of z.
Vec values(const SmoothFactor& f, const Vec& img);
// sum_k c_k grad e^k(z), given the image of z.
Vec weighted_grad(const SmoothFactor& f, const Vec& img, const Vec& c, Eigen::Index dim);
// g(z) as a K-vector.
Vec values(const NonsmoothFactor& g, const Vec& z);

}  // namespace factor

}  // namespace spinv
