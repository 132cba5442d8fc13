#pragma once

// Dictionary learning by stochastic gradient descent with unit-norm column
// projection: sparse coding (W), the invariant layer (A) on accumulated
// codes, and joint training of the unified model. Also masked reconstruction
// (in-painting) and model serialization.

#include "spinv/datagen.hpp"
#include "spinv/solver.hpp"

#include <cstdint>
#include <functional>
#include <string>

namespace spinv {

enum class ModelKind : std::uint32_t { SplitLayer1 = 1, SplitLayer2 = 2, Unified = 3 };

const char* to_string(ModelKind kind);

struct Model {
    ModelKind kind = ModelKind::SplitLayer1;
    Dictionary W;                  // input_dim x code_dim
    Dictionary A{Mat(), true};     // code_dim x inv_dim; empty for SplitLayer1
    double alpha = 0.5;
    double beta = 0.3;
    int frames = 1;        // frames per training sequence
    int patch_height = 0;  // input_dim = patch_height * patch_width
    int patch_width = 0;
    std::uint64_t w_steps = 0;  // parameter updates applied so far
    std::uint64_t a_steps = 0;

    bool has_invariant_layer() const { return A.data.size() > 0; }
    bool operator==(const Model& o) const;
};

struct TrainOptions {
    double learning_rate = 0.1;
    double decay = 10000.0;  // rate_k = rate_0 / (1 + k / decay); 0 disables decay
    int epochs = 1;
    int batch = 1;
    std::uint64_t seed = 0;
    SolverOptions infer_opts = default_infer_options();

    static SolverOptions default_infer_options();
    double rate(std::uint64_t step) const;
    void validate() const;
};

// Unit-normalized standard normal columns.
Dictionary init_dictionary(Eigen::Index rows, Eigen::Index cols, Rng& rng);
// Unit-normalized |standard normal| columns.
Dictionary init_nonneg_dictionary(Eigen::Index rows, Eigen::Index cols, Rng& rng);

// Fresh model; W is drawn from stream 0 of `seed`, A from stream 1.
Model init_model(ModelKind kind, int patch_height, int patch_width, Eigen::Index code_dim, Eigen::Index inv_dim,
                 double alpha, double beta, int frames, std::uint64_t seed);

// Called after every parameter update with the number of updates applied.
using StepObserver = std::function<void(const Model&, std::uint64_t step)>;

// Each call continues from the model's step counter until epochs * samples.size()
// updates have been applied, so a saved model can be resumed.
void train_sparse_coding(Model& model, std::span<const Vec> samples, const TrainOptions& opts,
                         const StepObserver& observer = {});
void train_invariant(Model& model, std::span<const Vec> code_samples, const TrainOptions& opts,
                     const StepObserver& observer = {});
void train_unified(Model& model, std::span<const std::vector<Vec>> sequences, const TrainOptions& opts,
                   const StepObserver& observer = {});

// Convenience front ends starting from a freshly initialized model.
Model train_sparse_coding(std::span<const Vec> samples, Eigen::Index code_dim, double alpha, const TrainOptions& opts);
Model train_invariant(std::span<const Vec> code_samples, Eigen::Index inv_dim, double alpha, double beta,
                      const TrainOptions& opts);
Model train_unified(std::span<const std::vector<Vec>> sequences, Eigen::Index code_dim, Eigen::Index inv_dim,
                    double alpha, double beta, const TrainOptions& opts);

// ---- inference with a trained model -------------------------------------------

struct Codes {
    std::vector<Vec> z;  // one code per frame
    Vec u;               // invariant code; empty without an invariant layer
};

// Split models: per-frame lasso, then the invariant layer on the accumulated
// codes. Unified models: joint hierarchical inference.
Codes infer(const Model& model, std::span<const Vec> frames, const SolverOptions& opts);

// Split-model pipeline regardless of kind (used for response maps).
Codes infer_split(const Model& model, std::span<const Vec> frames, const SolverOptions& opts);

// Minimizes the model energy with the reconstruction restricted to observed
// pixels (mask != 0) and returns W z over all pixels.
Vec inpaint(const Model& model, const Vec& x, const std::vector<bool>& mask, const SolverOptions& opts);

// ---- serialization ------------------------------------------------------------

void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);
void write_matrix_csv(const std::string& path, const Mat& m);

}  // namespace spinv
