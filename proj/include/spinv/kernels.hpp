#pragma once

// Data-parallel inner loops. Every kernel has a serial reference in
// `kernels::serial` and an OpenMP variant in `kernels::omp`; the OpenMP
// variants split work over outputs only, so each output is accumulated in the
// same order as the serial code and results are bitwise identical for any
// thread count.

#include "spinv/types.hpp"

#include <cstdint>
#include <span>

namespace spinv::kernels {

enum class Exec { Serial, Parallel };

// Thread count used by Exec::Parallel (and by callers that parallelize over
// independent work items). Defaults to 1.
void set_threads(int n);
int threads();
Exec default_exec();

// Matrix-vector products by a dictionary, counted per calling thread so the
// per-iteration cost of the solvers can be asserted.
struct MatvecCounts {
    std::uint64_t forward = 0;
    std::uint64_t transpose = 0;
};
MatvecCounts& counts();
void reset_counts();

// y = M x
void gemv(const Mat& m, std::span<const double> x, std::span<double> y, Exec exec = default_exec());
// y = M^T x
void gemv_t(const Mat& m, std::span<const double> x, std::span<double> y, Exec exec = default_exec());

inline Vec apply(const Mat& m, const Vec& x)
{
    Vec y(m.rows());
    gemv(m, {x.data(), std::size_t(x.size())}, {y.data(), std::size_t(y.size())});
    return y;
}

inline Vec apply_t(const Mat& m, const Vec& x)
{
    Vec y(m.cols());
    gemv_t(m, {x.data(), std::size_t(x.size())}, {y.data(), std::size_t(y.size())});
    return y;
}

// Square, odd-sized, normalized filter kernel stored row-major.
struct Stencil {
    int radius = 0;
    std::vector<double> weights;  // (2r+1)^2
};

// Truncated Gaussian of the given standard deviation on a (2r+1)^2 support.
Stencil gaussian_stencil(double sigma, int radius);

// out(p) = sum_k w_k (img(p) - img(k)) / sum_k w_k over in-bounds neighbours k.
// Equivalent to img - local weighted mean, but exactly zero on flat regions.
void local_deviation(std::span<const double> img, int height, int width, const Stencil& s,
                     std::span<double> out, Exec exec = default_exec());

// out(p) = sqrt(sum_k w_k img(k)^2 / sum_k w_k) over in-bounds neighbours k.
void local_rms(std::span<const double> img, int height, int width, const Stencil& s,
               std::span<double> out, Exec exec = default_exec());

namespace serial {
void gemv(const Mat& m, std::span<const double> x, std::span<double> y);
void gemv_t(const Mat& m, std::span<const double> x, std::span<double> y);
void local_deviation(std::span<const double> img, int height, int width, const Stencil& s,
                     std::span<double> out);
void local_rms(std::span<const double> img, int height, int width, const Stencil& s,
               std::span<double> out);
}  // namespace serial

namespace omp {
void gemv(const Mat& m, std::span<const double> x, std::span<double> y);
void gemv_t(const Mat& m, std::span<const double> x, std::span<double> y);
void local_deviation(std::span<const double> img, int height, int width, const Stencil& s,
                     std::span<double> out);
void local_rms(std::span<const double> img, int height, int width, const Stencil& s,
               std::span<double> out);
}  // namespace omp

}  // namespace spinv::kernels
