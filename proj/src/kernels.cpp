#include "spinv/kernels.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace spinv::kernels {

namespace {

int g_threads = 1;
thread_local MatvecCounts t_counts;

inline double row_dot(const double* row, const double* x, Eigen::Index n)
{
    double s = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) s += row[j] * x[j];
    return s;
}

inline void accumulate_columns(const Mat& m, const double* x, double* y, Eigen::Index j0,
                               Eigen::Index j1)
{
    for (Eigen::Index j = j0; j < j1; ++j) y[j] = 0.0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double xi = x[i];
        const double* row = m.data() + i * m.cols();
        for (Eigen::Index j = j0; j < j1; ++j) y[j] += row[j] * xi;
    }
}

inline double deviation_at(const double* img, int h, int w, const Stencil& s, int r, int c)
{
    const int rad = s.radius;
    const int side = 2 * rad + 1;
    const double center = img[r * w + c];
    double acc = 0.0;
    double norm = 0.0;
    for (int dr = -rad; dr <= rad; ++dr) {
        const int rr = r + dr;
        if (rr < 0 || rr >= h) continue;
        for (int dc = -rad; dc <= rad; ++dc) {
            const int cc = c + dc;
            if (cc < 0 || cc >= w) continue;
            const double wk = s.weights[(dr + rad) * side + (dc + rad)];
            acc += wk * (center - img[rr * w + cc]);
            norm += wk;
        }
    }
    return acc / norm;
}

inline double rms_at(const double* img, int h, int w, const Stencil& s, int r, int c)
{
    const int rad = s.radius;
    const int side = 2 * rad + 1;
    double acc = 0.0;
    double norm = 0.0;
    for (int dr = -rad; dr <= rad; ++dr) {
        const int rr = r + dr;
        if (rr < 0 || rr >= h) continue;
        for (int dc = -rad; dc <= rad; ++dc) {
            const int cc = c + dc;
            if (cc < 0 || cc >= w) continue;
            const double wk = s.weights[(dr + rad) * side + (dc + rad)];
            const double v = img[rr * w + cc];
            acc += wk * v * v;
            norm += wk;
        }
    }
    return std::sqrt(acc / norm);
}

void check_gemv(const Mat& m, std::size_t nx, std::size_t ny, bool transpose)
{
    const auto in = transpose ? m.rows() : m.cols();
    const auto out = transpose ? m.cols() : m.rows();
    require_dim(transpose ? "gemv_t input" : "gemv input", long(in), long(nx));
    require_dim(transpose ? "gemv_t output" : "gemv output", long(out), long(ny));
}

}  // namespace

void set_threads(int n)
{
    g_threads = std::max(1, n);
#ifdef _OPENMP
    omp_set_num_threads(g_threads);
#endif
}

int threads() { return g_threads; }

Exec default_exec() { return g_threads > 1 ? Exec::Parallel : Exec::Serial; }

MatvecCounts& counts() { return t_counts; }

void reset_counts() { t_counts = {}; }

void gemv(const Mat& m, std::span<const double> x, std::span<double> y, Exec exec)
{
    check_gemv(m, x.size(), y.size(), false);
    ++t_counts.forward;
    if (exec == Exec::Parallel)
        omp::gemv(m, x, y);
    else
        serial::gemv(m, x, y);
}

void gemv_t(const Mat& m, std::span<const double> x, std::span<double> y, Exec exec)
{
    check_gemv(m, x.size(), y.size(), true);
    ++t_counts.transpose;
    if (exec == Exec::Parallel)
        omp::gemv_t(m, x, y);
    else
        serial::gemv_t(m, x, y);
}

Stencil gaussian_stencil(double sigma, int radius)
{
    if (!(sigma > 0.0) || radius < 0) throw Error("gaussian stencil needs sigma > 0 and radius >= 0");
    Stencil s;
    s.radius = radius;
    const int side = 2 * radius + 1;
    s.weights.resize(std::size_t(side) * side);
    double total = 0.0;
    for (int r = -radius; r <= radius; ++r)
        for (int c = -radius; c <= radius; ++c) {
            const double v = std::exp(-(r * r + c * c) / (2.0 * sigma * sigma));
            s.weights[(r + radius) * side + (c + radius)] = v;
            total += v;
        }
    for (double& v : s.weights) v /= total;
    return s;
}

void local_deviation(std::span<const double> img, int height, int width, const Stencil& s,
                     std::span<double> out, Exec exec)
{
    require_dim("local_deviation image", long(height) * width, long(img.size()));
    require_dim("local_deviation output", long(height) * width, long(out.size()));
    if (exec == Exec::Parallel)
        omp::local_deviation(img, height, width, s, out);
    else
        serial::local_deviation(img, height, width, s, out);
}

void local_rms(std::span<const double> img, int height, int width, const Stencil& s,
               std::span<double> out, Exec exec)
{
    require_dim("local_rms image", long(height) * width, long(img.size()));
    require_dim("local_rms output", long(height) * width, long(out.size()));
    if (exec == Exec::Parallel)
        omp::local_rms(img, height, width, s, out);
    else
        serial::local_rms(img, height, width, s, out);
}

namespace serial {

void gemv(const Mat& m, std::span<const double> x, std::span<double> y)
{
    for (Eigen::Index i = 0; i < m.rows(); ++i) y[i] = row_dot(m.data() + i * m.cols(), x.data(), m.cols());
}

void gemv_t(const Mat& m, std::span<const double> x, std::span<double> y)
{
    accumulate_columns(m, x.data(), y.data(), 0, m.cols());
}

void local_deviation(std::span<const double> img, int height, int width, const Stencil& s,
                     std::span<double> out)
{
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) out[r * width + c] = deviation_at(img.data(), height, width, s, r, c);
}

void local_rms(std::span<const double> img, int height, int width, const Stencil& s,
               std::span<double> out)
{
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) out[r * width + c] = rms_at(img.data(), height, width, s, r, c);
}

}  // namespace serial

namespace omp {

void gemv(const Mat& m, std::span<const double> x, std::span<double> y)
{
    const Eigen::Index rows = m.rows();
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < rows; ++i) y[i] = row_dot(m.data() + i * m.cols(), x.data(), m.cols());
}

void gemv_t(const Mat& m, std::span<const double> x, std::span<double> y)
{
    // Column blocks of 64 keep each thread's accumulators in cache.
    constexpr Eigen::Index block = 64;
    const Eigen::Index nblocks = (m.cols() + block - 1) / block;
#pragma omp parallel for schedule(static)
    for (Eigen::Index b = 0; b < nblocks; ++b) {
        const Eigen::Index j0 = b * block;
        accumulate_columns(m, x.data(), y.data(), j0, std::min(m.cols(), j0 + block));
    }
}

void local_deviation(std::span<const double> img, int height, int width, const Stencil& s,
                     std::span<double> out)
{
#pragma omp parallel for schedule(static)
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) out[r * width + c] = deviation_at(img.data(), height, width, s, r, c);
}

void local_rms(std::span<const double> img, int height, int width, const Stencil& s,
               std::span<double> out)
{
#pragma omp parallel for schedule(static)
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) out[r * width + c] = rms_at(img.data(), height, width, s, r, c);
}

}  // namespace omp

}  // namespace spinv::kernels
