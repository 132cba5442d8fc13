#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace spinv {

using Vec = Eigen::VectorXd;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Rng = std::mt19937_64;

// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    DimensionError(const std::string& what, long expected, long got);

    long expected() const { return expected_; }
    long got() const { return got_; }

private:
    long expected_;
    long got_;
};

// Raised when backtracking fails to find an admissible Lipschitz estimate.
class BacktrackError : public Error {
public:
    using Error::Error;
};

inline void require_dim(const char* what, long expected, long got)
{
    if (expected != got) throw DimensionError(what, expected, got);
}

// splitmix64 finalizer; used to derive independent seeds for numbered streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream)
{
    return Rng(derive_seed(seed, stream));
}

}  // namespace spinv
