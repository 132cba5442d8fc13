#pragma once

// Synthetic inputs and preprocessing: the line-world toy distribution, local
// mean / contrast normalization, translating-window patch sequences, the
// parametric edge stimulus, and PGM/CSV image I/O.

#include "spinv/types.hpp"

#include <string>
#include <vector>

namespace spinv {

// Row-major grayscale image.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(int h, int w, double fill = 0.0) : height(h), width(w), pixels(std::size_t(h) * w, fill) {}

    double& at(int r, int c) { return pixels[std::size_t(r) * width + c]; }
    double at(int r, int c) const { return pixels[std::size_t(r) * width + c]; }

    Vec as_vector() const { return Eigen::Map<const Vec>(pixels.data(), Eigen::Index(pixels.size())); }
    static Image from_vector(const Vec& v, int h, int w);

    Image crop(int row, int col, int h, int w) const;

    bool operator==(const Image&) const = default;
};

using Patch = Image;

struct PatchSequence {
    std::vector<Patch> frames;
    double dx = 0.0;  // per-frame displacement, columns
    double dy = 0.0;  // per-frame displacement, rows
};

struct ToyConfig {
    int size = 20;
    int n_orientations = 4;
    int n_positions = 10;
    double line_prob = 0.2;

    void validate() const;
};

struct ToyPatch {
    Patch patch;
    int orientation = 0;
    std::vector<bool> lines;  // which of the orientation's lines are present
};

// Line templates, index o * n_positions + p. Orientation o is at angle o*pi/n;
// lines are one pixel wide with value 1.
std::vector<Patch> toy_templates(const ToyConfig& cfg);

ToyPatch gen_toy_patch(const ToyConfig& cfg, Rng& rng);

struct PreprocessOptions {
    double sigma = 9.0 / 4.0;  // Gaussian on a 9x9 support
    int radius = 4;
    double cutoff_ratio = 0.01;  // contrast floor relative to the image's global std
};

// Local mean removal then division by max(local std, cutoff).
Image preprocess(const Image& image, const PreprocessOptions& opts = {});
// Stage one alone: image minus its local Gaussian-weighted mean.
Image subtract_local_mean(const Image& image, const PreprocessOptions& opts = {});

struct SequenceOptions {
    int window = 20;
    int frames = 3;
    double mag_lo = 1.0;
    double mag_hi = 2.0;
    // Frame t sits at t * displacement; otherwise every later frame sits at one
    // displacement from the first.
    bool cumulative = true;
};

PatchSequence extract_sequences(const Image& image, const SequenceOptions& opts, Rng& rng);

// e^{-v^2/4} sin(v), v = k (cos theta, sin theta).(x, y) + k b
double edge_value(double b, double theta, double k, double x, double y);
// Edge stimulus sampled at pixel offsets from the patch center
// (x = col - (size-1)/2, y = row - (size-1)/2).
Patch edge_stimulus(double b, double theta, double k, int size);

// Occluding random rotated rectangles ("dead leaves") on a random background.
Image synthetic_image(int size, Rng& rng);

Image read_pgm(const std::string& path);
// Linear map of [lo, hi] to 8-bit gray; lo == hi maps to mid gray.
void write_pgm(const std::string& path, const Image& image);
void write_pgm(const std::string& path, const Image& image, double lo, double hi);
void write_csv(const std::string& path, const Image& image);

// Tiles patches on a grid (one-pixel gap), each scaled symmetrically by its
// own max |value| so zero maps to mid gray.
Image mosaic(const std::vector<Patch>& patches, int columns);

}  // namespace spinv
