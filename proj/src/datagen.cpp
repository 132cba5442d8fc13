#include "spinv/datagen.hpp"

#include "spinv/kernels.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace spinv {

Image Image::from_vector(const Vec& v, int h, int w)
{
    require_dim("image from vector", long(h) * w, v.size());
    Image img(h, w);
    std::copy(v.data(), v.data() + v.size(), img.pixels.begin());
    return img;
}

Image Image::crop(int row, int col, int h, int w) const
{
    if (row < 0 || col < 0 || row + h > height || col + w > width)
        throw Error(fmt::format("crop {}x{} at ({}, {}) outside {}x{} image", h, w, row, col, height, width));
    Image out(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) out.at(r, c) = at(row + r, col + c);
    return out;
}

void ToyConfig::validate() const
{
    if (size < 2) throw Error("toy patch size must be at least 2");
    if (n_orientations < 1 || n_positions < 1) throw Error("toy config needs orientations and positions");
    if (!(line_prob > 0.0 && line_prob < 1.0)) throw Error("toy line probability must lie in (0, 1)");
}

std::vector<Patch> toy_templates(const ToyConfig& cfg)
{
    cfg.validate();
    const double center = 0.5 * (cfg.size - 1);
    std::vector<Patch> out;
    for (int o = 0; o < cfg.n_orientations; ++o) {
        const double phi = o * std::numbers::pi / cfg.n_orientations;
        const double nx = -std::sin(phi);
        const double ny = std::cos(phi);
        const double major = std::max(std::abs(nx), std::abs(ny));
        const double spacing = 2.0 * major;
        // Axis-aligned lines on an even grid would otherwise fall between pixel centers.
        const bool axis = std::abs(major - 1.0) < 1e-12;
        const double shift = axis && cfg.size % 2 == 0 && cfg.n_positions % 2 == 0 ? 0.5 : 0.0;
        for (int p = 0; p < cfg.n_positions; ++p) {
            const double offset = (p - 0.5 * (cfg.n_positions - 1)) * spacing + shift;
            Patch t(cfg.size, cfg.size);
            for (int r = 0; r < cfg.size; ++r)
                for (int c = 0; c < cfg.size; ++c) {
                    const double s = nx * (c - center) + ny * (r - center);
                    if (std::abs(s - offset) < 0.5 * major - 1e-9) t.at(r, c) = 1.0;
                }
            out.push_back(std::move(t));
        }
    }
    return out;
}

ToyPatch gen_toy_patch(const ToyConfig& cfg, Rng& rng)
{
    cfg.validate();
    const auto templates = toy_templates(cfg);
    std::uniform_int_distribution<int> pick(0, cfg.n_orientations - 1);
    std::bernoulli_distribution present(cfg.line_prob);
    ToyPatch out{Patch(cfg.size, cfg.size), pick(rng), std::vector<bool>(std::size_t(cfg.n_positions))};
    for (int p = 0; p < cfg.n_positions; ++p) {
        if (!present(rng)) continue;
        out.lines[p] = true;
        const Patch& t = templates[std::size_t(out.orientation * cfg.n_positions + p)];
        for (std::size_t i = 0; i < t.pixels.size(); ++i) out.patch.pixels[i] += t.pixels[i];
    }
    return out;
}

Image subtract_local_mean(const Image& image, const PreprocessOptions& opts)
{
    const auto stencil = kernels::gaussian_stencil(opts.sigma, opts.radius);
    Image out(image.height, image.width);
    kernels::local_deviation(image.pixels, image.height, image.width, stencil, out.pixels);
    return out;
}

Image preprocess(const Image& image, const PreprocessOptions& opts)
{
    for (double v : image.pixels)
        if (!std::isfinite(v)) throw Error("preprocess: non-finite pixel");
    const auto stencil = kernels::gaussian_stencil(opts.sigma, opts.radius);
    Image centered(image.height, image.width);
    kernels::local_deviation(image.pixels, image.height, image.width, stencil, centered.pixels);
    std::vector<double> spread(image.pixels.size());
    kernels::local_rms(centered.pixels, image.height, image.width, stencil, spread);

    const Vec flat = image.as_vector();
    const double global_std =
        flat.size() > 0 ? std::sqrt((flat.array() - flat.mean()).square().mean()) : 0.0;
    const double cutoff = opts.cutoff_ratio * global_std;
    for (std::size_t i = 0; i < spread.size(); ++i) {
        const double d = std::max(spread[i], cutoff);
        centered.pixels[i] = d > 0.0 ? centered.pixels[i] / d : 0.0;
    }
    return centered;
}

PatchSequence extract_sequences(const Image& image, const SequenceOptions& opts, Rng& rng)
{
    if (opts.window < 1 || opts.frames < 1) throw Error("sequence window and frame count must be positive");
    if (!(opts.mag_lo >= 0.0 && opts.mag_lo <= opts.mag_hi)) throw Error("need 0 <= mag_lo <= mag_hi");
    const int travel = int(std::ceil((opts.frames - 1) * opts.mag_hi + 0.5));
    if (image.height < opts.window + travel || image.width < opts.window + travel)
        throw Error(fmt::format("image {}x{} too small for window {} plus travel {}", image.height, image.width,
                                opts.window, travel));

    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> magnitude(opts.mag_lo, opts.mag_hi);
    const double theta = angle(rng);
    const double m = magnitude(rng);
    PatchSequence seq;
    seq.dx = m * std::cos(theta);
    seq.dy = m * std::sin(theta);

    std::vector<int> off_r;
    std::vector<int> off_c;
    for (int t = 0; t < opts.frames; ++t) {
        const double steps = opts.cumulative ? t : std::min(t, 1);
        off_c.push_back(int(std::lround(steps * seq.dx)));
        off_r.push_back(int(std::lround(steps * seq.dy)));
    }
    const auto [rmin, rmax] = std::minmax_element(off_r.begin(), off_r.end());
    const auto [cmin, cmax] = std::minmax_element(off_c.begin(), off_c.end());
    std::uniform_int_distribution<int> base_r(-*rmin, image.height - opts.window - *rmax);
    std::uniform_int_distribution<int> base_c(-*cmin, image.width - opts.window - *cmax);
    const int r0 = base_r(rng);
    const int c0 = base_c(rng);
    for (int t = 0; t < opts.frames; ++t)
        seq.frames.push_back(image.crop(r0 + off_r[t], c0 + off_c[t], opts.window, opts.window));
    return seq;
}

double edge_value(double b, double theta, double k, double x, double y)
{
    const double v = k * (std::cos(theta) * x + std::sin(theta) * y) + k * b;
    return std::exp(-0.25 * v * v) * std::sin(v);
}

Patch edge_stimulus(double b, double theta, double k, int size)
{
    if (!(k > 0.0)) throw Error("edge stimulus needs k > 0");
    const double center = 0.5 * (size - 1);
    Patch p(size, size);
    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c) p.at(r, c) = edge_value(b, theta, k, c - center, r - center);
    return p;
}

Image synthetic_image(int size, Rng& rng)
{
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Image img(size, size, unit(rng));
    const int shapes = 6 + size * size / 400;
    for (int s = 0; s < shapes; ++s) {
        const double cx = unit(rng) * size;
        const double cy = unit(rng) * size;
        const double half_w = 2.0 + unit(rng) * size * 0.3;
        const double half_h = 2.0 + unit(rng) * size * 0.3;
        const double phi = unit(rng) * std::numbers::pi;
        const double value = unit(rng);
        const double cs = std::cos(phi);
        const double sn = std::sin(phi);
        for (int r = 0; r < size; ++r)
            for (int c = 0; c < size; ++c) {
                const double dx = c - cx;
                const double dy = r - cy;
                const double u = cs * dx + sn * dy;
                const double v = -sn * dx + cs * dy;
                if (std::abs(u) <= half_w && std::abs(v) <= half_h) img.at(r, c) = value;
            }
    }
    return img;
}

// ---- I/O ---------------------------------------------------------------------

namespace {

std::string next_token(std::istream& in)
{
    std::string tok;
    while (in >> std::ws && in.peek() == '#') {
        std::string comment;
        std::getline(in, comment);
    }
    in >> tok;
    return tok;
}

}  // namespace

Image read_pgm(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(fmt::format("cannot open {}", path));
    if (next_token(in) != "P5") throw Error(fmt::format("{}: not a binary PGM (P5)", path));
    int w = 0;
    int h = 0;
    int maxval = 0;
    try {
        w = std::stoi(next_token(in));
        h = std::stoi(next_token(in));
        maxval = std::stoi(next_token(in));
    } catch (const std::exception&) {
        throw Error(fmt::format("{}: malformed PGM header", path));
    }
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw Error(fmt::format("{}: bad PGM header", path));
    in.get();
    const int bytes = maxval < 256 ? 1 : 2;
    std::vector<unsigned char> raw(std::size_t(w) * h * bytes);
    in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
    if (in.gcount() != std::streamsize(raw.size())) throw Error(fmt::format("{}: truncated PGM data", path));
    Image img(h, w);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        const int v = bytes == 1 ? raw[i] : (raw[2 * i] << 8) | raw[2 * i + 1];
        img.pixels[i] = double(v) / maxval;
    }
    return img;
}

void write_pgm(const std::string& path, const Image& image, double lo, double hi)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(fmt::format("cannot write {}", path));
    out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
    std::vector<unsigned char> raw(image.pixels.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const double t = hi > lo ? (image.pixels[i] - lo) / (hi - lo) : 0.5;
        raw[i] = static_cast<unsigned char>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
    }
    out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
}

void write_pgm(const std::string& path, const Image& image)
{
    const auto [lo, hi] = std::minmax_element(image.pixels.begin(), image.pixels.end());
    write_pgm(path, image, image.pixels.empty() ? 0.0 : *lo, image.pixels.empty() ? 1.0 : *hi);
}

void write_csv(const std::string& path, const Image& image)
{
    std::ofstream out(path);
    if (!out) throw Error(fmt::format("cannot write {}", path));
    for (int r = 0; r < image.height; ++r) {
        for (int c = 0; c < image.width; ++c) out << (c ? "," : "") << fmt::format("{:.17g}", image.at(r, c));
        out << '\n';
    }
}

Image mosaic(const std::vector<Patch>& patches, int columns)
{
    if (patches.empty()) return Image(1, 1, 0.5);
    columns = std::max(1, std::min(columns, int(patches.size())));
    const int rows = (int(patches.size()) + columns - 1) / columns;
    const int ph = patches[0].height;
    const int pw = patches[0].width;
    Image out(rows * (ph + 1) + 1, columns * (pw + 1) + 1, 0.0);
    for (std::size_t i = 0; i < patches.size(); ++i) {
        const Patch& p = patches[i];
        double scale = 0.0;
        for (double v : p.pixels) scale = std::max(scale, std::abs(v));
        const int r0 = int(i) / columns * (ph + 1) + 1;
        const int c0 = int(i) % columns * (pw + 1) + 1;
        for (int r = 0; r < ph; ++r)
            for (int c = 0; c < pw; ++c)
                out.at(r0 + r, c0 + c) = 0.5 + (scale > 0.0 ? 0.5 * p.at(r, c) / scale : 0.0);
    }
    return out;
}

}  // namespace spinv
