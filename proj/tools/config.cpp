#include "config.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace spinv::cli {

const std::vector<KeySpec>& config_keys()
{
    static const std::vector<KeySpec> keys = {
        {"seed", "1", "master seed; every random stream derives from it", "chosen"},
        {"out", "out", "output directory", "chosen"},
        {"mode", "split", "training: split (two stages) or unified (joint)", "published: both regimes"},
        {"scale", "desk", "desk (100/25 units) or paper (400/100 units) when dims are not set", "chosen"},
        {"code_dim", "100", "simple units (scale=paper: 400)", "published 400, desk-scale 100"},
        {"inv_dim", "25", "invariant units (scale=paper: 100)", "published 100, desk-scale 25"},
        {"alpha", "0.5", "sparsity of the simple-unit code", "published"},
        {"beta", "0.3", "sparsity of the invariant code", "published"},
        {"learning_rate", "0.01", "SGD rate rate_0 for training on image sequences", "chosen"},
        {"decay", "10000", "rate_k = rate_0 / (1 + k / decay); 0 disables", "chosen"},
        {"epochs", "1", "passes over the training set (0 = untrained)", "chosen"},
        {"batch", "1", "samples per update (1 = pure stochastic)", "chosen"},
        {"max_iter", "200", "inference iterations per solve", "chosen"},
        {"tol", "1e-6", "relative energy change that ends a solve", "chosen"},
        {"L0", "1", "initial Lipschitz estimate", "chosen"},
        {"eta", "2", "backtracking factor", "chosen"},
        {"momentum", "auto", "auto | none | fista | capped (auto: fista on convex solves, none on the joint energy)",
         "chosen"},
        {"momentum_cap", "0.9", "momentum ratio cap for momentum=capped", "chosen"},
        {"toy_size", "20", "toy patch side", "chosen"},
        {"toy_orientations", "4", "line orientations", "published"},
        {"toy_positions", "10", "line positions per orientation", "published"},
        {"toy_line_prob", "0.2", "probability of each line of the drawn orientation", "published"},
        {"toy_code_dim", "64", "simple units for the toy run", "chosen"},
        {"toy_inv_dim", "4", "invariant units for the toy run", "chosen"},
        {"toy_train", "6000", "toy training patches", "chosen"},
        {"toy_eval", "400", "fresh toy patches for purity scoring", "chosen"},
        {"toy_learning_rate", "0.05", "SGD rate for the toy and in-painting runs", "chosen"},
        {"top_k", "9", "simple units listed per invariant unit in the grouping report", "chosen"},
        {"images", "", "comma-separated PGM files; synthetic images when empty", "chosen"},
        {"synthetic_size", "96", "side of each synthetic image", "chosen"},
        {"synthetic_count", "8", "number of synthetic images", "chosen"},
        {"sequences", "4000", "training sequences", "chosen"},
        {"window", "20", "patch side", "published"},
        {"frames", "3", "frames per sequence", "published"},
        {"mag_lo", "1", "smallest per-frame displacement (pixels)", "chosen"},
        {"mag_hi", "2", "largest per-frame displacement (pixels)", "chosen"},
        {"cumulative", "true", "frame t is displaced t times (else once)", "chosen"},
        {"sigma", "2.25", "Gaussian std of the local normalization (9x9 support)", "published width 9"},
        {"radius", "4", "normalization stencil radius", "published width 9"},
        {"cutoff", "0.01", "contrast floor relative to the image std", "chosen"},
        {"model", "", "model file (train: output, default <out>/model.bin; responses: input)", "chosen"},
        {"resume", "", "train: continue from this model file", "chosen"},
        {"simple_units", "all", "responses: all | none | comma-separated ids", "chosen"},
        {"invariant_units", "all", "responses: all | none | comma-separated ids", "chosen"},
        {"b_min", "-10", "smallest edge offset", "chosen"},
        {"b_max", "10", "largest edge offset", "chosen"},
        {"b_steps", "41", "edge offsets sampled", "chosen"},
        {"theta_steps", "36", "orientations sampled in [0, pi)", "chosen"},
        {"k", "1", "edge stimulus frequency", "published"},
        {"min_ratio", "1.5", "required invariant/simple median width ratio", "chosen"},
        {"beta_sweep", "", "comma-separated betas; retrains layer 2 per value and reports overlap", "published list"},
        {"bench_instances", "100", "random problems per family", "chosen"},
        {"bench_rows", "32", "largest dictionary rows", "chosen"},
        {"bench_cols", "64", "largest dictionary columns", "chosen"},
        {"bench_iters", "500", "iterations traced per rate check", "chosen"},
        {"lemma_samples", "1000", "sampled point pairs per descent-lemma family", "chosen"},
        {"mask_ratio", "0.3", "fraction of hidden pixels", "chosen"},
        {"inpaint_test", "200", "held-out patches", "chosen"},
        {"one_layer_model", "", "in-painting: one-layer model file (trained when empty)", "chosen"},
        {"unified_model", "", "in-painting: unified model file (trained when empty)", "chosen"},
    };
    return keys;
}

RunConfig::RunConfig()
{
    for (const KeySpec& k : config_keys()) values_[k.name] = k.fallback;
}

namespace {

std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse(const std::string& key, const std::string& text)
{
    T v{};
    const char* first = text.data();
    const char* last = first + text.size();
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || text.empty())
        throw ConfigError(fmt::format("{}: cannot parse '{}' as a number", key, text));
    return v;
}

std::vector<std::string> split(const std::string& text)
{
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

}  // namespace

void RunConfig::load_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot open config file {}", path));
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string body = trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw ConfigError(fmt::format("{}:{}: expected key=value", path, n));
        try {
            set(trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(fmt::format("{}:{}: {}", path, n, e.what()));
        }
    }
}

void RunConfig::set(const std::string& key, const std::string& value)
{
    if (!values_.count(key)) throw ConfigError(fmt::format("unknown key '{}'", key));
    values_[key] = value;
    explicit_[key] = true;
}

bool RunConfig::is_set(const std::string& key) const
{
    return explicit_.count(key) > 0;
}

const std::string& RunConfig::str(const std::string& key) const
{
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError(fmt::format("unknown key '{}'", key));
    return it->second;
}

double RunConfig::num(const std::string& key) const
{
    return parse<double>(key, str(key));
}

int RunConfig::integer(const std::string& key) const
{
    return parse<int>(key, str(key));
}

std::uint64_t RunConfig::u64(const std::string& key) const
{
    return parse<std::uint64_t>(key, str(key));
}

bool RunConfig::flag(const std::string& key) const
{
    const std::string& v = str(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(fmt::format("{}: expected true or false, got '{}'", key, v));
}

std::vector<double> RunConfig::num_list(const std::string& key) const
{
    std::vector<double> out;
    for (const std::string& item : split(str(key))) out.push_back(parse<double>(key, item));
    return out;
}

std::vector<std::string> RunConfig::str_list(const std::string& key) const
{
    return split(str(key));
}

std::string RunConfig::dump() const
{
    std::string out;
    for (const auto& [k, v] : values_) out += fmt::format("{}={}\n", k, v);
    return out;
}

}  // namespace spinv::cli
