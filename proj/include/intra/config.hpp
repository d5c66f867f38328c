#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "intra/errors.hpp"
#include "intra/model.hpp"
#include "intra/similarity.hpp"

namespace intra {

enum class Augmentation { none, dihedral, rotate };

inline std::string augmentation_name(Augmentation a) {
    switch (a) {
        case Augmentation::none: return "none";
        case Augmentation::rotate: return "rotate";
        default: return "dihedral";
    }
}

/// Flat run configuration. Defaults reproduce the full-size setup.
struct RunConfig {
    std::size_t image_size = 256;
    std::size_t patch_size = 16;
    std::size_t window_side = 7;
    std::size_t latent_dim = 512;
    std::size_t num_blocks = 13;
    std::size_t num_heads = 8;
    bool use_mfsa = true;
    bool use_long_residuals = true;
    double alpha = 0.01;
    double beta = 0.01;
    double lr = 1e-4;
    std::size_t batch_size = 256;
    std::size_t windows_per_image = 600;
    std::size_t patience = 50;
    std::size_t max_epochs = 1000;
    std::uint64_t seed = 1;
    std::size_t workers = 1;
    bool deterministic = false;
    Augmentation augment = Augmentation::dihedral;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;

    ModelConfig model(std::size_t channels = 3) const {
        ModelConfig m;
        m.image_size = image_size;
        m.patch_size = patch_size;
        m.window_side = window_side;
        m.latent_dim = latent_dim;
        m.num_blocks = num_blocks;
        m.num_heads = num_heads;
        m.channels = channels;
        m.use_mfsa = use_mfsa;
        m.use_long_residuals = use_long_residuals;
        return m;
    }

    LossWeights loss_weights() const { return {alpha, beta}; }

    /// Worker count actually used: one when deterministic.
    std::size_t effective_workers() const { return deterministic ? 1 : std::max<std::size_t>(1, workers); }

    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;
    static const std::vector<std::string>& keys();

    /// One `key = value` line per key, in a fixed order.
    std::string to_text() const {
        std::string out;
        for (const auto& k : keys()) out += k + " = " + get(k) + "\n";
        return out;
    }

    /// Applies `key = value` lines on top of the current values. `#` starts a
    /// comment; blank lines are ignored; unknown keys are rejected.
    void apply_text(std::string_view text, const std::string& source = "config") {
        std::istringstream in{std::string(text)};
        std::string line;
        for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
            if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
            const std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            const auto eq = trimmed.find('=');
            if (eq == std::string::npos) throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
            try {
                set(trim(trimmed.substr(0, eq)), trim(trimmed.substr(eq + 1)));
            } catch (const ConfigError& e) {
                throw ConfigError(source + ":" + std::to_string(line_no) + ": " + e.what());
            }
        }
    }

    static RunConfig parse(std::string_view text, const std::string& source = "config") {
        RunConfig c;
        c.apply_text(text, source);
        return c;
    }

    static RunConfig load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config '" + path.string() + "'");
        std::stringstream ss;
        ss << in.rdbuf();
        return parse(ss.str(), path.string());
    }

    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return {};
        return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    }
};

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& v) {
    T out{};
    const auto* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end || v.empty()) throw ConfigError("'" + key + "': cannot parse '" + v + "'");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("'" + key + "': expected true or false, got '" + v + "'");
}

inline std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

struct ConfigField {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

template <class T>
ConfigField size_field(std::string key, T RunConfig::*m) {
    return {key, [m](const RunConfig& c) { return std::to_string(c.*m); },
            [key, m](RunConfig& c, const std::string& v) {
                if (!v.empty() && v[0] == '-') throw ConfigError("'" + key + "' must be non-negative");
                c.*m = parse_number<T>(key, v);
            }};
}

inline ConfigField real_field(std::string key, double RunConfig::*m) {
    return {key, [m](const RunConfig& c) { return format_double(c.*m); },
            [key, m](RunConfig& c, const std::string& v) {
                const double x = parse_number<double>(key, v);
                if (!std::isfinite(x) || x < 0.0) throw ConfigError("'" + key + "' must be finite and non-negative");
                c.*m = x;
            }};
}

inline ConfigField bool_field(std::string key, bool RunConfig::*m) {
    return {key, [m](const RunConfig& c) { return std::string(c.*m ? "true" : "false"); },
            [key, m](RunConfig& c, const std::string& v) { c.*m = parse_bool(key, v); }};
}

inline const std::vector<ConfigField>& config_fields() {
    static const std::vector<ConfigField> fields = {
        size_field("image_size", &RunConfig::image_size),
        size_field("patch_size", &RunConfig::patch_size),
        size_field("window_side", &RunConfig::window_side),
        size_field("latent_dim", &RunConfig::latent_dim),
        size_field("num_blocks", &RunConfig::num_blocks),
        size_field("num_heads", &RunConfig::num_heads),
        bool_field("use_mfsa", &RunConfig::use_mfsa),
        bool_field("use_long_residuals", &RunConfig::use_long_residuals),
        real_field("alpha", &RunConfig::alpha),
        real_field("beta", &RunConfig::beta),
        real_field("lr", &RunConfig::lr),
        size_field("batch_size", &RunConfig::batch_size),
        size_field("windows_per_image", &RunConfig::windows_per_image),
        size_field("patience", &RunConfig::patience),
        size_field("max_epochs", &RunConfig::max_epochs),
        size_field("seed", &RunConfig::seed),
        size_field("workers", &RunConfig::workers),
        bool_field("deterministic", &RunConfig::deterministic),
        {"augment", [](const RunConfig& c) { return augmentation_name(c.augment); },
         [](RunConfig& c, const std::string& v) {
             if (v == "none") c.augment = Augmentation::none;
             else if (v == "dihedral") c.augment = Augmentation::dihedral;
             else if (v == "rotate") c.augment = Augmentation::rotate;
             else throw ConfigError("'augment': expected none, dihedral or rotate, got '" + v + "'");
         }},
    };
    return fields;
}

inline const ConfigField& config_field(const std::string& key) {
    for (const auto& f : config_fields())
        if (f.key == key) return f;
    throw ConfigError("unknown key '" + key + "'");
}

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& value) { detail::config_field(key).set(*this, value); }

inline std::string RunConfig::get(const std::string& key) const { return detail::config_field(key).get(*this); }

inline const std::vector<std::string>& RunConfig::keys() {
    static const std::vector<std::string> k = [] {
        std::vector<std::string> out;
        for (const auto& f : detail::config_fields()) out.push_back(f.key);
        return out;
    }();
    return k;
}

}  // namespace intra
