#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "intra/dataset.hpp"
#include "intra/image.hpp"

namespace intra {

/// SplitMix64 finaliser; derives independent stream seeds from (seed, index).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

enum class DefectKind { phase, intensity };

inline std::string defect_name(DefectKind k) { return k == DefectKind::phase ? "phase" : "intensity"; }

struct DefectiveRender {
    Image image;
    Image clean;  // the same draw without the defect
    Mask mask;    // pixels where image and clean differ
    DefectKind kind;
};

/// A texture family: 2 or 3 oriented sinusoids, low-amplitude value noise and
/// a per-channel tint. Each image of the family draws its own value noise and
/// jitters every wave phase by up to +-phase_jitter radians around the family
/// phase; outputs are quantised to 8 bits.
class SyntheticTexture {
   public:
    static constexpr double kNoiseAmplitude = 0.04;
    static constexpr std::size_t kNoiseCell = 8;
    static constexpr double kWaveAmplitude = 0.35;

    static constexpr double kDefaultPhaseJitter = 0.5;

    SyntheticTexture(std::uint64_t seed, std::size_t size, std::size_t channels = 3, double phase_jitter = kDefaultPhaseJitter)
        : size_(size), channels_(channels), jitter_(phase_jitter) {
        if (size == 0) throw ValueError("SyntheticTexture: size must be positive");
        if (channels != 1 && channels != 3) throw ValueError("SyntheticTexture: channels must be 1 or 3");
        std::mt19937_64 rng(derive_seed(seed, 0));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const std::size_t n = 2 + (u(rng) < 0.5 ? 0 : 1);
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double angle = u(rng) * std::numbers::pi;
            const double cycles = 3.0 + 4.0 * u(rng);
            const double k = 2.0 * std::numbers::pi * cycles / static_cast<double>(size);
            const double amp = 0.5 + 0.5 * u(rng);
            waves_.push_back({k * std::cos(angle), k * std::sin(angle), amp, 2.0 * std::numbers::pi * u(rng)});
            total += amp;
        }
        for (auto& w : waves_) w.amp /= total;
        for (std::size_t c = 0; c < channels; ++c) {
            gain_[c] = 0.7 + 0.3 * u(rng);
            offset_[c] = 0.1 * u(rng);
        }
    }

    std::size_t size() const { return size_; }
    std::size_t channels() const { return channels_; }

    Image render(std::uint64_t image_seed) const {
        const Draw d = draw(image_seed);
        return render_with(d, nullptr);
    }

    /// One draw of the family with a single elliptical or rectangular defect
    /// covering 1-5% of the area. Redraws the region until the mean absolute
    /// change inside the mask is at least 0.1.
    DefectiveRender render_defective(std::uint64_t image_seed, DefectKind kind) const {
        const Draw d = draw(image_seed);
        const Image clean = render_with(d, nullptr);
        std::mt19937_64 rng(derive_seed(image_seed, 1));
        for (int attempt = 0; attempt < 1000; ++attempt) {
            const Region r = draw_region(rng, kind);
            DefectiveRender out{render_with(d, &r), clean, Mask(size_, size_), kind};
            double delta = 0.0;
            std::size_t count = 0;
            for (std::size_t i = 0; i < out.mask.data.size(); ++i) {
                double px = 0.0;
                bool differs = false;
                for (std::size_t c = 0; c < channels_; ++c) {
                    const float a = out.image.data[i * channels_ + c], b = clean.data[i * channels_ + c];
                    differs |= a != b;
                    px += std::abs(static_cast<double>(a) - static_cast<double>(b));
                }
                if (!differs) continue;
                out.mask.data[i] = 1;
                delta += px / static_cast<double>(channels_);
                ++count;
            }
            if (count > 0 && delta / static_cast<double>(count) >= 0.1) return out;
        }
        throw ValueError("SyntheticTexture: could not place a visible defect");
    }

   private:
    struct Wave {
        double kx, ky, amp, phase;
    };
    struct Draw {
        std::vector<double> phase;
        std::vector<double> lattice;  // (cells + 2)^2 values in [-1, 1]
        std::size_t cells;
    };
    struct Region {
        double cx, cy, a, b, cos_t, sin_t;
        bool ellipse;
        DefectKind kind;
        double shift;  // phase offset or intensity offset

        bool contains(double x, double y) const {
            const double dx = x - cx, dy = y - cy;
            const double p = cos_t * dx + sin_t * dy, q = -sin_t * dx + cos_t * dy;
            if (ellipse) return (p * p) / (a * a) + (q * q) / (b * b) <= 1.0;
            return std::abs(p) <= a && std::abs(q) <= b;
        }
    };

    Draw draw(std::uint64_t image_seed) const {
        std::mt19937_64 rng(derive_seed(image_seed, 0));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        Draw d;
        for (const auto& w : waves_) d.phase.push_back(w.phase + jitter_ * (2.0 * u(rng) - 1.0));
        d.cells = (size_ + kNoiseCell - 1) / kNoiseCell;
        d.lattice.resize((d.cells + 2) * (d.cells + 2));
        for (auto& v : d.lattice) v = 2.0 * u(rng) - 1.0;
        return d;
    }

    Region draw_region(std::mt19937_64& rng, DefectKind kind) const {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const double s = static_cast<double>(size_);
        const double area = (0.01 + 0.04 * u(rng)) * s * s;
        const double aspect = std::exp(std::log(0.5) + u(rng) * (std::log(2.0) - std::log(0.5)));
        const bool ellipse = u(rng) < 0.5;
        const double theta = u(rng) * std::numbers::pi;
        Region r{};
        r.ellipse = ellipse;
        if (ellipse) {
            r.a = std::sqrt(area * aspect / std::numbers::pi);
            r.b = std::sqrt(area / (aspect * std::numbers::pi));
        } else {
            r.a = std::sqrt(area * aspect) / 2.0;
            r.b = std::sqrt(area / aspect) / 2.0;
        }
        const double reach = ellipse ? std::max(r.a, r.b) : std::hypot(r.a, r.b);
        const double lo = reach, hi = s - 1.0 - reach;
        r.cx = lo + (hi - lo) * u(rng);
        r.cy = lo + (hi - lo) * u(rng);
        r.cos_t = std::cos(theta);
        r.sin_t = std::sin(theta);
        r.kind = kind;
        const double sign = u(rng) < 0.5 ? -1.0 : 1.0;
        r.shift = kind == DefectKind::phase ? sign * (0.6 + 0.4 * u(rng)) * std::numbers::pi : sign * (0.2 + 0.15 * u(rng));
        return r;
    }

    double noise(const Draw& d, double x, double y) const {
        const double gx = x / kNoiseCell, gy = y / kNoiseCell;
        const auto ix = static_cast<std::size_t>(gx), iy = static_cast<std::size_t>(gy);
        auto smooth = [](double t) { return t * t * (3.0 - 2.0 * t); };
        const double tx = smooth(gx - static_cast<double>(ix)), ty = smooth(gy - static_cast<double>(iy));
        const std::size_t w = d.cells + 2;
        auto at = [&](std::size_t r, std::size_t c) { return d.lattice[r * w + c]; };
        const double top = (1 - tx) * at(iy, ix) + tx * at(iy, ix + 1);
        const double bot = (1 - tx) * at(iy + 1, ix) + tx * at(iy + 1, ix + 1);
        return (1 - ty) * top + ty * bot;
    }

    Image render_with(const Draw& d, const Region* defect) const {
        Image img(size_, size_, channels_);
        for (std::size_t y = 0; y < size_; ++y) {
            for (std::size_t x = 0; x < size_; ++x) {
                const double fx = static_cast<double>(x), fy = static_cast<double>(y);
                const bool inside = defect && defect->contains(fx, fy);
                const double dphi = inside && defect->kind == DefectKind::phase ? defect->shift : 0.0;
                double wave = 0.0;
                for (std::size_t i = 0; i < waves_.size(); ++i)
                    wave += waves_[i].amp * std::sin(waves_[i].kx * fx + waves_[i].ky * fy + d.phase[i] + dphi);
                double v = 0.5 + kWaveAmplitude * wave + kNoiseAmplitude * noise(d, fx, fy);
                for (std::size_t c = 0; c < channels_; ++c) {
                    double pc = offset_[c] + gain_[c] * v;
                    if (inside && defect->kind == DefectKind::intensity) pc += defect->shift;
                    pc = std::clamp(pc, 0.0, 1.0);
                    img.at(y, x, c) = static_cast<float>(std::lround(pc * 255.0)) / 255.0f;
                }
            }
        }
        return img;
    }

    std::size_t size_, channels_;
    double jitter_;
    std::vector<Wave> waves_;
    std::array<double, 3> gain_{1.0, 1.0, 1.0}, offset_{0.0, 0.0, 0.0};
};

/// Seed-determined synthetic category: one texture family, normal training
/// and test draws, and defective test draws alternating phase and intensity
/// defects.
inline Dataset generate_synthetic(std::uint64_t seed, std::size_t n_train, std::size_t n_test_normal, std::size_t n_test_defect,
                                  std::size_t size, std::size_t channels = 3, double phase_jitter = SyntheticTexture::kDefaultPhaseJitter) {
    const SyntheticTexture tex(seed, size, channels, phase_jitter);
    Dataset ds;
    ds.category = "synthetic";
    auto name = [](std::size_t i) {
        std::string s = std::to_string(i);
        return std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
    };
    std::uint64_t draw = 1;
    auto base = [&](std::string n, Image img) {
        Sample s;
        s.name = std::move(n);
        s.image = std::move(img);
        s.defect_type = "good";
        s.orig_height = s.orig_width = size;
        return s;
    };
    for (std::size_t i = 0; i < n_train; ++i) ds.train.push_back(base(name(i), tex.render(derive_seed(seed, draw++))));
    for (std::size_t i = 0; i < n_test_normal; ++i) ds.test.push_back(base("good/" + name(i), tex.render(derive_seed(seed, draw++))));
    for (std::size_t i = 0; i < n_test_defect; ++i) {
        const DefectKind kind = i % 2 == 0 ? DefectKind::phase : DefectKind::intensity;
        DefectiveRender r = tex.render_defective(derive_seed(seed, draw++), kind);
        Sample s = base(defect_name(kind) + "/" + name(i), std::move(r.image));
        s.defect_type = defect_name(kind);
        s.anomalous = true;
        s.mask = std::move(r.mask);
        ds.test.push_back(std::move(s));
    }
    return ds;
}

}  // namespace intra
