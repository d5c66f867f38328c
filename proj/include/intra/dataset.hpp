#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "intra/errors.hpp"
#include "intra/image.hpp"
#include "intra/parallel.hpp"
#include "intra/png_io.hpp"

namespace intra {

namespace fs = std::filesystem;

struct Sample {
    std::string name;         // "<defect>/<stem>" for test images, "<stem>" for training images
    Image image;              // working resolution, 3 channels
    bool anomalous = false;
    std::string defect_type;  // "good" for normal images
    std::optional<Mask> mask; // original resolution; absent for normal images
    std::size_t orig_height = 0;
    std::size_t orig_width = 0;

    /// Ground truth at original resolution; all zero for normal images.
    Mask ground_truth() const { return mask ? *mask : Mask(orig_height, orig_width); }
};

struct Dataset {
    std::string category;
    std::vector<Sample> train;
    std::vector<Sample> test;

    std::vector<Image> train_images() const {
        std::vector<Image> out;
        out.reserve(train.size());
        for (const auto& s : train) out.push_back(s.image);
        return out;
    }
};

/// Single-channel images become three identical channels.
inline Image to_rgb(Image img) {
    if (img.channels == 3) return img;
    if (img.channels != 1) throw FormatError("to_rgb: unsupported channel count " + std::to_string(img.channels), 0);
    Image out(img.height, img.width, 3);
    for (std::size_t i = 0; i < img.pixels(); ++i)
        for (std::size_t c = 0; c < 3; ++c) out.data[i * 3 + c] = img.data[i];
    return out;
}

namespace detail {

inline void require_dir(const fs::path& p) {
    if (!fs::is_directory(p)) throw IoError("missing directory '" + p.string() + "'");
}

/// Regular *.png files sorted by the bytes of their file names.
inline std::vector<fs::path> list_png(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
    std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
    return out;
}

inline std::vector<std::string> list_subdirs(const fs::path& dir) {
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) out.push_back(e.path().filename().string());
    std::sort(out.begin(), out.end());
    return out;
}

inline Sample load_sample(const fs::path& file, std::string name, std::size_t size) {
    Image raw = to_rgb(read_png(file));
    Sample s;
    s.name = std::move(name);
    s.orig_height = raw.height;
    s.orig_width = raw.width;
    s.image = resize_bilinear(raw, size, size);
    return s;
}

}  // namespace detail

/// Reads `<root>/<category>` in the MVTec AD layout. Images are resized to
/// size x size; masks stay at original resolution. Files are visited in
/// byte-lexicographic order, so two loads give identical datasets.
inline Dataset load_category(const fs::path& root, const std::string& category, std::size_t size, std::size_t workers = 1) {
    if (size == 0) throw ValueError("load_category: working size must be positive");
    const fs::path base = root / category;
    detail::require_dir(base);
    detail::require_dir(base / "train" / "good");
    detail::require_dir(base / "test");

    struct Job {
        fs::path image;
        std::optional<fs::path> mask;
        std::string name, defect;
        bool train;
    };
    std::vector<Job> jobs;
    for (const auto& f : detail::list_png(base / "train" / "good")) jobs.push_back({f, std::nullopt, f.stem().string(), "good", true});
    for (const auto& defect : detail::list_subdirs(base / "test")) {
        const auto images = detail::list_png(base / "test" / defect);
        if (defect == "good") {
            for (const auto& f : images) jobs.push_back({f, std::nullopt, "good/" + f.stem().string(), "good", false});
            continue;
        }
        const fs::path gt = base / "ground_truth" / defect;
        if (!images.empty()) detail::require_dir(gt);
        for (const auto& f : images) {
            const fs::path m = gt / (f.stem().string() + "_mask.png");
            if (!fs::is_regular_file(m)) throw IoError("missing mask '" + m.string() + "' for image '" + f.string() + "'");
            jobs.push_back({f, m, defect + "/" + f.stem().string(), defect, false});
        }
        if (fs::is_directory(gt)) {
            for (const auto& m : detail::list_png(gt)) {
                std::string stem = m.stem().string();
                const std::string suffix = "_mask";
                if (stem.size() > suffix.size() && stem.ends_with(suffix)) stem.resize(stem.size() - suffix.size());
                const fs::path img = base / "test" / defect / (stem + ".png");
                if (!fs::is_regular_file(img)) throw IoError("mask '" + m.string() + "' has no image '" + img.string() + "'");
            }
        }
    }
    if (std::none_of(jobs.begin(), jobs.end(), [](const Job& j) { return j.train; }))
        throw IoError("no training images in '" + (base / "train" / "good").string() + "'");

    std::vector<Sample> samples(jobs.size());
    parallel_for(jobs.size(), workers, [&](std::size_t i) {
        const Job& j = jobs[i];
        Sample s = detail::load_sample(j.image, j.name, size);
        s.defect_type = j.defect;
        if (j.mask) {
            Mask m = read_mask(*j.mask);
            if (m.height != s.orig_height || m.width != s.orig_width)
                throw ShapeError("mask '" + j.mask->string() + "' is " + shape_str({m.height, m.width}) + " but its image is " + shape_str({s.orig_height, s.orig_width}));
            s.mask = std::move(m);
            s.anomalous = true;
        }
        samples[i] = std::move(s);
    });

    Dataset ds;
    ds.category = category;
    for (std::size_t i = 0; i < jobs.size(); ++i) (jobs[i].train ? ds.train : ds.test).push_back(std::move(samples[i]));
    return ds;
}

/// Writes a dataset in the same layout load_category reads, at working
/// resolution. Existing files with the same names are overwritten.
inline void write_dataset(const fs::path& root, const Dataset& ds) {
    const fs::path base = root / ds.category;
    fs::create_directories(base / "train" / "good");
    fs::create_directories(base / "test" / "good");
    for (const auto& s : ds.train) write_png(base / "train" / "good" / (s.name + ".png"), s.image);
    for (const auto& s : ds.test) {
        const fs::path rel(s.name);
        const std::string stem = rel.filename().string();
        fs::create_directories(base / "test" / s.defect_type);
        write_png(base / "test" / s.defect_type / (stem + ".png"), s.image);
        if (s.mask) {
            fs::create_directories(base / "ground_truth" / s.defect_type);
            write_mask(base / "ground_truth" / s.defect_type / (stem + "_mask.png"), *s.mask);
        }
    }
}

}  // namespace intra
