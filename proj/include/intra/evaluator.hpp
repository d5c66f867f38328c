#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "intra/config.hpp"
#include "intra/dataset.hpp"
#include "intra/errors.hpp"
#include "intra/roc_auc.hpp"
#include "intra/scoring.hpp"

namespace intra {

struct ImageResult {
    std::string name;
    std::string defect_type;
    bool anomalous = false;
    double score = 0.0;
    std::optional<double> pixel_auc;  // only when the image's mask has both classes

    friend bool operator==(const ImageResult&, const ImageResult&) = default;
};

struct EvaluationReport {
    std::string category;
    std::optional<double> image_auc;  // undefined for a single-class test set
    std::optional<double> pixel_auc;  // pooled over every pixel of every test image
    std::optional<double> mean_image_pixel_auc;
    std::vector<ImageResult> images;
    double seconds = 0.0;
    std::string config_text;  // effective run configuration, one key = value per line

    friend bool operator==(const EvaluationReport&, const EvaluationReport&) = default;

    std::string to_text() const;
    static EvaluationReport parse(const std::string& text);

    std::string scores_csv() const {
        std::string out = "name,defect_type,label,score,pixel_auc\n";
        for (const auto& r : images)
            out += r.name + "," + r.defect_type + "," + (r.anomalous ? "1" : "0") + "," + detail::format_double(r.score) + "," +
                   (r.pixel_auc ? detail::format_double(*r.pixel_auc) : "undefined") + "\n";
        return out;
    }
};

namespace detail {

inline std::string format_optional(const std::optional<double>& v) { return v ? format_double(*v) : "undefined"; }

inline std::optional<double> parse_optional(const std::string& key, const std::string& v) {
    if (v == "undefined") return std::nullopt;
    return parse_number<double>(key, v);
}

inline std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace detail

/// Key-value text: one metric per line, then one `image` line per test image
/// (name,defect,label,score,pixel_auc) and the configuration as `config.<key>`.
/// Numbers use the shortest exact decimal form, so parse(to_text()) is lossless.
inline std::string EvaluationReport::to_text() const {
    std::ostringstream os;
    os << "category = " << category << '\n';
    os << "image_auc = " << detail::format_optional(image_auc) << '\n';
    os << "pixel_auc = " << detail::format_optional(pixel_auc) << '\n';
    os << "mean_image_pixel_auc = " << detail::format_optional(mean_image_pixel_auc) << '\n';
    std::size_t anomalous = 0;
    for (const auto& r : images) anomalous += r.anomalous;
    os << "test_images = " << images.size() << '\n';
    os << "anomalous_images = " << anomalous << '\n';
    os << "seconds = " << detail::format_double(seconds) << '\n';
    for (const auto& r : images)
        os << "image = " << r.name << ',' << r.defect_type << ',' << (r.anomalous ? 1 : 0) << ',' << detail::format_double(r.score) << ','
           << detail::format_optional(r.pixel_auc) << '\n';
    std::istringstream cfg(config_text);
    std::string line;
    while (std::getline(cfg, line))
        if (!RunConfig::trim(line).empty()) os << "config." << RunConfig::trim(line) << '\n';
    return os.str();
}

inline EvaluationReport EvaluationReport::parse(const std::string& text) {
    EvaluationReport r;
    std::istringstream in(text);
    std::string line;
    std::size_t offset = 0, expected_images = 0, expected_anomalous = 0;
    while (std::getline(in, line)) {
        const std::size_t at = offset;
        offset += line.size() + 1;
        if (RunConfig::trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("report: expected 'key = value'", at);
        const std::string key = RunConfig::trim(line.substr(0, eq)), value = RunConfig::trim(line.substr(eq + 1));
        try {
            if (key == "category") r.category = value;
            else if (key == "image_auc") r.image_auc = detail::parse_optional(key, value);
            else if (key == "pixel_auc") r.pixel_auc = detail::parse_optional(key, value);
            else if (key == "mean_image_pixel_auc") r.mean_image_pixel_auc = detail::parse_optional(key, value);
            else if (key == "test_images") expected_images = detail::parse_number<std::size_t>(key, value);
            else if (key == "anomalous_images") expected_anomalous = detail::parse_number<std::size_t>(key, value);
            else if (key == "seconds") r.seconds = detail::parse_number<double>(key, value);
            else if (key == "image") {
                const auto f = detail::split_csv(value);
                if (f.size() != 5) throw FormatError("report: image line needs 5 fields", at);
                r.images.push_back({f[0], f[1], f[2] == "1", detail::parse_number<double>(key, f[3]), detail::parse_optional(key, f[4])});
            } else if (key.starts_with("config.")) {
                r.config_text += key.substr(7) + " = " + value + "\n";
            } else {
                throw FormatError("report: unknown key '" + key + "'", at);
            }
        } catch (const ConfigError& e) {
            throw FormatError(std::string("report: ") + e.what(), at);
        }
    }
    std::size_t anomalous = 0;
    for (const auto& im : r.images) anomalous += im.anomalous;
    if (expected_images != r.images.size() || expected_anomalous != anomalous) throw FormatError("report: image counts disagree with image lines", offset);
    return r;
}

/// Metrics from anomaly maps at model resolution, one per test sample.
/// Maps are resized to each sample's original resolution for the pixel
/// metrics; normal samples contribute all-zero ground truth.
inline EvaluationReport evaluate_maps(const std::string& category, const std::vector<Sample>& test, const std::vector<AnomalyMap>& maps) {
    if (test.size() != maps.size()) throw ShapeError("evaluate: " + std::to_string(test.size()) + " samples but " + std::to_string(maps.size()) + " maps");
    if (test.empty()) throw ValueError("evaluate: empty test set");
    EvaluationReport rep;
    rep.category = category;
    std::vector<float> scores;
    std::vector<std::uint8_t> labels;
    std::vector<float> pixel_scores;
    std::vector<std::uint8_t> pixel_labels;
    double per_image_sum = 0.0;
    std::size_t per_image_count = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const Sample& s = test[i];
        ImageResult r{s.name, s.defect_type, s.anomalous, static_cast<double>(maps[i].score), std::nullopt};
        const Mask gt = s.ground_truth();
        const Image m = map_at_resolution(maps[i], gt.height, gt.width);
        pixel_scores.insert(pixel_scores.end(), m.data.begin(), m.data.end());
        pixel_labels.insert(pixel_labels.end(), gt.data.begin(), gt.data.end());
        const auto positives = std::count(gt.data.begin(), gt.data.end(), std::uint8_t{1});
        if (positives > 0 && static_cast<std::size_t>(positives) < gt.data.size()) {
            r.pixel_auc = roc_auc(m.data, gt.data);
            per_image_sum += *r.pixel_auc;
            ++per_image_count;
        }
        scores.push_back(maps[i].score);
        labels.push_back(s.anomalous ? 1 : 0);
        rep.images.push_back(std::move(r));
    }
    const auto has_both = [](const std::vector<std::uint8_t>& l) {
        return std::find(l.begin(), l.end(), 0) != l.end() && std::find(l.begin(), l.end(), 1) != l.end();
    };
    if (has_both(labels)) rep.image_auc = roc_auc(scores, labels);
    if (has_both(pixel_labels)) rep.pixel_auc = roc_auc(pixel_scores, pixel_labels);
    if (per_image_count) rep.mean_image_pixel_auc = per_image_sum / static_cast<double>(per_image_count);
    return rep;
}

/// Anomaly maps for every test image, scored in parallel across images.
template <class Real>
std::vector<AnomalyMap> score_samples(const IntraModel<Real>& model, const ReferenceDiff& reference, const std::vector<Sample>& samples,
                                      const ScoringOptions& opt = {}) {
    if (reference.empty()) throw ValueError("evaluate: missing reference diff map");
    std::vector<AnomalyMap> maps(samples.size());
    ScoringOptions inner = opt;
    inner.workers = 1;
    parallel_for(samples.size(), opt.workers, [&](std::size_t i) { maps[i] = anomaly_map(samples[i].image, model, reference, inner); });
    return maps;
}

template <class Real>
EvaluationReport evaluate_category(const IntraModel<Real>& model, const ReferenceDiff& reference, const Dataset& ds, const ScoringOptions& opt = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    EvaluationReport rep = evaluate_maps(ds.category, ds.test, score_samples(model, reference, ds.test, opt));
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw IoError("short write to '" + path.string() + "'");
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace intra
