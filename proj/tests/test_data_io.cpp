#include <gtest/gtest.h>

#include <png.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "intra/dataset.hpp"
#include "intra/png_io.hpp"
#include "intra/synthetic.hpp"

using namespace intra;
namespace fs = std::filesystem;

namespace {

class TempDir {
   public:
    TempDir() {
        static int counter = 0;
        path_ = fs::temp_directory_path() / ("intra_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }

   private:
    fs::path path_;
};

// Raw libpng writer for formats write_png does not produce.
void write_raw_png(const fs::path& p, int w, int h, int depth, int color, const std::vector<unsigned char>& bytes, std::size_t stride) {
    FILE* f = std::fopen(p.c_str(), "wb");
    ASSERT_NE(f, nullptr);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    png_init_io(png, f);
    png_set_IHDR(png, info, w, h, depth, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    if (color == PNG_COLOR_TYPE_PALETTE) {
        png_color pal[2] = {{0, 0, 0}, {255, 128, 0}};
        png_set_PLTE(png, info, pal, 2);
    }
    png_write_info(png, info);
    for (int y = 0; y < h; ++y) png_write_row(png, const_cast<unsigned char*>(bytes.data() + y * stride));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(f);
}

Image quantised_random(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> d(0, 255);
    Image img(h, w, c);
    for (auto& v : img.data) v = static_cast<float>(d(rng)) / 255.0f;
    return img;
}

}  // namespace

TEST(Png, RoundTrip8BitRgbAndGrey) {
    TempDir dir;
    for (std::size_t c : {1u, 3u}) {
        const Image img = quantised_random(7, 11, c, c);
        write_png(dir.path() / "a.png", img);
        EXPECT_EQ(read_png(dir.path() / "a.png"), img);
    }
}

TEST(Png, SixteenBitNormalisedToUnitRange) {
    TempDir dir;
    std::vector<unsigned char> bytes = {0x00, 0x00, 0xff, 0xff, 0x80, 0x00};  // big-endian samples
    write_raw_png(dir.path() / "g16.png", 3, 1, 16, PNG_COLOR_TYPE_GRAY, bytes, 6);
    const Image img = read_png(dir.path() / "g16.png");
    ASSERT_EQ(img.channels, 1u);
    EXPECT_FLOAT_EQ(img.data[0], 0.0f);
    EXPECT_FLOAT_EQ(img.data[1], 1.0f);
    EXPECT_FLOAT_EQ(img.data[2], 32768.0f / 65535.0f);
}

TEST(Png, AlphaDroppedAndPaletteExpanded) {
    TempDir dir;
    write_raw_png(dir.path() / "rgba.png", 1, 1, 8, PNG_COLOR_TYPE_RGBA, {255, 0, 51, 7}, 4);
    const Image a = read_png(dir.path() / "rgba.png");
    ASSERT_EQ(a.channels, 3u);
    EXPECT_FLOAT_EQ(a.data[2], 0.2f);
    write_raw_png(dir.path() / "pal.png", 2, 1, 8, PNG_COLOR_TYPE_PALETTE, {0, 1}, 2);
    const Image p = read_png(dir.path() / "pal.png");
    ASSERT_EQ(p.channels, 3u);
    EXPECT_FLOAT_EQ(p.at(0, 1, 0), 1.0f);
    EXPECT_FLOAT_EQ(p.at(0, 1, 1), 128.0f / 255.0f);
    EXPECT_FLOAT_EQ(p.at(0, 0, 0), 0.0f);
}

TEST(Png, ErrorsAreTyped) {
    TempDir dir;
    EXPECT_THROW(read_png(dir.path() / "missing.png"), IoError);
    std::ofstream(dir.path() / "junk.png") << "definitely not a png";
    EXPECT_THROW(read_png(dir.path() / "junk.png"), FormatError);
    write_png(dir.path() / "ok.png", quantised_random(16, 16, 3, 1));
    fs::resize_file(dir.path() / "ok.png", 60);
    EXPECT_THROW(read_png(dir.path() / "ok.png"), FormatError);
    EXPECT_THROW(write_png(dir.path() / "x.png", Image(4, 4, 2)), ValueError);
}

TEST(Png, MaskBinarisedAtHalf) {
    TempDir dir;
    write_raw_png(dir.path() / "m.png", 4, 1, 8, PNG_COLOR_TYPE_GRAY, {0, 127, 128, 255}, 4);
    const Mask m = read_mask(dir.path() / "m.png");
    EXPECT_EQ(m.data, (std::vector<std::uint8_t>{0, 0, 1, 1}));
}

TEST(Synthetic, SameSeedIsBitIdentical) {
    const Dataset a = generate_synthetic(5, 3, 2, 4, 32);
    const Dataset b = generate_synthetic(5, 3, 2, 4, 32);
    ASSERT_EQ(a.test.size(), b.test.size());
    for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(a.train[i].image, b.train[i].image);
    for (std::size_t i = 0; i < a.test.size(); ++i) {
        EXPECT_EQ(a.test[i].image, b.test[i].image);
        EXPECT_EQ(a.test[i].mask, b.test[i].mask);
    }
    EXPECT_NE(generate_synthetic(6, 1, 0, 0, 32).train[0].image, a.train[0].image);
}

TEST(Synthetic, LayoutAndLabels) {
    const Dataset ds = generate_synthetic(1, 4, 3, 5, 32);
    EXPECT_EQ(ds.train.size(), 4u);
    ASSERT_EQ(ds.test.size(), 8u);
    for (const auto& s : ds.train) {
        EXPECT_EQ(s.image.height, 32u);
        EXPECT_EQ(s.image.channels, 3u);
        EXPECT_FALSE(s.anomalous);
    }
    std::size_t defective = 0;
    for (const auto& s : ds.test) {
        EXPECT_EQ(s.anomalous, s.mask.has_value());
        if (s.anomalous) {
            ++defective;
            EXPECT_NE(s.defect_type, "good");
            EXPECT_EQ(s.mask->height, 32u);
        }
    }
    EXPECT_EQ(defective, 5u);
}

TEST(Synthetic, DefectDiffersFromCleanExactlyOnMask) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const SyntheticTexture tex(seed, 64);
        const auto r = tex.render_defective(seed * 7, seed % 2 ? DefectKind::phase : DefectKind::intensity);
        EXPECT_EQ(r.clean, tex.render(seed * 7));
        std::size_t area = 0;
        double delta = 0.0;
        for (std::size_t i = 0; i < r.mask.data.size(); ++i) {
            bool differs = false;
            double px = 0.0;
            for (std::size_t c = 0; c < 3; ++c) {
                differs |= r.image.data[i * 3 + c] != r.clean.data[i * 3 + c];
                px += std::abs(r.image.data[i * 3 + c] - r.clean.data[i * 3 + c]);
            }
            EXPECT_EQ(differs, r.mask.data[i] != 0);
            if (r.mask.data[i]) {
                ++area;
                delta += px / 3.0;
            }
        }
        EXPECT_LE(area, static_cast<std::size_t>(0.05 * 64 * 64) + 1) << seed;
        EXPECT_GE(area, 8u) << seed;
        EXPECT_GE(delta / static_cast<double>(area), 0.1) << seed;
    }
}

TEST(Synthetic, PixelsAre8BitQuantised) {
    const Image img = SyntheticTexture(3, 32).render(9);
    for (float v : img.data) {
        const float q = std::round(v * 255.0f);
        EXPECT_EQ(v, q / 255.0f);
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
    }
}

TEST(Dataset, WriteThenLoadRoundTrip) {
    TempDir dir;
    const Dataset ds = generate_synthetic(2, 3, 2, 2, 32);
    write_dataset(dir.path(), ds);
    const Dataset back = load_category(dir.path(), "synthetic", 32);
    ASSERT_EQ(back.train.size(), 3u);
    ASSERT_EQ(back.test.size(), 4u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(back.train[i].image, ds.train[i].image);
    std::size_t anomalous = 0;
    for (const auto& s : back.test) {
        const auto it = std::find_if(ds.test.begin(), ds.test.end(), [&](const Sample& o) { return o.name == s.name; });
        ASSERT_NE(it, ds.test.end()) << s.name;
        EXPECT_EQ(s.image, it->image);
        EXPECT_EQ(s.mask, it->mask);
        EXPECT_EQ(s.defect_type, it->defect_type);
        anomalous += s.anomalous;
    }
    EXPECT_EQ(anomalous, 2u);
    // No hidden state: a second load is identical, also when parallel.
    const Dataset again = load_category(dir.path(), "synthetic", 32, 3);
    for (std::size_t i = 0; i < back.test.size(); ++i) {
        EXPECT_EQ(again.test[i].name, back.test[i].name);
        EXPECT_EQ(again.test[i].image, back.test[i].image);
    }
}

TEST(Dataset, ResizesImagesButKeepsMasksAtOriginalSize) {
    TempDir dir;
    write_dataset(dir.path(), generate_synthetic(2, 2, 1, 1, 32));
    const Dataset ds = load_category(dir.path(), "synthetic", 16);
    for (const auto& s : ds.test) {
        EXPECT_EQ(s.image.height, 16u);
        EXPECT_EQ(s.orig_height, 32u);
        EXPECT_EQ(s.ground_truth().height, 32u);
    }
}

TEST(Dataset, GreyscaleBroadcastToThreeChannels) {
    TempDir dir;
    fs::create_directories(dir.path() / "g" / "train" / "good");
    fs::create_directories(dir.path() / "g" / "test" / "good");
    const Image grey = quantised_random(8, 8, 1, 4);
    write_png(dir.path() / "g" / "train" / "good" / "0.png", grey);
    const Dataset ds = load_category(dir.path(), "g", 8);
    ASSERT_EQ(ds.train.size(), 1u);
    EXPECT_EQ(ds.train[0].image.channels, 3u);
    for (std::size_t i = 0; i < 64; ++i)
        for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(ds.train[0].image.data[i * 3 + c], grey.data[i]);
    EXPECT_TRUE(ds.test.empty());
}

TEST(Dataset, LexicographicOrder) {
    TempDir dir;
    fs::create_directories(dir.path() / "c" / "train" / "good");
    fs::create_directories(dir.path() / "c" / "test");
    for (const char* n : {"b", "B", "a10", "a2"}) write_png(dir.path() / "c" / "train" / "good" / (std::string(n) + ".png"), Image(4, 4, 1));
    const Dataset ds = load_category(dir.path(), "c", 4);
    std::vector<std::string> names;
    for (const auto& s : ds.train) names.push_back(s.name);
    EXPECT_EQ(names, (std::vector<std::string>{"B", "a10", "a2", "b"}));
}

TEST(Dataset, MissingPiecesNameThePath) {
    TempDir dir;
    try {
        load_category(dir.path(), "nope", 8);
        FAIL();
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("nope"), std::string::npos);
    }
    write_dataset(dir.path(), generate_synthetic(3, 2, 1, 2, 16));
    const fs::path mask = dir.path() / "synthetic" / "ground_truth" / "phase" / "000_mask.png";
    const fs::path moved = dir.path() / "saved_mask.png";
    fs::rename(mask, moved);
    try {
        load_category(dir.path(), "synthetic", 16);
        FAIL();
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("000_mask.png"), std::string::npos);
    }
    fs::rename(moved, mask);
    fs::copy_file(mask, dir.path() / "synthetic" / "ground_truth" / "phase" / "099_mask.png");
    try {
        load_category(dir.path(), "synthetic", 16);
        FAIL();
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("099"), std::string::npos);
    }
}
