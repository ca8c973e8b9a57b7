#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "ionimp/core.hpp"
#include "ionimp/image_io.hpp"
#include "ionimp/simulator.hpp"

using namespace ionimp;

TEST(Vec, Arithmetic) {
    const Vec3 x{1, 0, 0}, y{0, 1, 0};
    EXPECT_EQ(cross(x, y), (Vec3{0, 0, 1}));
    EXPECT_DOUBLE_EQ(dot(x, y), 0.0);
    EXPECT_DOUBLE_EQ(norm(Vec2{3, 4}), 5.0);
    EXPECT_NEAR(norm(normalized(Vec3{1, 1, 1})), 1.0, 1e-15);
    EXPECT_THROW(normalized(Vec3{0, 0, 0}), InvalidArgument);
}

TEST(Rng, SameSeedSameStream) {
    Rng a(Seed{42}), b(Seed{42});
    for (int k = 0; k < 100; ++k) EXPECT_EQ(a(), b());
}

TEST(Rng, DerivedStreamsDiffer) {
    EXPECT_NE(derive(Seed{1}, 0), derive(Seed{1}, 1));
    EXPECT_NE(derive(Seed{1}, 0), derive(Seed{2}, 0));
    EXPECT_EQ(derive(Seed{7}, 3), derive(Seed{7}, 3));
}

TEST(Rng, UniformInUnitInterval) {
    Rng r(Seed{9});
    double s = 0;
    for (int k = 0; k < 100000; ++k) {
        const double u = r.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        s += u;
    }
    EXPECT_NEAR(s / 100000, 0.5, 0.005);
}

TEST(ScanImage, PixelCenterConvention) {
    ScanImage img(4, 3, 25.0, 6e-3, {100, -50});
    EXPECT_EQ(img.pixel_center(0, 0), (Vec2{100, -50}));
    EXPECT_EQ(img.pixel_center(2, 3), (Vec2{175, 0}));
    EXPECT_EQ(img.to_pixel({175, 0}), (Vec2{3, 2}));
    EXPECT_DOUBLE_EQ(img.pixel_size(), 25.0);
    EXPECT_DOUBLE_EQ(img.dwell(), 6e-3);
}

TEST(ScanImage, RejectsBadPixelSize) {
    EXPECT_THROW(ScanImage(2, 2, 0.0), InvalidArgument);
    EXPECT_THROW(ScanImage(2, 2, 25.0, -1.0), InvalidArgument);
}

TEST(Subtract, SelfIsZero) {
    ScanImage a(5, 4);
    Rng r(Seed{3});
    for (auto& v : a.data()) v = r.uniform() * 100;
    const auto d = subtract_images(a, a);
    for (double v : d.data()) EXPECT_EQ(v, 0.0);
}

TEST(Subtract, UniformValues) {
    const auto d = subtract_images(ScanImage(3, 3, 25, 6e-3, {}, 10.0), ScanImage(3, 3, 25, 6e-3, {}, 4.0));
    for (double v : d.data()) EXPECT_EQ(v, 6.0);
}

TEST(Subtract, AntiSymmetric) {
    ScanImage a(6, 5), b(6, 5);
    Rng r(Seed{4});
    for (auto& v : a.data()) v = r.uniform() * 50;
    for (auto& v : b.data()) v = r.uniform() * 50;
    const auto ab = subtract_images(a, b), ba = subtract_images(b, a);
    for (std::size_t k = 0; k < ab.size(); ++k) EXPECT_EQ(ab.data()[k], -ba.data()[k]);
}

TEST(Subtract, CopiesMetadataFromFirst) {
    ScanImage a(2, 2, 25, 1e-3, {5, 5}), b(2, 2, 25, 2e-3, {5, 5});
    EXPECT_DOUBLE_EQ(subtract_images(a, b).dwell(), 1e-3);
}

TEST(Subtract, GeometryMismatch) {
    EXPECT_THROW(subtract_images(ScanImage(3, 3), ScanImage(3, 4)), GeometryMismatch);
    EXPECT_THROW(subtract_images(ScanImage(3, 3, 25), ScanImage(3, 3, 20)), GeometryMismatch);
    EXPECT_THROW(subtract_images(ScanImage(3, 3, 25, 6e-3, {0, 0}), ScanImage(3, 3, 25, 6e-3, {1, 0})), GeometryMismatch);
}

TEST(Subtract, ScansOfSharedBackgroundLeaveImplantSignal) {
    const sim::Rect fov{{0, 0}, {4000, 4000}};
    const auto natives = sim::sample_native_background(fov, 6e11, 1000, Seed{5});
    sim::EmitterMap implanted;
    implanted.fov = fov;
    implanted.add({{2000, 2000}, 3, true, 1});
    auto cfg = sim::scan_for_fov(fov);
    cfg.noiseless = true;
    cfg.background = 2.0;
    const auto before = sim::render_scan(natives, cfg, 334e3, Seed{1});
    const auto after = sim::render_scan(sim::merge(natives, implanted), cfg, 334e3, Seed{1});
    const auto only = sim::render_scan(implanted, cfg, 334e3, Seed{1});
    const auto diff = subtract_images(after, before);
    for (std::size_t k = 0; k < diff.size(); ++k) EXPECT_NEAR(diff.data()[k], only.data()[k] - 2.0, 1e-9);
}

TEST(Moments, UniformImage) {
    const ScanImage img(7, 5, 25, 6e-3, {}, 5.0);
    const auto m = image_moments(img, img.full_rect());
    EXPECT_DOUBLE_EQ(m.mean, 5.0);
    EXPECT_DOUBLE_EQ(m.std, 0.0);
    EXPECT_DOUBLE_EQ(m.sum, 175.0);
}

TEST(Moments, SinglePixel) {
    ScanImage img(4, 4);
    img.at(2, 1) = 7.0;
    EXPECT_DOUBLE_EQ(image_moments(img, {2, 1, 1, 1}).sum, 7.0);
}

TEST(Moments, PopulationStd) {
    ScanImage img(2, 1);
    img.at(0, 0) = 1;
    img.at(0, 1) = 3;
    EXPECT_DOUBLE_EQ(image_moments(img, img.full_rect()).std, 1.0);
}

TEST(Moments, PoissonMeanWithinThreeSigma) {
    const std::size_t n = 100 * 100;
    for (std::uint64_t s = 1; s <= 20; ++s) {
        const auto img = sim::poisson_sample(ScanImage(100, 100, 25, 6e-3, {}, 100.0), Seed{s});
        const auto m = image_moments(img, img.full_rect());
        EXPECT_LE(std::abs(m.mean - 100.0), 3.0 * std::sqrt(100.0 / n)) << "seed " << s;
    }
}

TEST(Moments, RoiErrors) {
    ScanImage img(4, 4);
    EXPECT_THROW(image_moments(img, {0, 0, 0, 2}), InvalidArgument);
    EXPECT_THROW(image_moments(img, {3, 3, 2, 2}), GeometryMismatch);
}

TEST(RectAround, ClipsToImage) {
    ScanImage img(10, 10, 25);
    const auto r = rect_around(img, {0, 0}, 60);
    EXPECT_EQ(r.row, 0u);
    EXPECT_EQ(r.col, 0u);
    EXPECT_EQ(r.rows, 3u);
    EXPECT_EQ(r.cols, 3u);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

ScanImage random_image(std::uint64_t seed) {
    Rng r(Seed{seed});
    const std::size_t w = 1 + r() % 17, h = 1 + r() % 13;
    ScanImage img(w, h, 0.5 + 50 * r.uniform(), 1e-3 * r.uniform(), {1e4 * (r.uniform() - 0.5), -3.25 * r.uniform()});
    std::normal_distribution<double> n(0, 1e3);
    for (auto& v : img.data()) v = n(r);
    img.data()[0] = std::numeric_limits<double>::denorm_min();
    if (img.size() > 1) img.data()[1] = -0.0;
    if (img.size() > 2) img.data()[2] = 1e308;
    return img;
}

}  // namespace

TEST(ImageIo, BinaryRoundTripIsLossless) {
    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto img = random_image(s);
        std::stringstream ss;
        write_scan_binary(ss, img);
        const auto back = read_scan_binary(ss);
        ASSERT_EQ(back, img) << "seed " << s;
        EXPECT_TRUE(std::signbit(back.data().size() > 1 ? back.data()[1] : -0.0));
    }
}

TEST(ImageIo, CsvRoundTripIsLossless) {
    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto img = random_image(s);
        std::stringstream ss;
        write_scan_csv(ss, img);
        ASSERT_EQ(read_scan_csv(ss), img) << "seed " << s;
    }
}

TEST(ImageIo, HeaderCarriesGeometry) {
    std::stringstream ss;
    write_scan_binary(ss, ScanImage(3, 2, 25, 6e-3, {1, 2}));
    std::string line;
    std::getline(ss, line);
    EXPECT_NE(line.find("\"pixel_size_nm\":25"), std::string::npos);
    EXPECT_NE(line.find("\"dwell_s\":0.006"), std::string::npos);
    EXPECT_NE(line.find("\"origin_nm\":[1.0,2.0]"), std::string::npos);
}

TEST(ImageIo, RejectsTruncatedAndForeignInput) {
    std::stringstream ss;
    write_scan_binary(ss, ScanImage(3, 3));
    std::string s = ss.str();
    s.resize(s.size() - 4);
    std::stringstream cut(s);
    EXPECT_THROW(read_scan_binary(cut), FormatError);
    std::stringstream junk("not a header\n");
    EXPECT_THROW(read_scan_binary(junk), FormatError);
    std::stringstream bad_csv("# {\"format\":\"ionimp-scan\",\"version\":1,\"width\":2,\"height\":1,"
                              "\"pixel_size_nm\":25,\"dwell_s\":0.006,\"origin_nm\":[0,0]}\n1,x\n");
    EXPECT_THROW(read_scan_csv(bad_csv), FormatError);
}

TEST(ImageIo, FormatChosenBySuffix) {
    EXPECT_EQ(format_for_path("a/b.csv"), ScanFormat::csv);
    EXPECT_EQ(format_for_path("a/b.bin"), ScanFormat::binary);
}
