#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace opendas;
using opendas::testing::random_image;
using opendas::testing::scratch_dir;

namespace {

void write_file(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

std::vector<std::string> numbered(const std::string& prefix, int from, int to) {
    std::vector<std::string> out;
    for (int i = from; i < to; ++i) out.push_back(prefix + std::to_string(i));
    return out;
}

} // namespace

TEST(MaskAndFill, FullMaskIsResizedInput) {
    std::mt19937_64 rng(1);
    auto img = random_image(24, 24, rng);
    auto crop = mask_and_fill(img, Mask(24, 24, true), kPixelMean, 24);
    EXPECT_FALSE(crop.empty_mask);
    ASSERT_EQ(crop.pixels.pixels.size(), img.pixels.size());
    for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(crop.pixels.pixels[i], img.pixels[i], 1e-6f);

    auto small = mask_and_fill(img, Mask(24, 24, true), kPixelMean, 12);
    auto expected = resize_bilinear(img, 12, 12);
    for (std::size_t i = 0; i < expected.pixels.size(); ++i) EXPECT_NEAR(small.pixels.pixels[i], expected.pixels[i], 1e-6f);
}

TEST(MaskAndFill, EmptyMaskIsPureFill) {
    std::mt19937_64 rng(2);
    auto img = random_image(16, 16, rng);
    const Rgb fill{0.1f, 0.2f, 0.3f};
    auto crop = mask_and_fill(img, Mask(16, 16, false), fill, 8);
    EXPECT_TRUE(crop.empty_mask);
    EXPECT_EQ(crop.pixels, Image(8, 8, fill));
}

TEST(MaskAndFill, PaddedBoxAndFillBeforeResize) {
    std::mt19937_64 rng(3);
    auto img = random_image(64, 64, rng);
    Mask mask(64, 64);
    for (int y = 20; y < 30; ++y)
        for (int x = 30; x < 40; ++x) mask.set(y, x, true);
    mask.set(29, 39, false); // interior hole must be filled too
    // 10x10 box, padding round(1.0) = 1 per side -> rows 19..30, cols 29..40
    auto crop = mask_and_fill(img, mask, kPixelMean, 12);
    ASSERT_EQ(crop.pixels.height, 12);
    for (int y = 0; y < 12; ++y)
        for (int x = 0; x < 12; ++x)
            for (int c = 0; c < 3; ++c) {
                const int sy = 19 + y, sx = 29 + x;
                const float want = mask.inside(sy, sx) ? img.at(sy, sx, c) : kPixelMean[static_cast<std::size_t>(c)];
                EXPECT_NEAR(crop.pixels.at(y, x, c), want, 1e-6f) << y << "," << x;
            }
}

TEST(MaskAndFill, PaddingIsClampedAtTheBorder) {
    Image img(10, 10, {1, 1, 1});
    Mask mask(10, 10);
    for (int y = 0; y < 10; ++y) mask.set(y, 0, true);
    // box 10x1 at the left edge; grows to 10 x 1 (row pad 1 clamped, col pad round(0.1)=0)
    auto crop = mask_and_fill(img, mask, {0, 0, 0}, 10);
    for (int y = 0; y < 10; ++y) EXPECT_FLOAT_EQ(crop.pixels.at(y, 9, 0), 1.0f);
}

TEST(MaskAndFill, ShapeMismatchIsRejected) {
    EXPECT_THROW(mask_and_fill(Image(8, 8), Mask(8, 9), kPixelMean, 8), ShapeError);
}

TEST(Image, ResizeKeepsConstantsAndPngRoundTrips) {
    Image c(7, 5, {0.25f, 0.5f, 0.75f});
    auto r = resize_bilinear(c, 13, 3);
    for (float v : r.pixels) EXPECT_TRUE(v == 0.25f || v == 0.5f || v == 0.75f);

    auto dir = scratch_dir("png");
    std::mt19937_64 rng(4);
    auto img = random_image(9, 11, rng);
    save_png_rgb((dir / "a.png").string(), img);
    auto back = load_png_rgb((dir / "a.png").string());
    ASSERT_EQ(back.height, 9);
    ASSERT_EQ(back.width, 11);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(back.pixels[i], img.pixels[i], 0.5f / 255 + 1e-6f);

    Mask m(9, 11);
    m.set(3, 4, true);
    save_png_mask((dir / "m.png").string(), m);
    EXPECT_EQ(load_png_mask((dir / "m.png").string()), m);
    EXPECT_THROW(load_png_rgb((dir / "none.png").string()), Error);
}

TEST(RleMask, RoundTripAndErrors) {
    Mask m(3, 4);
    m.set(0, 1, true);
    m.set(2, 3, true);
    m.set(2, 2, true);
    const auto text = encode_rle_mask(m);
    EXPECT_EQ(text, "rle:3 4 1 1 8 2");
    EXPECT_EQ(decode_rle_mask(text), m);
    EXPECT_EQ(decode_rle_mask("rle:2 2 0 4"), Mask(2, 2, true));
    EXPECT_THROW(decode_rle_mask("rle:2 2 5"), ParseError);
    EXPECT_THROW(decode_rle_mask("rle:2 2 1"), ParseError);
    EXPECT_THROW(decode_rle_mask("rle:2 2 1 x"), ParseError);
    EXPECT_THROW(decode_rle_mask("2 2 4"), ParseError);
}

TEST(Manifest, ThreeLines) {
    auto dir = scratch_dir("manifest3");
    write_file(dir / "m.jsonl",
               R"({"image": "a.png", "mask": "rle:1 1 0 1", "label": "wall", "segment_id": 0, "split": "train"})"
               "\n"
               R"({"image": "a.png", "mask": "ma.png", "label": "floor", "segment_id": 1})"
               "\n\n"
               R"({"image": "/abs/b.png", "label": "door", "segment_id": 0, "split": "test"})"
               "\n");
    auto rs = load_manifest((dir / "m.jsonl").string());
    ASSERT_EQ(rs.size(), 3u);
    EXPECT_EQ(rs[0].image, (dir / "a.png").string());
    EXPECT_EQ(rs[0].mask, "rle:1 1 0 1");
    EXPECT_EQ(rs[1].mask, (dir / "ma.png").string());
    EXPECT_EQ(rs[1].split, Split::train);
    EXPECT_EQ(rs[2].image, "/abs/b.png");
    EXPECT_EQ(rs[2].split, Split::test);
    EXPECT_TRUE(rs[2].mask.empty());

    save_manifest((dir / "copy.jsonl").string(), rs);
    EXPECT_EQ(load_manifest((dir / "copy.jsonl").string()), rs);
}

TEST(Manifest, Errors) {
    auto dir = scratch_dir("manifest_bad");
    write_file(dir / "empty_label.jsonl", R"({"image": "a.png", "label": "", "segment_id": 0})");
    EXPECT_THROW(load_manifest((dir / "empty_label.jsonl").string()), ValidationError);

    write_file(dir / "dup.jsonl", R"({"image": "a.png", "label": "x", "segment_id": 3})"
                                  "\n"
                                  R"({"image": "a.png", "label": "y", "segment_id": 3})");
    EXPECT_THROW(load_manifest((dir / "dup.jsonl").string()), ValidationError);

    write_file(dir / "bad.jsonl", R"({"image": "a.png", "label": "x", "segment_id": 3})"
                                  "\n{not json\n");
    try {
        load_manifest((dir / "bad.jsonl").string());
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("bad.jsonl:2:"), std::string::npos) << e.what();
    }
    write_file(dir / "split.jsonl", R"({"image": "a.png", "label": "x", "segment_id": 3, "split": "val"})");
    EXPECT_THROW(load_manifest((dir / "split.jsonl").string()), ParseError);
    EXPECT_THROW(load_manifest((dir / "missing.jsonl").string()), IoError);
}

TEST(Manifest, MissingMaskNamesTheRecord) {
    auto dir = scratch_dir("manifest_mask");
    save_png_rgb((dir / "a.png").string(), Image(8, 8));
    SegmentRecord r{(dir / "a.png").string(), (dir / "gone.png").string(), "wall", 42, Split::train};
    try {
        load_crop(r, kPixelMean, 8);
        FAIL() << "expected IoError";
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("segment 42"), std::string::npos) << e.what();
    }
}

TEST(SplitQueries, OfficesBookkeeping) {
    auto shared = numbered("shared ", 0, 108);
    auto train = shared, test = shared;
    auto train_only = numbered("train only ", 0, 48);
    auto test_only = numbered("test only ", 0, 125);
    train.insert(train.end(), train_only.begin(), train_only.end());
    test.insert(test.end(), test_only.begin(), test_only.end());
    ASSERT_EQ(train.size(), 156u);
    ASSERT_EQ(test.size(), 233u);
    auto q = split_queries(train, test);
    EXPECT_EQ(q.base_test.size(), 108u);
    EXPECT_EQ(q.novel_test.size(), 125u);
    EXPECT_EQ(q.base_test.size() + q.novel_test.size(), q.test_queries.size());
    auto report = split_report(q);
    EXPECT_EQ(report["counts"]["novel"], 125);
}

TEST(SplitQueries, IdenticalAndDisjoint) {
    auto a = numbered("a", 0, 5), b = numbered("b", 0, 4);
    auto same = split_queries(a, a);
    EXPECT_EQ(same.base_test.size(), 5u);
    EXPECT_TRUE(same.novel_test.empty());
    auto disjoint = split_queries(a, b);
    EXPECT_TRUE(disjoint.base_test.empty());
    EXPECT_EQ(disjoint.novel_test.size(), 4u);
    EXPECT_THROW(split_queries({}, b), ValidationError);
}

TEST(SplitQueries, ExactStringMatchIsCaseSensitive) {
    auto q = split_queries({"Wall"}, {"wall", "Wall"});
    EXPECT_EQ(q.base_test, (std::vector<std::string>{"Wall"}));
    EXPECT_EQ(q.novel_test, (std::vector<std::string>{"wall"}));
}

TEST(Synthetic, BaseNovelCounts) {
    auto ds = generate_synthetic({.num_classes = 8, .per_class = 5, .image_size = 32, .novel_fraction = 0.25});
    EXPECT_EQ(ds.base_queries().size(), 6u);
    EXPECT_EQ(ds.all_queries().size(), 8u);
    EXPECT_EQ(ds.bank.size(), 6u);
    EXPECT_TRUE(check_negative_bank(ds.bank).empty());
    for (const auto& c : ds.classes) {
        EXPECT_EQ(ds.bank.find(c.name) != nullptr, !c.novel);
        if (c.novel)
            for (const auto& r : ds.records)
                if (r.label == c.name) EXPECT_EQ(r.split, Split::test);
    }
    auto q = split_queries(ds.records);
    EXPECT_EQ(q.base_test.size(), 6u);
    EXPECT_EQ(q.novel_test.size(), 2u);
}

TEST(Synthetic, SeedDeterminesImages) {
    SyntheticConfig c{.num_classes = 4, .per_class = 3, .image_size = 16, .seed = 9};
    auto a = generate_synthetic(c), b = generate_synthetic(c);
    EXPECT_EQ(a.images, b.images);
    EXPECT_EQ(a.masks, b.masks);
    EXPECT_EQ(a.records, b.records);
    c.seed = 10;
    EXPECT_NE(generate_synthetic(c).images, a.images);
}

TEST(Synthetic, WrittenDatasetLoadsBack) {
    auto dir = scratch_dir("synth");
    auto ds = generate_synthetic({.num_classes = 3, .per_class = 4, .image_size = 16, .novel_fraction = 0.34});
    write_synthetic(ds, dir.string());
    auto train = load_manifest((dir / "train.jsonl").string());
    auto test = load_manifest((dir / "test.jsonl").string());
    EXPECT_EQ(train.size() + test.size(), ds.records.size());
    EXPECT_EQ(load_negative_bank((dir / "negatives.json").string()), ds.bank);
    const auto crop = load_crop(train.front(), kPixelMean, 16);
    std::size_t i0 = 0;
    while (ds.records[i0].segment_id != train.front().segment_id) ++i0;
    const auto direct = mask_and_fill(ds.images[i0], ds.masks[i0], kPixelMean, 16);
    EXPECT_FALSE(crop.empty_mask);
    for (std::size_t i = 0; i < crop.pixels.pixels.size(); ++i)
        EXPECT_NEAR(crop.pixels.pixels[i], direct.pixels.pixels[i], 1.0f / 255);
}
