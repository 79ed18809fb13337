#include <gtest/gtest.h>

#include <cstring>
#include <string>

#include "iln/dataset.hpp"
#include "iln/io.hpp"
#include "test_util.hpp"

using namespace iln;
using iln::testing::random_image;
using iln::testing::scratch_dir;

namespace {

const SensorSpec kSpec{};

template <typename Fn>
std::string format_error_of(Fn&& fn, std::size_t* offset = nullptr) {
  try {
    fn();
  } catch (const FormatError& e) {
    if (offset) *offset = e.offset();
    return e.what();
  }
  return "<no error>";
}

}  // namespace

TEST(RangeImageFile, RoundTripIsBitIdentical) {
  Rng rng(1);
  const RangeImage img = random_image(rng, 8, 128);
  const auto dir = scratch_dir("io_roundtrip");
  write_range_image(dir / "a.ilnr", img);
  const RangeImage back = read_range_image(dir / "a.ilnr");
  EXPECT_EQ(back.rows(), 8u);
  EXPECT_EQ(back.cols(), 128u);
  EXPECT_TRUE(back.spec() == img.spec());
  EXPECT_EQ(std::memcmp(back.depths().data(), img.depths().data(), img.depths().size() * sizeof(float)), 0);
}

TEST(RangeImageFile, HeaderLayout) {
  const auto bytes = encode_range_image(iln::testing::constant_image(2, 3, 5.0f));
  ASSERT_EQ(bytes.size(), 4u + 3 * 4 + 5 * 4 + 6 * 4);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "ILNR");
  EXPECT_EQ(bytes[4], 1);  // version, little-endian
  EXPECT_EQ(bytes[8], 2);  // H
  EXPECT_EQ(bytes[12], 3);  // W
  float r_max = 0;
  std::memcpy(&r_max, bytes.data() + 16 + 16, 4);
  EXPECT_EQ(r_max, 80.0f);
}

TEST(RangeImageFile, TruncatedIsFormatError) {
  Rng rng(2);
  auto bytes = encode_range_image(random_image(rng, 4, 4));
  bytes.resize(bytes.size() - 3);
  std::size_t at = 0;
  const std::string what = format_error_of([&] { (void)decode_range_image(bytes); }, &at);
  EXPECT_NE(what.find("depths"), std::string::npos) << what;
  EXPECT_EQ(at, 36u);
  bytes.resize(10);
  EXPECT_THROW((void)decode_range_image(bytes), FormatError);
}

TEST(RangeImageFile, BadMagicNamesExpectedMagic) {
  Rng rng(3);
  auto bytes = encode_range_image(random_image(rng, 2, 2));
  bytes[0] = 'X';
  std::size_t at = 99;
  const std::string what = format_error_of([&] { (void)decode_range_image(bytes); }, &at);
  EXPECT_NE(what.find("ILNR"), std::string::npos) << what;
  EXPECT_EQ(at, 0u);
  EXPECT_NE(what.find("byte 0"), std::string::npos) << what;
}

TEST(RangeImageFile, BadVersionAndTrailingBytes) {
  Rng rng(4);
  auto bytes = encode_range_image(random_image(rng, 2, 2));
  auto versioned = bytes;
  versioned[4] = 7;
  std::size_t at = 0;
  EXPECT_NE(format_error_of([&] { (void)decode_range_image(versioned); }, &at).find("version"), std::string::npos);
  EXPECT_EQ(at, 4u);
  bytes.push_back(0);
  EXPECT_THROW((void)decode_range_image(bytes), FormatError);
}

TEST(RangeImageFile, InvalidDepthIsFormatError) {
  auto bytes = encode_range_image(iln::testing::constant_image(1, 1, 5.0f));
  const float bad = -1.0f;
  std::memcpy(bytes.data() + 36, &bad, 4);
  EXPECT_THROW((void)decode_range_image(bytes), FormatError);
}

TEST(RangeImageFile, MissingFileNamesPath) {
  try {
    (void)read_range_image("/nonexistent/dir/x.ilnr");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/dir/x.ilnr"), std::string::npos);
  }
}

TEST(KeyValuesText, ParseFormatRoundTrip) {
  const KeyValues kv = parse_key_values("# comment\n a = 1 \n\nb=two words\n");
  ASSERT_EQ(kv.size(), 2u);
  EXPECT_EQ(kv.at("a"), "1");
  EXPECT_EQ(kv.at("b"), "two words");
  EXPECT_EQ(parse_key_values(format_key_values(kv)), kv);
}

TEST(KeyValuesText, Errors) {
  std::size_t at = 0;
  format_error_of([] { (void)parse_key_values("a=1\nb\n"); }, &at);
  EXPECT_EQ(at, 4u);
  EXPECT_THROW((void)parse_key_values("a=1\na=2\n"), FormatError);
  EXPECT_THROW((void)parse_key_values("=1\n"), FormatError);
}

TEST(Numbers, ShortestRoundTrip) {
  for (const double v : {0.1, 1e-4, -15.0, 80.0, 1.0 / 3.0, 123456.789}) {
    EXPECT_EQ(parse_double("x", format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_THROW((void)parse_double("x", "1.5abc"), ConfigError);
  EXPECT_THROW((void)parse_uint("x", "-3"), ConfigError);
  EXPECT_THROW((void)parse_uint("x", ""), ConfigError);
  EXPECT_EQ(parse_uint("x", "42"), 42u);
}

TEST(Ply, AsciiHeaderAndRows) {
  const std::string ply = encode_ply({{1, 2, 3}, {-1.5, 0, 0.25}});
  EXPECT_EQ(ply.rfind("ply\nformat ascii 1.0\nelement vertex 2\n", 0), 0u);
  EXPECT_NE(ply.find("end_header\n1.000000 2.000000 3.000000\n-1.500000 0.000000 0.250000\n"), std::string::npos);
}

TEST(Manifest, EncodeDecodeRoundTrip) {
  SceneParams p;
  p.num_objects = 7;
  p.box_side_max = 3.25;
  const DatasetManifest m{Split::test, {4, 5, 9}, kSpec, {{8, 128}, {32, 256}}, p};
  const DatasetManifest back = decode_manifest(parse_key_values(encode_manifest(m)), "m");
  EXPECT_EQ(back, m);
}

TEST(Manifest, MissingKeyAndBadSplit) {
  KeyValues kv = parse_key_values(encode_manifest({Split::train, {1}, kSpec, {{8, 128}}, {}}));
  auto no_seeds = kv;
  no_seeds.erase("seeds");
  EXPECT_NE(format_error_of([&] { (void)decode_manifest(no_seeds, "m"); }).find("seeds"), std::string::npos);
  auto bad = kv;
  bad["split"] = "val";
  EXPECT_THROW((void)decode_manifest(bad, "m"), FormatError);
  auto bad_res = kv;
  bad_res["resolutions"] = "8x0";
  EXPECT_THROW((void)decode_manifest(bad_res, "m"), FormatError);
}

TEST(Split, ManifestsAreDisjointAndOrdered) {
  const auto [train, test] = make_split_manifests(100, 10, 3, kSpec, {{8, 128}});
  EXPECT_EQ(train.seeds, (std::vector<std::uint64_t>{100, 101, 102, 103, 104, 105, 106}));
  EXPECT_EQ(test.seeds, (std::vector<std::uint64_t>{107, 108, 109}));
  EXPECT_NO_THROW(check_disjoint(train, test));
  auto overlapping = test;
  overlapping.seeds.push_back(100);
  EXPECT_THROW(check_disjoint(train, overlapping), DatasetError);
  EXPECT_THROW((void)make_split_manifests(0, 0, 0, kSpec, {{8, 128}}), ConfigError);
  EXPECT_THROW((void)make_split_manifests(0, 3, 3, kSpec, {{8, 128}}), ConfigError);
  EXPECT_THROW((void)make_split_manifests(0, 3, 1, kSpec, {}), ConfigError);
}

TEST(Dataset, WriteLoadRoundTrip) {
  const auto dir = scratch_dir("dataset_roundtrip");
  const auto [train, test] = make_split_manifests(0, 4, 1, kSpec, {{4, 32}, {8, 64}});
  write_dataset(train, dir, 2);
  write_dataset(test, dir, 1);
  EXPECT_TRUE(std::filesystem::exists(dir / "train.manifest"));
  EXPECT_TRUE(std::filesystem::exists(dir / "train" / "scene_0_4x32.ilnr"));
  EXPECT_TRUE(std::filesystem::exists(dir / "test" / "scene_3_8x64.ilnr"));
  const Dataset loaded = load_dataset(dir);
  const Dataset built = build_dataset(train, test, 1);
  ASSERT_EQ(loaded.train.size(), 3u);
  ASSERT_EQ(loaded.test.size(), 1u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(loaded.train[i].seed, built.train[i].seed);
    for (const Resolution r : {Resolution{4, 32}, Resolution{8, 64}}) {
      const auto& a = loaded.train[i].at(r);
      const auto& b = built.train[i].at(r);
      EXPECT_TRUE(std::equal(a.depths().begin(), a.depths().end(), b.depths().begin()));
    }
  }
  EXPECT_THROW((void)loaded.train[0].at({16, 128}), DatasetError);
}

TEST(Dataset, RendersMatchRaycast) {
  const auto [train, test] = make_split_manifests(20, 2, 1, kSpec, {{4, 16}});
  const Dataset d = build_dataset(train, test, 1);
  const Scene scene = gen_scene(20);
  const RangeImage& img = d.train[0].at({4, 16});
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 16; ++c) {
      EXPECT_EQ(img.at(r, c), static_cast<float>(raycast(scene, pixel_center(kSpec, 4, 16, r, c), kSpec)));
    }
  }
}

TEST(Dataset, MissingDirectoryAndManifest) {
  EXPECT_THROW((void)load_dataset("/nonexistent/iln/data"), DatasetError);
  const auto dir = scratch_dir("dataset_missing");
  EXPECT_THROW((void)load_dataset(dir), DatasetError);
}

TEST(Dataset, SameSeedSameBytes) {
  const auto a = scratch_dir("dataset_det_a");
  const auto b = scratch_dir("dataset_det_b");
  const auto [train, test] = make_split_manifests(5, 3, 1, kSpec, {{4, 32}});
  write_dataset(train, a, 1);
  write_dataset(train, b, 3);
  EXPECT_EQ(read_file(a / "train" / "scene_5_4x32.ilnr"), read_file(b / "train" / "scene_5_4x32.ilnr"));
  EXPECT_EQ(read_file(a / "train.manifest"), read_file(b / "train.manifest"));
}
