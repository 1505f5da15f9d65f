#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "platerec/augment.hpp"
#include "platerec/dataset.hpp"
#include "platerec/render.hpp"

using namespace platerec;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("platerec_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

double variance(const Tensor<double>& t) {
  double mean = 0, sq = 0;
  for (double v : t.data()) mean += v;
  mean /= static_cast<double>(t.size());
  for (double v : t.data()) sq += (v - mean) * (v - mean);
  return sq / static_cast<double>(t.size());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("glyph atlas covers the alphabet") {
  for (char c : kAlphabet) {
    const auto& rows = glyph_bitmap(c);
    int ink = 0;
    for (const char* row : rows) {
      CHECK(std::string(row).size() == kGlyphCols);
      for (const char* p = row; *p; ++p) ink += *p == '#';
    }
    CHECK(ink > 0);
  }
}

TEST_CASE("rendering is deterministic and light-on-dark") {
  const PlateImage a = render_plate("WLV3092", 42);
  const PlateImage b = render_plate("WLV3092", 42);
  CHECK(a.pixels == b.pixels);
  CHECK(a.pixels.shape() == Shape{1, 60, 120});
  CHECK(a.label.raw == "WLV3092");
  CHECK(render_plate("WLV3092", 43).pixels != a.pixels);

  const PlateLayout layout = layout_plate("WLV3092", 42, {});
  double glyph_sum = 0, glyph_n = 0, total = 0;
  for (const Box& box : layout.glyphs)
    for (std::size_t y = box.y0; y < box.y1; ++y)
      for (std::size_t x = box.x0; x < box.x1; ++x) {
        glyph_sum += a.pixels.at(0, y, x);
        ++glyph_n;
      }
  for (double v : a.pixels.data()) total += v;
  const double bg_mean = (total - glyph_sum) / (static_cast<double>(a.pixels.size()) - glyph_n);
  CHECK(glyph_sum / glyph_n > bg_mean);
  for (double v : a.pixels.data()) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("extreme plates fit with a margin") {
  for (const std::string s : {"A1", "WWW9999W"}) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const PlateLayout layout = layout_plate(s, seed, {});
      REQUIRE(layout.glyphs.size() == s.size());
      for (const Box& box : layout.glyphs) {
        CHECK(box.x0 >= kMinMargin);
        CHECK(box.y0 >= kMinMargin);
        CHECK(box.x1 + kMinMargin <= 120);
        CHECK(box.y1 + kMinMargin <= 60);
      }
      CHECK(layout.noise_sigma <= 0.08);
    }
  }
}

TEST_CASE("augmentation") {
  const PlateImage img = render_plate("BK12", 3);
  std::mt19937_64 rng(1);

  SUBCASE("disabled config is the identity") {
    const PlateImage out = augment(img, rng, AugmentConfig::disabled());
    CHECK(out.pixels == img.pixels);
  }
  SUBCASE("integer translation moves a delta exactly") {
    Tensor<double> delta({1, 20, 20}, 0.0);
    delta.at(0, 5, 7) = 1.0;
    const Tensor<double> moved = translate(delta, 2, 3, 0.0);
    CHECK(moved.at(0, 8, 9) == doctest::Approx(1.0));
    double sum = 0;
    for (double v : moved.data()) sum += v;
    CHECK(sum == doctest::Approx(1.0));
  }
  SUBCASE("blur lowers variance and sharpening restores edge contrast") {
    Tensor<double> step({1, 10, 20}, 0.2);
    for (std::size_t y = 0; y < 10; ++y)
      for (std::size_t x = 10; x < 20; ++x) step.at(0, y, x) = 0.8;
    const Tensor<double> blurred = box_blur(step, 1);
    CHECK(variance(blurred) < variance(step));
    const Tensor<double> sharp = unsharp_mask(blurred, 1.0);
    const double blurred_edge = blurred.at(0, 5, 11) - blurred.at(0, 5, 8);
    const double sharp_edge = sharp.at(0, 5, 11) - sharp.at(0, 5, 8);
    CHECK(sharp_edge > blurred_edge);
  }
  SUBCASE("labels survive and pixels stay in range") {
    AugmentConfig always;
    always.p_scale = always.p_translate = always.p_rotate = always.p_blur = always.p_sharpen = 1.0;
    for (int i = 0; i < 30; ++i) {
      const PlateImage out = augment(img, rng, i % 2 ? always : AugmentConfig{});
      CHECK(out.label.padded == img.label.padded);
      CHECK(out.pixels.shape() == img.pixels.shape());
      for (double v : out.pixels.data()) REQUIRE((v >= 0.0 && v <= 1.0));
    }
  }
}

TEST_CASE("augment config text round-trips and rejects unknown keys") {
  AugmentConfig cfg;
  cfg.p_blur = 0.75;
  cfg.rotate_deg = 3.0;
  const AugmentConfig back = AugmentConfig::parse(cfg.to_text());
  CHECK(back.p_blur == 0.75);
  CHECK(back.rotate_deg == 3.0);
  CHECK(AugmentConfig::parse("# nothing\n").p_scale == AugmentConfig{}.p_scale);
  CHECK_THROWS(AugmentConfig::parse("p_blurr = 0.5\n"));
  CHECK_THROWS(AugmentConfig::parse("p_blur = 1.5\n"));
}

TEST_CASE("pgm round trip") {
  const fs::path dir = scratch_dir("pgm");
  Tensor<double> img({1, 3, 4});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i) * 20.0 / 255.0;
  write_pgm(dir / "a.pgm", img);
  const Tensor<double> back = read_pgm(dir / "a.pgm");
  CHECK(back.shape() == img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(back[i] == doctest::Approx(img[i]));

  const std::string bytes = slurp(dir / "a.pgm");
  std::ofstream(dir / "short.pgm", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  try {
    read_pgm(dir / "short.pgm");
    FAIL("truncated image accepted");
  } catch (const DatasetError& e) {
    CHECK(std::string(e.what()).find("short.pgm") != std::string::npos);
  }
}

TEST_CASE("dataset generation") {
  const fs::path dir = scratch_dir("gen");
  const Manifest m = generate_dataset(10, 2, dir / "a", 5);
  CHECK(m.count(Split::train) == 8);
  CHECK(m.count(Split::val) == 2);
  generate_dataset(10, 2, dir / "b", 5);
  CHECK(slurp(dir / "a" / "manifest.tsv") == slurp(dir / "b" / "manifest.tsv"));
  for (const auto& row : m.rows) {
    CHECK(validate_plate(row.raw_label));
    CHECK(pad_label(row.raw_label).size() == kSeqLen);
    CHECK(slurp(dir / "a" / row.file) == slurp(dir / "b" / row.file));
  }
  CHECK(slurp(dir / "a" / "manifest.tsv").rfind("file\traw_label\tsplit\n", 0) == 0);

  const Dataset d = load_dataset(dir / "a");
  REQUIRE(d.images.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(d.images[i].label.raw == m.rows[i].raw_label);
    CHECK(d.splits[i] == m.rows[i].split);
  }
  CHECK(d.subset(Split::val).size() == 2);

  CHECK_THROWS(generate_dataset(10, 0, dir / "c", 5));
  CHECK_THROWS(generate_dataset(10, 10, dir / "c", 5));
}

TEST_CASE("default corpus split sizes") {
  const fs::path dir = scratch_dir("split");
  const Manifest m = generate_dataset(2713, 409, dir, 1);
  CHECK(m.count(Split::train) == 2304);
  CHECK(m.count(Split::val) == 409);
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(dir)) files += entry.path().extension() == ".pgm";
  CHECK(files == 2713);
  fs::remove_all(dir);
}

TEST_CASE("dataset errors carry context") {
  const fs::path dir = scratch_dir("bad");
  generate_dataset(4, 1, dir, 2);
  const Manifest m = read_manifest(dir);

  SUBCASE("invalid label names the row") {
    Manifest bad = m;
    bad.rows[2].raw_label = "ILV3092";
    write_manifest(dir, bad);
    try {
      load_dataset(dir);
      FAIL("bad label accepted");
    } catch (const std::exception& e) {
      CHECK(std::string(e.what()).find("row 4") != std::string::npos);
    }
  }
  SUBCASE("missing image names the file") {
    fs::remove(dir / m.rows[1].file);
    try {
      load_dataset(dir);
      FAIL("missing image accepted");
    } catch (const DatasetError& e) {
      CHECK(std::string(e.what()).find(m.rows[1].file) != std::string::npos);
    }
  }
  SUBCASE("eight-character label loads with two pad zeros") {
    Manifest longest = m;
    longest.rows[0].raw_label = "WWW9999W";
    write_manifest(dir, longest);
    CHECK(load_dataset(dir).images[0].label.padded == "00WWW9999W");
  }
}

TEST_CASE("unwritable output directory is reported with its path") {
  const fs::path blocker = scratch_dir("blocked") / "file";
  std::ofstream(blocker) << "x";
  try {
    generate_dataset(3, 1, blocker / "sub", 1);
    FAIL("generation into a file path succeeded");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("blocked") != std::string::npos);
  }
}
