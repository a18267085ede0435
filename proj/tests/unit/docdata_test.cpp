#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "docformer/document.hpp"
#include "docformer/error.hpp"
#include "docformer/rng.hpp"
#include "docformer/spatial.hpp"
#include "docformer/synthetic.hpp"

namespace docformer {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("docformer_docdata_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TEST(OcrJson, MinimalDocument) {
  auto doc = parse_ocr_json(
      R"({"id":"a","width":20,"height":20,"class":null,"words":[{"text":"hi","box":[0,0,10,0,10,10,0,10],"label":null}]})");
  ASSERT_EQ(doc.words.size(), 1u);
  EXPECT_EQ(doc.words[0].text, "hi");
  EXPECT_EQ(doc.words[0].x3(), 10);
  EXPECT_FALSE(doc.doc_class.has_value());
}

TEST(OcrJson, InvertedBoxNamesTheWord) {
  try {
    parse_ocr_json(
        R"({"id":"a","width":20,"height":20,"class":1,"words":[{"text":"ok","box":[0,0,5,0,5,5,0,5],"label":0},{"text":"bad","box":[9,0,9,0,3,5,9,5],"label":0}]})");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("word 1"), std::string::npos) << e.what();
  }
}

TEST(OcrJson, BoxOutsidePageIsRejected) {
  EXPECT_THROW(parse_ocr_json(
                   R"({"id":"a","width":20,"height":20,"class":1,"words":[{"text":"x","box":[0,0,25,0,25,5,0,5],"label":0}]})"),
               DataError);
}

TEST(OcrJson, MalformedJsonReportsByteOffset) {
  try {
    parse_ocr_json(R"({"id":"a","width":20,)");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("byte"), std::string::npos);
  }
}

TEST(OcrJson, FuzzedInputYieldsDocumentOrStructuredError) {
  auto docs = generate_synthetic_corpus(3, 5);
  Rng rng(17);
  int parsed = 0, rejected = 0;
  for (const auto& sd : docs) {
    const std::string base = to_ocr_json(sd.doc);
    EXPECT_NO_THROW(parse_ocr_json(base));
    for (int trial = 0; trial < 200; ++trial) {
      std::string s = base;
      const int edits = 1 + static_cast<int>(rng.uniform_int(4));
      for (int e = 0; e < edits; ++e) {
        const std::size_t pos = rng.uniform_int(s.size());
        switch (rng.uniform_int(3)) {
          case 0: s[pos] = static_cast<char>(rng.uniform_int(256)); break;
          case 1: s.erase(pos, 1); break;
          default: s.resize(pos); break;
        }
        if (s.empty()) break;
      }
      try {
        parse_ocr_json(s);
        ++parsed;
      } catch (const DataError&) {
        ++rejected;
      }
    }
  }
  EXPECT_GT(rejected, 0);
  EXPECT_EQ(parsed + rejected, 1000);
}

TEST(OcrJson, RandomValidDocumentsAlwaysParse) {
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    Document d;
    d.id = "fuzz" + std::to_string(t);
    d.width = 1 + static_cast<int>(rng.uniform_int(500));
    d.height = 1 + static_cast<int>(rng.uniform_int(500));
    const auto n = rng.uniform_int(6);
    for (std::uint64_t i = 0; i < n; ++i) {
      WordBox w;
      w.text = std::string(1 + rng.uniform_int(5), static_cast<char>('a' + rng.uniform_int(26)));
      int x1 = static_cast<int>(rng.uniform_int(d.width + 1));
      int x3 = x1 + static_cast<int>(rng.uniform_int(d.width - x1 + 1));
      int y1 = static_cast<int>(rng.uniform_int(d.height + 1));
      int y3 = y1 + static_cast<int>(rng.uniform_int(d.height - y1 + 1));
      w.box = {x1, y1, x3, y1, x3, y3, x1, y3};
      if (rng.bernoulli(0.5)) w.label = static_cast<int>(rng.uniform_int(4));
      d.words.push_back(w);
    }
    Document back;
    ASSERT_NO_THROW(back = parse_ocr_json(to_ocr_json(d)));
    EXPECT_EQ(back, d);
  }
}

TEST(Pgm, RoundTripAndErrors) {
  GrayImage img{3, 2, {0, 1, 2, 253, 254, 255}};
  EXPECT_EQ(parse_pgm(to_pgm(img)), img);
  EXPECT_EQ(parse_pgm("P5\n# comment\n3 2\n255\n" + std::string("\0\1\2\375\376\377", 6)), img);
  EXPECT_THROW(parse_pgm("P2\n3 2\n255\n"), DataError);
  EXPECT_THROW(parse_pgm("P5\n3 2\n255\n\1\2"), DataError);
  EXPECT_THROW(parse_pgm("P5\n3 2\n65535\n"), DataError);
}

TEST(LoadDocument, ImageSizeMismatchIsAnError) {
  auto dir = scratch_dir("mismatch");
  Document d = generate_synthetic_corpus(1, 1)[0].doc;
  save_document(d, (dir / "d.json").string(), (dir / "d.pgm").string());
  write_pgm((dir / "small.pgm").string(), GrayImage{4, 4, std::vector<std::uint8_t>(16, 255)});
  EXPECT_NO_THROW(load_document((dir / "d.json").string(), (dir / "d.pgm").string()));
  EXPECT_THROW(load_document((dir / "d.json").string(), (dir / "small.pgm").string()), DataError);
}

TEST(LoadDocument, SaveLoadRoundTripIsByteIdentical) {
  auto dir = scratch_dir("roundtrip");
  auto docs = generate_synthetic_corpus(21, 12);
  write_corpus(dir.string(), docs);
  auto loaded = load_corpus((dir / "manifest.json").string());
  ASSERT_EQ(loaded.size(), docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    EXPECT_EQ(loaded[i].doc, docs[i].doc);
    EXPECT_EQ(loaded[i].held_out, docs[i].held_out);
    const auto json_path = dir / ("docs/" + docs[i].doc.id + ".json");
    const auto img_path = dir / ("images/" + docs[i].doc.id + ".pgm");
    EXPECT_EQ(to_ocr_json(loaded[i].doc), read_file(json_path.string()));
    EXPECT_EQ(to_pgm(loaded[i].doc.image), read_file(img_path.string()));
  }
}

TEST(Binning, PageExtremes) {
  Document d;
  d.id = "x";
  d.width = 300;
  d.height = 200;
  d.words.push_back(WordBox{"w", {0, 0, 300, 0, 300, 200, 0, 200}, std::nullopt});
  auto rec = normalize_and_bin(d, 1000);
  EXPECT_EQ(rec[0].x1, 0);
  EXPECT_EQ(rec[0].x3, 999);
  EXPECT_EQ(rec[0].y3, 999);
}

TEST(Binning, IdenticalConsecutiveBoxesEncodeZeroDelta) {
  Document d;
  d.id = "x";
  d.width = d.height = 100;
  WordBox w{"w", {10, 10, 30, 10, 30, 20, 10, 20}, std::nullopt};
  d.words = {w, w};
  auto rec = normalize_and_bin(d, 128);
  for (std::size_t k = 0; k < kRelativeFeatures; ++k) {
    EXPECT_EQ(rec[0].rel_x[k], relative_zero_bin(128));
    EXPECT_EQ(rec[0].rel_y[k], relative_zero_bin(128));
  }
}

TEST(Binning, RelativeDeltasMatchCornerSubtraction) {
  auto docs = generate_synthetic_corpus(8, 30);
  for (const auto& sd : docs) {
    const auto& words = sd.doc.words;
    auto rec = normalize_and_bin(sd.doc, 128);
    ASSERT_EQ(rec.size(), words.size());
    for (std::size_t i = 0; i < words.size(); ++i) {
      for (std::size_t k = 0; k < 4; ++k) {
        const double dx = i + 1 < words.size() ? words[i + 1].box[2 * k] - words[i].box[2 * k] : 0.0;
        const double dy = i + 1 < words.size() ? words[i + 1].box[2 * k + 1] - words[i].box[2 * k + 1] : 0.0;
        EXPECT_EQ(rec[i].rel_x_raw[k], dx);
        EXPECT_EQ(rec[i].rel_y_raw[k], dy);
      }
      double cx = 0, cy = 0, ncx = 0, ncy = 0;
      for (std::size_t k = 0; k < 4; ++k) {
        cx += words[i].box[2 * k] / 4.0;
        cy += words[i].box[2 * k + 1] / 4.0;
        if (i + 1 < words.size()) {
          ncx += words[i + 1].box[2 * k] / 4.0;
          ncy += words[i + 1].box[2 * k + 1] / 4.0;
        }
      }
      if (i + 1 < words.size()) {
        EXPECT_DOUBLE_EQ(rec[i].rel_x_raw[4], ncx - cx);
        EXPECT_DOUBLE_EQ(rec[i].rel_y_raw[4], ncy - cy);
      }
      for (int v : {rec[i].x1, rec[i].y1, rec[i].x3, rec[i].y3, rec[i].w, rec[i].h}) {
        EXPECT_GE(v, 0);
        EXPECT_LT(v, 128);
      }
      for (std::size_t k = 0; k < kRelativeFeatures; ++k) {
        EXPECT_GE(rec[i].rel_x[k], 0);
        EXPECT_LT(rec[i].rel_x[k], 128);
      }
    }
    for (double v : rec.back().rel_x_raw) EXPECT_EQ(v, 0.0);
    for (double v : rec.back().rel_y_raw) EXPECT_EQ(v, 0.0);
  }
}

TEST(Binning, MonotoneInCoordinate) {
  for (int nb : {2, 7, 128, 1000}) {
    int prev_abs = -1, prev_rel = -1;
    for (int c = 0; c <= 256; ++c) {
      const int a = bin_absolute(c, 256, nb);
      EXPECT_GE(a, prev_abs);
      prev_abs = a;
    }
    for (int delta = -256; delta <= 256; ++delta) {
      const int r = bin_relative(delta, 256, nb);
      EXPECT_GE(r, prev_rel);
      prev_rel = r;
    }
  }
}

TEST(Binning, Errors) {
  Document empty;
  empty.id = "e";
  empty.width = empty.height = 10;
  EXPECT_THROW(normalize_and_bin(empty, 128), DataError);
  Document one = generate_synthetic_corpus(1, 1)[0].doc;
  EXPECT_THROW(normalize_and_bin(one, 1), ConfigError);
}

TEST(Synthetic, DeterministicPerSeed) {
  auto a = generate_synthetic_corpus(1, 1);
  auto b = generate_synthetic_corpus(1, 1);
  EXPECT_EQ(a[0].doc, b[0].doc);
  auto c = generate_synthetic_corpus(2, 1);
  EXPECT_NE(a[0].doc, c[0].doc);
}

TEST(Synthetic, EveryWordCarriesOneLabelAndClassesAreBalanced) {
  auto docs = generate_synthetic_corpus(4, 100);
  std::map<int, std::size_t> counts;
  std::size_t total = 0;
  std::size_t held_out = 0;
  for (const auto& sd : docs) {
    ASSERT_TRUE(sd.doc.doc_class.has_value());
    held_out += sd.held_out;
    for (const auto& w : sd.doc.words) {
      ASSERT_TRUE(w.label.has_value());
      ASSERT_GE(*w.label, 0);
      ASSERT_LT(*w.label, kNumFormLabels);
      ++counts[*w.label];
      ++total;
    }
  }
  EXPECT_EQ(held_out, 20u);
  for (int l = 0; l < kNumFormLabels; ++l) {
    EXPECT_GE(static_cast<double>(counts[l]) / total, 0.05) << form_label_names()[l];
  }
}

TEST(Synthetic, PageTooSmallIsAnError) {
  SyntheticSpec spec;
  spec.page_width = 64;
  spec.page_height = 64;
  EXPECT_THROW(generate_synthetic_corpus(1, 1, spec), DataError);
}

// Renderer inverse: 8-connected ink components, characters of one word merged
// across their 1-pixel gaps, components not exactly one glyph tall dropped
// (underlines, template decorations).
std::vector<std::array<int, 4>> recover_word_boxes(const GrayImage& img) {
  const int w = static_cast<int>(img.width), h = static_cast<int>(img.height);
  std::vector<int> comp(img.pixels.size(), -1);
  std::vector<std::array<int, 4>> boxes;  // x1,y1,x3,y3
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y * w + x);
      if (img.pixels[idx] != 0 || comp[idx] >= 0) continue;
      std::array<int, 4> bb{x, y, x, y};
      std::vector<std::pair<int, int>> stack{{x, y}};
      comp[idx] = static_cast<int>(boxes.size());
      while (!stack.empty()) {
        auto [cx, cy] = stack.back();
        stack.pop_back();
        bb = {std::min(bb[0], cx), std::min(bb[1], cy), std::max(bb[2], cx), std::max(bb[3], cy)};
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = cx + dx, ny = cy + dy;
            if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            const std::size_t n = static_cast<std::size_t>(ny * w + nx);
            if (img.pixels[n] == 0 && comp[n] < 0) {
              comp[n] = comp[idx];
              stack.push_back({nx, ny});
            }
          }
      }
      boxes.push_back(bb);
    }
  }
  std::vector<std::array<int, 4>> glyphs;
  for (auto& b : boxes)
    if (b[3] - b[1] + 1 == kGlyphHeight && b[2] - b[0] + 1 == kGlyphWidth) glyphs.push_back(b);
  std::sort(glyphs.begin(), glyphs.end(), [](auto& a, auto& b) {
    return std::tie(a[1], a[0]) < std::tie(b[1], b[0]);
  });
  std::vector<std::array<int, 4>> words;
  for (auto& g : glyphs) {
    if (!words.empty() && words.back()[1] == g[1] && g[0] - words.back()[2] == 2) {
      words.back()[2] = g[2];
    } else {
      words.push_back(g);
    }
  }
  return words;
}

TEST(Synthetic, RenderedGlyphsRecoverWordBoxes) {
  auto docs = generate_synthetic_corpus(9, 20);
  for (const auto& sd : docs) {
    auto recovered = recover_word_boxes(sd.doc.image);
    std::vector<std::array<int, 4>> expected;
    for (const auto& w : sd.doc.words) expected.push_back({w.x1(), w.y1(), w.x3(), w.y3()});
    std::sort(expected.begin(), expected.end(), [](auto& a, auto& b) {
      return std::tie(a[1], a[0]) < std::tie(b[1], b[0]);
    });
    EXPECT_EQ(recovered, expected) << sd.doc.id;
  }
}

TEST(Synthetic, HeadersDifferFromQuestionsOnlyByUnderline) {
  auto docs = generate_synthetic_corpus(12, 50);
  std::size_t headers = 0;
  for (const auto& sd : docs) {
    for (const auto& w : sd.doc.words) {
      bool underlined = false;
      for (int x = w.x1(); x <= w.x3(); ++x)
        underlined |= sd.doc.image.at(static_cast<std::size_t>(x), static_cast<std::size_t>(w.y3() + 3)) == 0;
      EXPECT_EQ(underlined, w.label == kHeader);
      headers += w.label == kHeader;
    }
  }
  EXPECT_GT(headers, 0u);
}

TEST(ImageInput, ConstantPages) {
  GrayImage white{16, 16, std::vector<std::uint8_t>(256, 255)};
  GrayImage black{16, 16, std::vector<std::uint8_t>(256, 0)};
  const Tensor w = image_to_model_input(white, 8, 8, 8);
  const Tensor b = image_to_model_input(black, 8, 8, 8);
  for (double v : w.data()) EXPECT_EQ(v, 0.5);
  for (double v : b.data()) EXPECT_EQ(v, -0.5);
}

TEST(ImageInput, CheckerboardDownsizeMatchesNearestNeighbour) {
  GrayImage img{8, 8, std::vector<std::uint8_t>(64)};
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) img.pixels[y * 8 + x] = ((x + y) % 2) ? 255 : 0;
  auto t = image_to_model_input(img, 4, 4);
  ASSERT_EQ(t.shape(), (Shape{1, 4, 4}));
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) {
      // Source pixel (2x, 2y) has even parity, hence black.
      EXPECT_EQ(t.at({0, y, x}), img.at(2 * x, 2 * y) / 255.0 - 0.5);
      EXPECT_EQ(t.at({0, y, x}), -0.5);
    }
}

TEST(ImageInput, Errors) {
  EXPECT_THROW(image_to_model_input(GrayImage{}, 8, 8), DataError);
  GrayImage img{16, 16, std::vector<std::uint8_t>(256, 255)};
  EXPECT_THROW(image_to_model_input(img, 12, 12, 8), DimensionError);
}

}  // namespace
}  // namespace docformer
