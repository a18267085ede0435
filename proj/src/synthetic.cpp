#include "docformer/synthetic.hpp"

#include <filesystem>

#include <nlohmann/json.hpp>

#include "docformer/error.hpp"
#include "docformer/rng.hpp"

namespace docformer {
namespace {

const std::vector<std::string> kTitleWords = {"form",  "invoice", "receipt", "report",  "order",
                                              "memo",  "notice",  "claim",   "record",  "summary"};

const std::vector<std::string> kKeyWords = {
    "name",   "date",    "total",   "address", "phone",  "email",   "city",    "state",
    "country", "amount", "account", "company", "contact", "number", "due",     "tax",
    "balance", "item",   "price",   "qty",     "ref",     "vendor", "client",  "region",
    "zip",     "fax",    "title",   "dept",    "period",  "status", "method",  "type"};

const std::vector<std::string> kValueWords = {
    "alpha", "bravo", "delta",  "echo",   "foxtrot", "golf",   "hotel",  "india",
    "kilo",  "lima",  "mike",   "oscar",  "papa",    "quebec", "romeo",  "sierra",
    "tango", "victor", "yankee", "zulu",  "north",   "south",  "east",   "west",
    "red",   "blue",  "green",  "amber",  "paid",    "open",   "closed", "pending",
    "x100",  "y250",  "z375",   "q42",    "k9",      "m77",    "r18",    "t360"};

constexpr int kTitleY = 10;
constexpr int kFirstRowY = 28;
constexpr int kRowPitch = 16;
constexpr int kUnderlineOffset = 9;
constexpr int kUnderlineThickness = 3;
constexpr int kLeftColumnX = 16;

int char_index(char c) {
  if (c >= 'a' && c <= 'z') return c - 'a';
  if (c >= '0' && c <= '9') return 26 + (c - '0');
  return -1;
}

void fill_rect(GrayImage& img, int x0, int y0, int x1, int y1) {
  for (int y = std::max(0, y0); y <= std::min<int>(y1, static_cast<int>(img.height) - 1); ++y)
    for (int x = std::max(0, x0); x <= std::min<int>(x1, static_cast<int>(img.width) - 1); ++x)
      img.pixels[static_cast<std::size_t>(y) * img.width + static_cast<std::size_t>(x)] = 0;
}

void draw_template(GrayImage& img, int doc_class) {
  const int w = static_cast<int>(img.width), h = static_cast<int>(img.height);
  switch (doc_class) {
    case 0:  // page border
      fill_rect(img, 1, 1, w - 2, 2);
      fill_rect(img, 1, h - 3, w - 2, h - 2);
      fill_rect(img, 1, 1, 2, h - 2);
      fill_rect(img, w - 3, 1, w - 2, h - 2);
      break;
    case 1:  // banner across the top
      fill_rect(img, 0, 1, w - 1, 5);
      break;
    case 2:  // column divider
      fill_rect(img, w / 2 - 4, 24, w / 2 - 3, h - 8);
      break;
    default:  // plain
      break;
  }
}

}  // namespace

const std::vector<std::string>& form_label_names() {
  static const std::vector<std::string> names = {"other", "header", "question", "answer"};
  return names;
}

std::uint64_t glyph_bits(char c) {
  const int idx = char_index(c);
  if (idx < 0) throw DataError(std::string("glyph_bits: unsupported character '") + c + "'");
  // 911 is odd, so (idx + 1) * 911 mod 2^15 is injective over the 36 glyphs.
  const std::uint64_t code = (static_cast<std::uint64_t>(idx + 1) * 911u) & 0x7FFFu;
  std::uint64_t bits = 0;
  for (int r = 0; r < kGlyphHeight; ++r) {
    for (int col = 0; col < kGlyphWidth; ++col) {
      bool on;
      if (r == 0 || r == kGlyphHeight - 1 || col == 0 || col == kGlyphWidth - 1) {
        on = true;
      } else {
        const int bit = (r - 1) * 3 + (col - 1);
        on = (code >> bit) & 1u;
      }
      if (on) bits |= 1ULL << (r * kGlyphWidth + col);
    }
  }
  return bits;
}

WordBox render_word(GrayImage& image, const std::string& text, int x, int y) {
  if (text.empty()) throw DataError("render_word: empty text");
  for (std::size_t k = 0; k < text.size(); ++k) {
    const std::uint64_t bits = glyph_bits(text[k]);
    const int gx = x + static_cast<int>(k) * kGlyphAdvance;
    for (int r = 0; r < kGlyphHeight; ++r)
      for (int c = 0; c < kGlyphWidth; ++c)
        if ((bits >> (r * kGlyphWidth + c)) & 1u) fill_rect(image, gx + c, y + r, gx + c, y + r);
  }
  const int right = x + static_cast<int>(text.size()) * kGlyphAdvance - 2;
  const int bottom = y + kGlyphHeight - 1;
  WordBox wb;
  wb.text = text;
  wb.box = {x, y, right, y, right, bottom, x, bottom};
  return wb;
}

std::vector<SyntheticDocument> generate_synthetic_corpus(std::uint64_t corpus_seed,
                                                         std::size_t n_docs,
                                                         const SyntheticSpec& spec) {
  if (n_docs == 0) throw ConfigError("generate_synthetic_corpus: n_docs must be at least 1");
  if (spec.min_rows < 1 || spec.max_rows < spec.min_rows) {
    throw ConfigError("generate_synthetic_corpus: invalid row range");
  }
  const int right_column_x = spec.page_width / 2 + 8;
  const int needed_w = right_column_x + 8 * kGlyphAdvance + 8;
  const int needed_h = kFirstRowY + kRowPitch * (spec.max_rows - 1) + kUnderlineOffset +
                       kUnderlineThickness + 4;
  if (spec.page_width < needed_w || spec.page_height < needed_h || spec.page_width < 8 * kGlyphAdvance * 2 + kLeftColumnX + 16) {
    throw DataError("page " + std::to_string(spec.page_width) + "x" +
                    std::to_string(spec.page_height) + " too small for layout (needs " +
                    std::to_string(needed_w) + "x" + std::to_string(needed_h) + ")");
  }
  const std::size_t held_out = spec.held_out_docs.value_or(n_docs / 5);
  if (held_out > n_docs) throw ConfigError("held_out_docs exceeds n_docs");

  std::vector<SyntheticDocument> out;
  out.reserve(n_docs);
  for (std::size_t index = 0; index < n_docs; ++index) {
    Rng rng(corpus_seed ^ static_cast<std::uint64_t>(index));
    SyntheticDocument sd;
    Document& doc = sd.doc;
    doc.id = "doc-" + std::to_string(corpus_seed) + "-" + std::to_string(index);
    doc.width = spec.page_width;
    doc.height = spec.page_height;
    doc.image.width = static_cast<std::size_t>(spec.page_width);
    doc.image.height = static_cast<std::size_t>(spec.page_height);
    doc.image.pixels.assign(doc.image.width * doc.image.height, 255);
    doc.doc_class = static_cast<int>(rng.uniform_int(kNumTemplates));
    draw_template(doc.image, *doc.doc_class);

    auto pick = [&](const std::vector<std::string>& pool) {
      return pool[rng.uniform_int(pool.size())];
    };
    auto jitter = [&] { return static_cast<int>(rng.uniform_int(4)); };

    int x = kLeftColumnX + jitter();
    for (int t = 0; t < 2; ++t) {
      WordBox wb = render_word(doc.image, pick(kTitleWords), x, kTitleY);
      wb.label = kOther;
      x = wb.x3() + 2 + 2 * kGlyphAdvance;
      doc.words.push_back(std::move(wb));
    }

    const int rows = spec.min_rows + static_cast<int>(rng.uniform_int(
                                         static_cast<std::uint64_t>(spec.max_rows - spec.min_rows + 1)));
    bool previous_header = false;
    for (int r = 0; r < rows; ++r) {
      const int y = kFirstRowY + r * kRowPitch;
      const bool header = !previous_header && rng.bernoulli(spec.header_probability);
      previous_header = header;
      WordBox key = render_word(doc.image, pick(kKeyWords), kLeftColumnX + jitter(), y);
      WordBox value = render_word(doc.image, pick(kValueWords), right_column_x + jitter(), y);
      if (header) {
        key.label = value.label = kHeader;
        for (const WordBox* wb : {&key, &value}) {
          fill_rect(doc.image, wb->x1(), y + kUnderlineOffset, wb->x3(),
                    y + kUnderlineOffset + kUnderlineThickness - 1);
        }
      } else {
        key.label = kQuestion;
        value.label = kAnswer;
      }
      doc.words.push_back(std::move(key));
      doc.words.push_back(std::move(value));
    }
    sd.held_out = index >= n_docs - held_out;
    validate_document(doc);
    out.push_back(std::move(sd));
  }
  return out;
}

std::vector<bool> vision_dependent_words(const Document& doc) {
  std::vector<bool> out(doc.words.size());
  for (std::size_t i = 0; i < doc.words.size(); ++i) {
    const auto& l = doc.words[i].label;
    out[i] = l.has_value() && *l != kOther;
  }
  return out;
}

void write_corpus(const std::string& dir, const std::vector<SyntheticDocument>& docs) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "docs");
  fs::create_directories(fs::path(dir) / "images");
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& sd : docs) {
    const std::string ocr = "docs/" + sd.doc.id + ".json";
    const std::string img = "images/" + sd.doc.id + ".pgm";
    save_document(sd.doc, (fs::path(dir) / ocr).string(), (fs::path(dir) / img).string());
    manifest.push_back({{"ocr_path", ocr}, {"image_path", img}, {"split", sd.held_out ? "test" : "train"}});
  }
  write_file((fs::path(dir) / "manifest.json").string(), manifest.dump(1) + "\n");
}

std::vector<CorpusEntry> load_corpus(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("malformed corpus manifest at byte " + std::to_string(e.byte));
  }
  if (!manifest.is_array()) throw DataError("corpus manifest must be a JSON list");
  const fs::path base = fs::path(manifest_path).parent_path();
  std::vector<CorpusEntry> out;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& e = manifest[i];
    if (!e.is_object() || !e.contains("ocr_path") || !e.contains("image_path") ||
        !e["ocr_path"].is_string() || !e["image_path"].is_string()) {
      throw DataError("corpus manifest entry " + std::to_string(i) + " malformed");
    }
    const std::string split = e.value("split", "train");
    if (split != "train" && split != "test") {
      throw DataError("corpus manifest entry " + std::to_string(i) + " has unknown split " + split);
    }
    CorpusEntry ce;
    ce.doc = load_document((base / e["ocr_path"].get<std::string>()).string(),
                           (base / e["image_path"].get<std::string>()).string());
    ce.held_out = split == "test";
    out.push_back(std::move(ce));
  }
  return out;
}

}  // namespace docformer
