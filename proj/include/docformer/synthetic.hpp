#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "docformer/document.hpp"

namespace docformer {

// Token label ids of the synthetic form corpus.
enum FormLabel : int { kOther = 0, kHeader = 1, kQuestion = 2, kAnswer = 3 };
inline constexpr int kNumFormLabels = 4;
inline constexpr int kNumTemplates = 4;

const std::vector<std::string>& form_label_names();

struct SyntheticSpec {
  int page_width = 256;
  int page_height = 256;
  int min_rows = 8;
  int max_rows = 13;
  // Probability that a row is an underlined header instead of a key/value
  // pair; header rows never follow each other.
  double header_probability = 0.3;
  // Trailing documents flagged as held out. Defaults to n_docs / 5.
  std::optional<std::size_t> held_out_docs;
};

struct SyntheticDocument {
  Document doc;
  bool held_out = false;
};

// Glyph geometry of the fixed 5x7 block font.
inline constexpr int kGlyphWidth = 5;
inline constexpr int kGlyphHeight = 7;
inline constexpr int kGlyphAdvance = 6;

// 5x7 bitmap for a character: a solid frame plus a 3x5 interior code that is
// unique per supported character ([a-z0-9]). Bit (row * 5 + col) set = ink.
std::uint64_t glyph_bits(char c);

// Renders text with its top-left corner at (x, y); returns the word box.
WordBox render_word(GrayImage& image, const std::string& text, int x, int y);

// Layout rows sit on a 16-pixel pitch. Headers and key/value rows share
// word pools and positions, so telling them apart requires the underline.
// The document class is the decoration template, visible only in the image.
// Per-document seed is corpus_seed XOR document index.
std::vector<SyntheticDocument> generate_synthetic_corpus(std::uint64_t corpus_seed,
                                                         std::size_t n_docs,
                                                         const SyntheticSpec& spec = {});

// Words in every key/value or header row: the ones whose label cannot be
// decided from text and layout alone.
std::vector<bool> vision_dependent_words(const Document& doc);

struct CorpusEntry {
  Document doc;
  bool held_out = false;
};

// Writes docs/<id>.json, images/<id>.pgm and manifest.json under dir.
// Manifest: [{"ocr_path":..., "image_path":..., "split":"train"|"test"}],
// paths relative to dir.
void write_corpus(const std::string& dir, const std::vector<SyntheticDocument>& docs);
std::vector<CorpusEntry> load_corpus(const std::string& manifest_path);

}  // namespace docformer
