#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "docformer/document.hpp"
#include "docformer/ops.hpp"
#include "docformer/params.hpp"
#include "docformer/spatial.hpp"

namespace docformer {

inline constexpr std::int64_t kPadId = 0;
inline constexpr std::int64_t kClsId = 1;
inline constexpr std::int64_t kMaskId = 2;
inline constexpr std::int64_t kUnkId = 3;
inline constexpr std::size_t kNumReserved = 4;

// Subword vocabulary: reserved ids 0..3, then the inventory in lexicographic
// order. Continuation pieces carry a "##" prefix.
class Vocab {
 public:
  Vocab();

  // Inventory = every character (bare and "##"), then the most frequent
  // lowercased words until max_size is reached. Words seen fewer than
  // min_word_count times are left to subword pieces.
  static Vocab build(const std::vector<Document>& docs, std::size_t max_size = 2000,
                     std::size_t min_word_count = 2);
  static Vocab from_tokens(std::vector<std::string> tokens);

  // One token per line; line k holds id k + 4.
  static Vocab load(const std::string& path);
  void save(const std::string& path) const;
  std::string serialize() const;
  static Vocab parse(const std::string& text);

  std::size_t size() const { return tokens_.size(); }
  std::optional<std::int64_t> find(const std::string& token) const;
  const std::string& token(std::int64_t id) const;

  // Greedy longest-match. A word with an uncovered character becomes [UNK].
  std::vector<std::int64_t> encode_word(const std::string& word) const;

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::int64_t> ids_;
};

std::string lowercase(const std::string& s);
// Splits UTF-8 text into code points (invalid bytes become single units).
std::vector<std::string> utf8_units(const std::string& s);

struct Tokenized {
  std::vector<std::int64_t> token_ids;   // N
  std::vector<std::int64_t> word_index;  // N; -1 at [CLS] and [PAD]
  Mask mask;                             // N; 1 = real token ([CLS] included)
};

// [CLS] + the first N-1 subword tokens of the page, padded with [PAD].
Tokenized tokenize(const Document& doc, const Vocab& vocab, std::size_t n);

struct FeatureConfig {
  std::size_t d = 64;
  std::size_t n = 64;
  int num_bins = 128;
  std::size_t image_h = 128;
  std::size_t image_w = 128;
  std::array<std::size_t, 3> cnn_channels{16, 32, 64};
  std::size_t vocab_size = 0;

  static constexpr std::size_t kCnnStride = 8;
  std::size_t cells() const { return (image_h / kCnnStride) * (image_w / kCnnStride); }
  void validate() const;
};

// Model-ready view of one document; independent of trainable parameters.
struct EncodedDocument {
  std::string id;
  Tokenized tokens;
  std::vector<std::int64_t> labels;     // N; kIgnoreIndex where no label
  std::vector<std::int64_t> word_labels;  // one per OCR word, truncated ones included
  std::vector<SpatialRecord> spatial;   // N; [CLS] covers the page
  Tensor image;                         // [1, image_h, image_w]
  std::optional<int> doc_class;
};

EncodedDocument encode_document(const Document& doc, const Vocab& vocab, const FeatureConfig& cfg);

// Lookup tables for one modality. Each scalar sub-feature has its own
// [num_bins, d] table; the sub-embeddings are summed together with p_abs.
struct SpatialTables {
  Tensor x1, x3, w;
  std::array<Tensor, kRelativeFeatures> rel_x;
  Tensor y1, y3, h;
  std::array<Tensor, kRelativeFeatures> rel_y;
  Tensor p_abs;  // [N, d]

  static SpatialTables init(const FeatureConfig& cfg, Rng& rng);
  void collect(ParamList& out, const std::string& prefix) const;
};

struct FeatureParams {
  Tensor word_embedding;  // W_t [vocab, d]
  std::array<Tensor, 3> conv_w;  // [c_out, c_in, 3, 3]
  std::array<Tensor, 3> conv_b;
  Tensor conv1x1_w;  // [d, c, 1, 1]
  Tensor conv1x1_b;  // [d]
  Tensor visual_linear_w;  // [cells, N]
  Tensor visual_linear_b;  // [N]
  SpatialTables visual_spatial;
  SpatialTables text_spatial;

  static FeatureParams init(const FeatureConfig& cfg, Rng& rng);
  void collect(ParamList& out, const std::string& prefix = "features.") const;
};

struct FeatureBundle {
  Tensor visual;          // V̄ [N, d]
  Tensor text;            // T̄ [N, d]
  Tensor visual_spatial;  // V̄_s [N, d]
  Tensor text_spatial;    // T̄_s [N, d]
  Mask mask;
  std::vector<std::int64_t> token_ids;
  std::vector<SpatialRecord> spatial;
};

Tensor embed_text(std::span<const std::int64_t> token_ids, const FeatureParams& params);
Tensor embed_visual(const Tensor& image, const FeatureParams& params, const FeatureConfig& cfg);
Tensor embed_spatial(const std::vector<SpatialRecord>& records, const SpatialTables& tables);

// token_ids and image override the document's own (MLM corruption, TDI swap).
FeatureBundle compute_features(const EncodedDocument& doc, const FeatureParams& params,
                               const FeatureConfig& cfg,
                               const std::vector<std::int64_t>* token_ids = nullptr,
                               const Tensor* image = nullptr);

}  // namespace docformer
