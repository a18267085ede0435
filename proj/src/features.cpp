#include "docformer/features.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "docformer/error.hpp"

namespace docformer {
namespace {

const std::array<std::string, kNumReserved> kReserved = {"[PAD]", "[CLS]", "[MASK]", "[UNK]"};

bool storable(const std::string& unit) {
  if (unit.size() != 1) return true;
  const auto c = static_cast<unsigned char>(unit[0]);
  return c > 0x20 && c != 0x7F;
}

// Embedding tables of the spatial sums share the budget of one unit-scale
// table so the summed embedding starts at a comparable scale to W_t.
constexpr double kWordInitStd = 0.1;
constexpr double kSpatialInitStd = 0.1 / 4.123105625617661;  // 0.1 / sqrt(17)

}  // namespace

std::string lowercase(const std::string& s) {
  std::string out = s;
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> utf8_units(const std::string& s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if (c >= 0xF0 && c < 0xF8) len = 4;
    else if (c >= 0xE0) len = c < 0xF0 ? 3 : 1;
    else if (c >= 0xC0) len = 2;
    if (i + len > s.size()) len = 1;
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    }
    out.push_back(s.substr(i, len));
    i += len;
  }
  return out;
}

Vocab::Vocab() {
  for (std::size_t i = 0; i < kNumReserved; ++i) {
    tokens_.push_back(kReserved[i]);
    ids_.emplace(kReserved[i], static_cast<std::int64_t>(i));
  }
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  Vocab v;
  std::sort(tokens.begin(), tokens.end());
  for (auto& t : tokens) v.tokens_.push_back(std::move(t));
  for (std::size_t i = kNumReserved; i < v.tokens_.size(); ++i) {
    const auto& t = v.tokens_[i];
    if (t.empty() || t.find('\n') != std::string::npos || t.find('\r') != std::string::npos) {
      throw DataError("vocab token " + std::to_string(i) + " is empty or spans lines");
    }
    if (!v.ids_.emplace(t, static_cast<std::int64_t>(i)).second) {
      throw DataError("vocab token \"" + t + "\" appears twice");
    }
  }
  return v;
}

Vocab Vocab::build(const std::vector<Document>& docs, std::size_t max_size,
                   std::size_t min_word_count) {
  std::map<std::string, std::size_t> word_counts;
  std::map<std::string, bool> chars;
  for (const auto& doc : docs) {
    for (const auto& w : doc.words) {
      const std::string lower = lowercase(w.text);
      bool ok = !lower.empty();
      for (const auto& u : utf8_units(lower)) {
        if (storable(u)) chars[u] = true;
        else ok = false;
      }
      if (ok) ++word_counts[lower];
    }
  }
  std::vector<std::string> inventory;
  for (const auto& [c, _] : chars) {
    inventory.push_back(c);
    inventory.push_back("##" + c);
  }
  if (inventory.size() + kNumReserved > max_size) {
    throw ConfigError("vocab size cap " + std::to_string(max_size) + " cannot hold the " +
                      std::to_string(chars.size()) + " characters of the corpus");
  }
  std::vector<std::pair<std::string, std::size_t>> words(word_counts.begin(), word_counts.end());
  std::stable_sort(words.begin(), words.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [word, count] : words) {
    if (inventory.size() + kNumReserved >= max_size) break;
    if (count < min_word_count) break;
    if (utf8_units(word).size() < 2) continue;  // already present as a character
    inventory.push_back(word);
  }
  return from_tokens(std::move(inventory));
}

std::string Vocab::serialize() const {
  std::string out;
  for (std::size_t i = kNumReserved; i < tokens_.size(); ++i) out += tokens_[i] + "\n";
  return out;
}

Vocab Vocab::parse(const std::string& text) {
  std::vector<std::string> tokens;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) throw DataError("vocab line " + std::to_string(tokens.size() + 1) + " is empty");
    tokens.push_back(line);
  }
  Vocab v = from_tokens(tokens);
  // from_tokens sorts; a file out of order would silently renumber ids.
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (v.tokens_[i + kNumReserved] != tokens[i]) {
      throw DataError("vocab file is not in lexicographic order at line " + std::to_string(i + 1));
    }
  }
  return v;
}

Vocab Vocab::load(const std::string& path) { return parse(read_file(path)); }
void Vocab::save(const std::string& path) const { write_file(path, serialize()); }

std::optional<std::int64_t> Vocab::find(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocab::token(std::int64_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw DimensionError("token id " + std::to_string(id) + " outside vocab of size " +
                         std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::int64_t> Vocab::encode_word(const std::string& word) const {
  const auto units = utf8_units(lowercase(word));
  std::vector<std::int64_t> out;
  std::size_t pos = 0;
  while (pos < units.size()) {
    bool matched = false;
    for (std::size_t end = units.size(); end > pos; --end) {
      std::string piece = pos == 0 ? "" : "##";
      for (std::size_t k = pos; k < end; ++k) piece += units[k];
      if (auto id = find(piece)) {
        out.push_back(*id);
        pos = end;
        matched = true;
        break;
      }
    }
    if (!matched) return {kUnkId};
  }
  return out;
}

Tokenized tokenize(const Document& doc, const Vocab& vocab, std::size_t n) {
  if (n < 1) throw ConfigError("sequence length must be at least 1");
  Tokenized t;
  t.token_ids.assign(n, kPadId);
  t.word_index.assign(n, -1);
  t.mask.assign(n, 0);
  t.token_ids[0] = kClsId;
  t.mask[0] = 1;
  std::size_t pos = 1;
  for (std::size_t w = 0; w < doc.words.size() && pos < n; ++w) {
    for (std::int64_t id : vocab.encode_word(doc.words[w].text)) {
      if (pos >= n) break;
      t.token_ids[pos] = id;
      t.word_index[pos] = static_cast<std::int64_t>(w);
      t.mask[pos] = 1;
      ++pos;
    }
  }
  return t;
}

void FeatureConfig::validate() const {
  if (d == 0 || n < 2) throw ConfigError("model.d must be positive and model.n at least 2");
  if (num_bins < 2) throw ConfigError("model.num_bins must be at least 2");
  if (image_h == 0 || image_w == 0 || image_h % kCnnStride || image_w % kCnnStride) {
    throw ConfigError("image extents " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                      " must be positive multiples of " + std::to_string(kCnnStride));
  }
  for (auto c : cnn_channels)
    if (c == 0) throw ConfigError("CNN channels must be positive");
  if (vocab_size <= kNumReserved) throw ConfigError("vocab size must exceed the reserved ids");
}

EncodedDocument encode_document(const Document& doc, const Vocab& vocab, const FeatureConfig& cfg) {
  EncodedDocument e;
  e.id = doc.id;
  e.doc_class = doc.doc_class;
  e.tokens = tokenize(doc, vocab, cfg.n);
  e.image = image_to_model_input(doc.image, cfg.image_h, cfg.image_w, FeatureConfig::kCnnStride);
  std::vector<SpatialRecord> words;
  if (!doc.words.empty()) words = normalize_and_bin(doc, cfg.num_bins);
  e.labels.assign(cfg.n, kIgnoreIndex);
  e.word_labels.reserve(doc.words.size());
  for (const auto& w : doc.words) e.word_labels.push_back(w.label ? *w.label : kIgnoreIndex);
  e.spatial.assign(cfg.n, pad_record(cfg.num_bins));
  e.spatial[0] = page_record(doc.width, doc.height, cfg.num_bins);
  for (std::size_t t = 0; t < cfg.n; ++t) {
    const auto w = e.tokens.word_index[t];
    if (w >= 0) {
      e.spatial[t] = words[static_cast<std::size_t>(w)];
      const auto& label = doc.words[static_cast<std::size_t>(w)].label;
      if (label) e.labels[t] = *label;
    }
    e.spatial[t].abs_pos = static_cast<int>(t);
  }
  return e;
}

SpatialTables SpatialTables::init(const FeatureConfig& cfg, Rng& rng) {
  const Shape s{static_cast<std::size_t>(cfg.num_bins), cfg.d};
  SpatialTables t;
  t.x1 = param_normal(rng, s, kSpatialInitStd);
  t.x3 = param_normal(rng, s, kSpatialInitStd);
  t.w = param_normal(rng, s, kSpatialInitStd);
  for (auto& r : t.rel_x) r = param_normal(rng, s, kSpatialInitStd);
  t.y1 = param_normal(rng, s, kSpatialInitStd);
  t.y3 = param_normal(rng, s, kSpatialInitStd);
  t.h = param_normal(rng, s, kSpatialInitStd);
  for (auto& r : t.rel_y) r = param_normal(rng, s, kSpatialInitStd);
  t.p_abs = param_normal(rng, {cfg.n, cfg.d}, kSpatialInitStd);
  return t;
}

void SpatialTables::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + "x1", x1});
  out.push_back({prefix + "x3", x3});
  out.push_back({prefix + "w", w});
  for (std::size_t k = 0; k < kRelativeFeatures; ++k)
    out.push_back({prefix + "rel_x" + std::to_string(k), rel_x[k]});
  out.push_back({prefix + "y1", y1});
  out.push_back({prefix + "y3", y3});
  out.push_back({prefix + "h", h});
  for (std::size_t k = 0; k < kRelativeFeatures; ++k)
    out.push_back({prefix + "rel_y" + std::to_string(k), rel_y[k]});
  out.push_back({prefix + "p_abs", p_abs});
}

FeatureParams FeatureParams::init(const FeatureConfig& cfg, Rng& rng) {
  cfg.validate();
  FeatureParams p;
  p.word_embedding = param_normal(rng, {cfg.vocab_size, cfg.d}, kWordInitStd);
  std::size_t c_in = 1;
  for (std::size_t k = 0; k < 3; ++k) {
    const std::size_t c_out = cfg.cnn_channels[k];
    p.conv_w[k] = param_he(rng, {c_out, c_in, 3, 3}, c_in * 9);
    p.conv_b[k] = param_full({c_out}, 0.0);
    c_in = c_out;
  }
  p.conv1x1_w = param_he(rng, {cfg.d, c_in, 1, 1}, c_in);
  p.conv1x1_b = param_full({cfg.d}, 0.0);
  p.visual_linear_w = param_lecun(rng, {cfg.cells(), cfg.n}, cfg.cells());
  p.visual_linear_b = param_full({cfg.n}, 0.0);
  p.visual_spatial = SpatialTables::init(cfg, rng);
  p.text_spatial = SpatialTables::init(cfg, rng);
  return p;
}

void FeatureParams::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + "word_embedding", word_embedding});
  for (std::size_t k = 0; k < 3; ++k) {
    out.push_back({prefix + "cnn.conv" + std::to_string(k) + ".w", conv_w[k]});
    out.push_back({prefix + "cnn.conv" + std::to_string(k) + ".b", conv_b[k]});
  }
  out.push_back({prefix + "conv1x1.w", conv1x1_w});
  out.push_back({prefix + "conv1x1.b", conv1x1_b});
  out.push_back({prefix + "visual_linear.w", visual_linear_w});
  out.push_back({prefix + "visual_linear.b", visual_linear_b});
  visual_spatial.collect(out, prefix + "visual_spatial.");
  text_spatial.collect(out, prefix + "text_spatial.");
}

Tensor embed_text(std::span<const std::int64_t> token_ids, const FeatureParams& params) {
  return embedding_lookup(params.word_embedding, token_ids);
}

Tensor embed_visual(const Tensor& image, const FeatureParams& params, const FeatureConfig& cfg) {
  if (image.shape() != Shape{1, cfg.image_h, cfg.image_w}) {
    throw DimensionError("embed_visual: image " + shape_str(image.shape()) + " but config expects " +
                         shape_str({1, cfg.image_h, cfg.image_w}));
  }
  Tensor x = image;
  for (std::size_t k = 0; k < 3; ++k) x = relu(conv2d(x, params.conv_w[k], params.conv_b[k], 2, 1));
  x = conv2d(x, params.conv1x1_w, params.conv1x1_b, 1, 0);  // [d, h_l, w_l]
  x = reshape(x, {x.dim(0), x.dim(1) * x.dim(2)});
  x = add(matmul(x, params.visual_linear_w), params.visual_linear_b);  // [d, N]
  return transpose(x, 0, 1);
}

Tensor embed_spatial(const std::vector<SpatialRecord>& records, const SpatialTables& tables) {
  const std::size_t n = records.size();
  auto ids = [&](auto field) {
    std::vector<std::int64_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = field(records[i]);
    return v;
  };
  auto lookup = [&](const Tensor& table, auto field) {
    const auto v = ids(field);
    return embedding_lookup(table, v);
  };
  Tensor out = lookup(tables.p_abs, [](const SpatialRecord& r) { return r.abs_pos; });
  out = add(out, lookup(tables.x1, [](const SpatialRecord& r) { return r.x1; }));
  out = add(out, lookup(tables.x3, [](const SpatialRecord& r) { return r.x3; }));
  out = add(out, lookup(tables.w, [](const SpatialRecord& r) { return r.w; }));
  for (std::size_t k = 0; k < kRelativeFeatures; ++k)
    out = add(out, lookup(tables.rel_x[k], [k](const SpatialRecord& r) { return r.rel_x[k]; }));
  out = add(out, lookup(tables.y1, [](const SpatialRecord& r) { return r.y1; }));
  out = add(out, lookup(tables.y3, [](const SpatialRecord& r) { return r.y3; }));
  out = add(out, lookup(tables.h, [](const SpatialRecord& r) { return r.h; }));
  for (std::size_t k = 0; k < kRelativeFeatures; ++k)
    out = add(out, lookup(tables.rel_y[k], [k](const SpatialRecord& r) { return r.rel_y[k]; }));
  return out;
}

FeatureBundle compute_features(const EncodedDocument& doc, const FeatureParams& params,
                               const FeatureConfig& cfg, const std::vector<std::int64_t>* token_ids,
                               const Tensor* image) {
  FeatureBundle b;
  b.token_ids = token_ids ? *token_ids : doc.tokens.token_ids;
  if (b.token_ids.size() != cfg.n || doc.spatial.size() != cfg.n) {
    throw DimensionError("compute_features: sequence length " + std::to_string(b.token_ids.size()) +
                         " but config N is " + std::to_string(cfg.n));
  }
  b.mask = doc.tokens.mask;
  b.spatial = doc.spatial;
  b.text = embed_text(b.token_ids, params);
  b.visual = embed_visual(image ? *image : doc.image, params, cfg);
  b.visual_spatial = embed_spatial(doc.spatial, params.visual_spatial);
  b.text_spatial = embed_spatial(doc.spatial, params.text_spatial);
  return b;
}

}  // namespace docformer
