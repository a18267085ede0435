#include "docformer/document.hpp"

#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "docformer/error.hpp"

namespace docformer {
namespace {

using nlohmann::json;

const json& require(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw DataError(where + ": missing key \"" + key + "\"");
  return *it;
}

int require_int(const json& v, const std::string& where) {
  if (!v.is_number_integer()) throw DataError(where + ": expected integer");
  const auto x = v.get<std::int64_t>();
  if (x < INT32_MIN || x > INT32_MAX) throw DataError(where + ": integer out of range");
  return static_cast<int>(x);
}

std::optional<int> optional_int(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  return require_int(*it, where + "." + key);
}

}  // namespace

void validate_document(const Document& doc) {
  if (doc.width <= 0 || doc.height <= 0) {
    throw DataError("document " + doc.id + ": page extents must be positive");
  }
  for (std::size_t i = 0; i < doc.words.size(); ++i) {
    const auto& b = doc.words[i].box;
    for (std::size_t k = 0; k < 8; ++k) {
      const int extent = (k % 2 == 0) ? doc.width : doc.height;
      if (b[k] < 0 || b[k] > extent) {
        throw DataError("document " + doc.id + ": word " + std::to_string(i) +
                        " box coordinate " + std::to_string(k) + " outside the page");
      }
    }
    if (b[4] < b[0] || b[5] < b[1]) {
      throw DataError("document " + doc.id + ": word " + std::to_string(i) +
                      " has bottom-right corner before top-left corner");
    }
  }
  if (!doc.image.pixels.empty() &&
      (doc.image.width != static_cast<std::size_t>(doc.width) ||
       doc.image.height != static_cast<std::size_t>(doc.height))) {
    throw DataError("document " + doc.id + ": image is " + std::to_string(doc.image.width) + "x" +
                    std::to_string(doc.image.height) + " but page is " +
                    std::to_string(doc.width) + "x" + std::to_string(doc.height));
  }
}

Document parse_ocr_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError("malformed OCR JSON at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  if (!j.is_object()) throw DataError("OCR JSON: top level must be an object");
  Document doc;
  const auto& id = require(j, "id", "OCR JSON");
  if (!id.is_string()) throw DataError("OCR JSON: id must be a string");
  doc.id = id.get<std::string>();
  doc.width = require_int(require(j, "width", "OCR JSON"), "OCR JSON.width");
  doc.height = require_int(require(j, "height", "OCR JSON"), "OCR JSON.height");
  doc.doc_class = optional_int(j, "class", "OCR JSON");
  const auto& words = require(j, "words", "OCR JSON");
  if (!words.is_array()) throw DataError("OCR JSON: words must be an array");
  for (std::size_t i = 0; i < words.size(); ++i) {
    const std::string where = "OCR JSON word " + std::to_string(i);
    const auto& w = words[i];
    if (!w.is_object()) throw DataError(where + ": expected object");
    WordBox wb;
    const auto& t = require(w, "text", where);
    if (!t.is_string()) throw DataError(where + ": text must be a string");
    wb.text = t.get<std::string>();
    const auto& box = require(w, "box", where);
    if (!box.is_array() || box.size() != 8) throw DataError(where + ": box must hold 8 integers");
    for (std::size_t k = 0; k < 8; ++k) wb.box[k] = require_int(box[k], where + ".box");
    wb.label = optional_int(w, "label", where);
    doc.words.push_back(std::move(wb));
  }
  validate_document(doc);
  return doc;
}

std::string to_ocr_json(const Document& doc) {
  json j;
  j["id"] = doc.id;
  j["width"] = doc.width;
  j["height"] = doc.height;
  j["class"] = doc.doc_class ? json(*doc.doc_class) : json(nullptr);
  json words = json::array();
  for (const auto& w : doc.words) {
    json o;
    o["text"] = w.text;
    o["box"] = w.box;
    o["label"] = w.label ? json(*w.label) : json(nullptr);
    words.push_back(std::move(o));
  }
  j["words"] = std::move(words);
  return j.dump() + "\n";
}

GrayImage parse_pgm(const std::string& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&](const char* what) {
    skip_space();
    std::size_t start = pos;
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (v > (1u << 20)) throw DataError(std::string("PGM: ") + what + " too large");
      ++pos;
    }
    if (pos == start) throw DataError(std::string("PGM: missing ") + what);
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw DataError("PGM: expected P5 magic");
  pos = 2;
  GrayImage img;
  img.width = read_uint("width");
  img.height = read_uint("height");
  const std::size_t maxval = read_uint("maxval");
  if (maxval != 255) throw DataError("PGM: maxval must be 255");
  if (img.width == 0 || img.height == 0) throw DataError("PGM: zero extent");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw DataError("PGM: malformed header");
  }
  ++pos;
  const std::size_t n = img.width * img.height;
  if (bytes.size() - pos < n) throw DataError("PGM: pixel data truncated");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return img;
}

std::string to_pgm(const GrayImage& image) {
  std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.append(image.pixels.begin(), image.pixels.end());
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

GrayImage read_pgm(const std::string& path) { return parse_pgm(read_file(path)); }
void write_pgm(const std::string& path, const GrayImage& image) { write_file(path, to_pgm(image)); }

Document load_document(const std::string& ocr_json_path, const std::string& image_path) {
  Document doc = parse_ocr_json(read_file(ocr_json_path));
  doc.image = read_pgm(image_path);
  validate_document(doc);
  return doc;
}

void save_document(const Document& doc, const std::string& ocr_json_path,
                   const std::string& image_path) {
  write_file(ocr_json_path, to_ocr_json(doc));
  write_pgm(image_path, doc.image);
}

Tensor image_to_model_input(const GrayImage& image, std::size_t target_h, std::size_t target_w,
                            std::size_t stride) {
  if (image.width == 0 || image.height == 0 || image.pixels.size() != image.width * image.height) {
    throw DataError("image_to_model_input: zero-extent or inconsistent image");
  }
  if (target_h == 0 || target_w == 0 || stride == 0 || target_h % stride || target_w % stride) {
    throw DimensionError("image_to_model_input: target " + std::to_string(target_h) + "x" +
                         std::to_string(target_w) + " not divisible by stride " +
                         std::to_string(stride));
  }
  std::vector<double> out(target_h * target_w);
  for (std::size_t y = 0; y < target_h; ++y) {
    const std::size_t sy = y * image.height / target_h;
    for (std::size_t x = 0; x < target_w; ++x) {
      const std::size_t sx = x * image.width / target_w;
      out[y * target_w + x] = image.at(sx, sy) / 255.0 - 0.5;
    }
  }
  return Tensor::from({1, target_h, target_w}, std::move(out));
}

}  // namespace docformer
