#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "docformer/tensor.hpp"

namespace docformer {

// 8-bit grayscale raster, row-major, 0 = black, 255 = white.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
  bool operator==(const GrayImage&) const = default;
};

// Corners in pixel units: top-left, top-right, bottom-right, bottom-left,
// stored as x1,y1,x2,y2,x3,y3,x4,y4.
struct WordBox {
  std::string text;
  std::array<int, 8> box{};
  std::optional<int> label;

  int x1() const { return box[0]; }
  int y1() const { return box[1]; }
  int x3() const { return box[4]; }
  int y3() const { return box[5]; }
  bool operator==(const WordBox&) const = default;
};

// Words are kept in OCR emission order, which is not necessarily reading order.
struct Document {
  std::string id;
  int width = 0;
  int height = 0;
  std::vector<WordBox> words;
  GrayImage image;
  std::optional<int> doc_class;

  bool operator==(const Document&) const = default;
};

// Throws DataError naming the offending word index.
void validate_document(const Document& doc);

// OCR JSON schema:
// {"id":str,"width":int,"height":int,"class":int|null,
//  "words":[{"text":str,"box":[8 ints],"label":int|null}]}
// The image field of the result is left empty.
Document parse_ocr_json(const std::string& text);
std::string to_ocr_json(const Document& doc);

// Binary PGM ("P5", maxval 255).
GrayImage parse_pgm(const std::string& bytes);
std::string to_pgm(const GrayImage& image);
GrayImage read_pgm(const std::string& path);
void write_pgm(const std::string& path, const GrayImage& image);

Document load_document(const std::string& ocr_json_path, const std::string& image_path);
void save_document(const Document& doc, const std::string& ocr_json_path,
                   const std::string& image_path);

// Nearest-neighbour resize to target_h x target_w, scaled to [0,1] then
// shifted by -0.5. Target extents must be multiples of `stride`.
Tensor image_to_model_input(const GrayImage& image, std::size_t target_h, std::size_t target_w,
                            std::size_t stride = 1);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

}  // namespace docformer
