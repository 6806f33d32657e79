#pragma once

// Binary PPM (P6) images and base64, the only image codec in the project.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gawwn/tensor.hpp"

namespace gawwn {

/// [3,H,W] in [-1,1] -> P6 bytes; values map to round((v+1)/2 * 255), clamped.
std::string encode_ppm(const Tensor& image);
/// P6 bytes (maxval 255) -> [3,H,W] in [-1,1]. Throws FormatError.
Tensor decode_ppm(std::string_view bytes);

void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);

/// Tiles [N,3,S,S] (or a list of [3,S,S]) row-major into one image, `columns` per row,
/// separated by a 1-pixel white border.
Tensor tile_images(std::span<const Tensor> images, std::size_t columns);

std::string base64_encode(std::string_view bytes);
/// Throws FormatError on characters outside the standard alphabet or bad padding.
std::string base64_decode(std::string_view text);

/// Reads a whole file; IoError when it cannot be opened.
std::string read_file(const std::string& path);
/// Writes via a temporary sibling and rename so readers never see a partial file.
void write_file_atomic(const std::string& path, std::string_view bytes);

}  // namespace gawwn
