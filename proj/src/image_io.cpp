#include "gawwn/image_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace gawwn {

std::string encode_ppm(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("encode_ppm: expected [3,H,W]");
  const std::size_t H = image.dim(1), W = image.dim(2);
  std::string out = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + 3 * H * W);
  auto v = image.values();
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double q = std::round((std::clamp(v[(c * H + y) * W + x], -1.0, 1.0) + 1.0) / 2.0 * 255.0);
        out[header + (y * W + x) * 3 + c] = static_cast<char>(static_cast<unsigned char>(q));
      }
  return out;
}

Tensor decode_ppm(std::string_view bytes) {
  std::size_t pos = 0;
  // Header tokens separated by whitespace, with '#' comments.
  auto token = [&]() -> std::string {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw FormatError("ppm: truncated header at byte offset " + std::to_string(start));
    return std::string(bytes.substr(start, pos - start));
  };
  if (token() != "P6") throw FormatError("ppm: not a binary P6 file");
  auto number = [&](const char* what) {
    const std::string t = token();
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(t, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != t.size() || v == 0) throw FormatError(std::string("ppm: bad ") + what + " '" + t + "'");
    return static_cast<std::size_t>(v);
  };
  const std::size_t W = number("width"), H = number("height"), maxval = number("maxval");
  if (maxval != 255) throw FormatError("ppm: only maxval 255 is supported");
  ++pos;  // single whitespace byte after maxval
  if (bytes.size() < pos + 3 * W * H)
    throw FormatError("ppm: pixel data truncated at byte offset " + std::to_string(bytes.size()));
  Tensor image({3, H, W});
  auto v = image.values_mut();
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const auto b = static_cast<unsigned char>(bytes[pos + (y * W + x) * 3 + c]);
        v[(c * H + y) * W + x] = b / 255.0 * 2.0 - 1.0;
      }
  return image;
}

void write_ppm(const std::string& path, const Tensor& image) { write_file_atomic(path, encode_ppm(image)); }

Tensor read_ppm(const std::string& path) {
  try {
    return decode_ppm(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

Tensor tile_images(std::span<const Tensor> images, std::size_t columns) {
  if (images.empty() || columns == 0) throw UsageError("tile_images: nothing to tile");
  const std::size_t H = images[0].dim(images[0].rank() - 2), W = images[0].dim(images[0].rank() - 1);
  const std::size_t rows = (images.size() + columns - 1) / columns;
  const std::size_t cols = std::min(columns, images.size());
  const std::size_t OH = rows * (H + 1) + 1, OW = cols * (W + 1) + 1;
  Tensor out = Tensor::full({3, OH, OW}, 1.0);
  auto o = out.values_mut();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].numel() != 3 * H * W) throw DimensionError("tile_images: images differ in size");
    const std::size_t oy = 1 + (i / columns) * (H + 1), ox = 1 + (i % columns) * (W + 1);
    auto v = images[i].values();
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) o[(c * OH + oy + y) * OW + ox + x] = v[(c * H + y) * W + x];
  }
  return out;
}

namespace {
constexpr std::string_view kB64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::string_view bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t n = (static_cast<unsigned char>(bytes[i]) << 16) |
                            (static_cast<unsigned char>(bytes[i + 1]) << 8) | static_cast<unsigned char>(bytes[i + 2]);
    out += kB64[(n >> 18) & 63];
    out += kB64[(n >> 12) & 63];
    out += kB64[(n >> 6) & 63];
    out += kB64[n & 63];
  }
  if (i < bytes.size()) {
    std::uint32_t n = static_cast<unsigned char>(bytes[i]) << 16;
    if (i + 1 < bytes.size()) n |= static_cast<unsigned char>(bytes[i + 1]) << 8;
    out += kB64[(n >> 18) & 63];
    out += kB64[(n >> 12) & 63];
    out += i + 1 < bytes.size() ? kB64[(n >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::string base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw FormatError("base64: length is not a multiple of 4");
  std::array<int, 256> lookup;
  lookup.fill(-1);
  for (std::size_t i = 0; i < kB64.size(); ++i) lookup[static_cast<unsigned char>(kB64[i])] = static_cast<int>(i);
  std::string out;
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int vals[4];
    int pad = 0;
    for (int j = 0; j < 4; ++j) {
      const char ch = text[i + j];
      if (ch == '=' && i + 4 == text.size() && j >= 2) {
        vals[j] = 0;
        ++pad;
        continue;
      }
      if (pad) throw FormatError("base64: data after padding");
      vals[j] = lookup[static_cast<unsigned char>(ch)];
      if (vals[j] < 0) throw FormatError("base64: invalid character at offset " + std::to_string(i + j));
    }
    const std::uint32_t n = (vals[0] << 18) | (vals[1] << 12) | (vals[2] << 6) | vals[3];
    out += static_cast<char>((n >> 16) & 0xFF);
    if (pad < 2) out += static_cast<char>((n >> 8) & 0xFF);
    if (pad < 1) out += static_cast<char>(n & 0xFF);
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::string& path, std::string_view bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot move file into " + path);
}

}  // namespace gawwn
