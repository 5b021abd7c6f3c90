#pragma once

// Binary PPM (P6) / PGM (P5) reading and writing.

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "uacanet/tensor.hpp"

namespace uacanet {

class PnmError : public std::runtime_error {
 public:
  PnmError(const std::string& path, std::size_t offset, const std::string& what)
      : std::runtime_error(path + ": " + what + " at byte " + std::to_string(offset)),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Decoded raster with samples normalised to [0,1], interleaved by channel.
struct PnmImage {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> samples;
};

namespace detail {

class PnmParser {
 public:
  PnmParser(std::string path, std::vector<unsigned char> bytes)
      : path_(std::move(path)), bytes_(std::move(bytes)) {}

  PnmImage parse() {
    if (bytes_.size() < 2 || bytes_[0] != 'P' || (bytes_[1] != '5' && bytes_[1] != '6')) {
      throw PnmError(path_, 0, "bad magic, expected P5 or P6");
    }
    PnmImage img;
    img.channels = bytes_[1] == '6' ? 3 : 1;
    pos_ = 2;
    img.width = read_header_int("width");
    img.height = read_header_int("height");
    const int maxval = read_header_int("maxval");
    if (img.width < 1 || img.height < 1) throw PnmError(path_, pos_, "non-positive image size");
    if (maxval < 1 || maxval > 65535) throw PnmError(path_, pos_, "maxval out of range");
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw PnmError(path_, pos_, "missing whitespace after header");
    }
    ++pos_;
    const std::size_t bps = maxval > 255 ? 2 : 1;
    const std::size_t count = static_cast<std::size_t>(img.width) * img.height * img.channels;
    if (bytes_.size() - pos_ < count * bps) {
      throw PnmError(path_, bytes_.size(), "truncated raster, expected " + std::to_string(count * bps) +
                                               " bytes from offset " + std::to_string(pos_));
    }
    img.samples.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      unsigned v = bytes_[pos_ + i * bps];
      if (bps == 2) v = (v << 8) | bytes_[pos_ + i * bps + 1];
      img.samples[i] = static_cast<float>(v) / static_cast<float>(maxval);
    }
    maxval_ = maxval;
    return img;
  }

  int maxval() const { return maxval_; }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  int read_header_int(const char* field) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    long value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 1'000'000) throw PnmError(path_, start, std::string("header ") + field + " too large");
      ++pos_;
    }
    if (pos_ == start) throw PnmError(path_, start, std::string("expected header ") + field);
    return static_cast<int>(value);
  }

  std::string path_;
  std::vector<unsigned char> bytes_;
  std::size_t pos_ = 0;
  int maxval_ = 0;
};

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PnmError(path.string(), 0, "cannot open file");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

inline PnmImage read_pnm(const std::filesystem::path& path) {
  return detail::PnmParser(path.string(), detail::read_bytes(path)).parse();
}

/// RGB image as [3,H,W] in [0,1]. Grayscale files are replicated.
inline Tensor<float> read_image(const std::filesystem::path& path) {
  const auto img = read_pnm(path);
  const std::int64_t h = img.height, w = img.width;
  Tensor<float> out = Tensor<float>::zeros({3, h, w});
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t i = 0; i < h * w; ++i)
      out[c * h * w + i] = img.samples[static_cast<std::size_t>(i * img.channels + (img.channels == 3 ? c : 0))];
  return out;
}

/// Binary mask as [1,H,W]; a sample is foreground when its 8-bit value is >= 128.
inline Tensor<float> read_mask(const std::filesystem::path& path) {
  const auto img = read_pnm(path);
  const std::int64_t h = img.height, w = img.width;
  Tensor<float> out = Tensor<float>::zeros({1, h, w});
  for (std::int64_t i = 0; i < h * w; ++i) {
    float v = img.samples[static_cast<std::size_t>(i * img.channels)];
    out[i] = std::lround(v * 255.0f) >= 128 ? 1.0f : 0.0f;
  }
  return out;
}

inline unsigned char to_byte(float v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

/// Writes [1,H,W] or [H,W] values in [0,1] as an 8-bit PGM.
inline void write_pgm(const std::filesystem::path& path, std::span<const float> values,
                      std::int64_t height, std::int64_t width) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  for (std::int64_t i = 0; i < height * width; ++i) out.put(static_cast<char>(to_byte(values[i])));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline void write_mask(const std::filesystem::path& path, const Tensor<float>& mask) {
  write_pgm(path, mask.data(), mask.dim(mask.ndim() - 2), mask.dim(mask.ndim() - 1));
}

/// Writes a [3,H,W] image in [0,1] as an 8-bit PPM.
inline void write_image(const std::filesystem::path& path, const Tensor<float>& image) {
  const std::int64_t h = image.dim(1), w = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << w << ' ' << h << "\n255\n";
  for (std::int64_t i = 0; i < h * w; ++i)
    for (std::int64_t c = 0; c < 3; ++c) out.put(static_cast<char>(to_byte(image[c * h * w + i])));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace uacanet
