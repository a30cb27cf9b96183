#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "despeckle/errors.hpp"
#include "despeckle/image.hpp"

namespace despeckle {

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open for reading: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

// Pulls the next PGM header token, skipping whitespace and '#' comments.
// pos is advanced past the token; throws naming the byte offset on EOF.
inline std::string next_pgm_token(const std::vector<std::uint8_t>& bytes, std::size_t& pos,
                                  const char* field) {
  while (pos < bytes.size()) {
    if (std::isspace(bytes[pos])) {
      ++pos;
    } else if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  if (pos >= bytes.size())
    throw MalformedHeader(std::string("PGM header ends at byte ") + std::to_string(pos) +
                          " before field '" + field + "'");
  std::string tok;
  while (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#')
    tok.push_back(static_cast<char>(bytes[pos++]));
  return tok;
}

inline int parse_pgm_int(const std::string& tok, std::size_t pos, const char* field) {
  if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos)
    throw MalformedHeader(std::string("PGM field '") + field + "' near byte " +
                          std::to_string(pos) + " is not a number: '" + tok + "'");
  return std::stoi(tok);
}

inline Image load_pgm(const std::vector<std::uint8_t>& bytes, const std::string& path) {
  const bool binary = bytes[1] == '5';
  std::size_t pos = 2;
  const int w = parse_pgm_int(next_pgm_token(bytes, pos, "width"), pos, "width");
  const int h = parse_pgm_int(next_pgm_token(bytes, pos, "height"), pos, "height");
  const int maxval = parse_pgm_int(next_pgm_token(bytes, pos, "maxval"), pos, "maxval");
  if (w < 1 || h < 1)
    throw MalformedHeader("PGM dimensions must be positive: " + std::to_string(w) + "x" +
                          std::to_string(h) + " in " + path);
  if (maxval != 255)
    throw UnsupportedFormat("only 8-bit PGM (maxval 255) is supported, got maxval " +
                            std::to_string(maxval) + " in " + path);

  Image img(w, h);
  const std::size_t n = img.pixel_count();
  if (binary) {
    // Exactly one whitespace byte separates the header from raster data.
    if (pos >= bytes.size() || !std::isspace(bytes[pos]))
      throw MalformedHeader("P5 raster must start after a single whitespace at byte " +
                            std::to_string(pos));
    ++pos;
    if (bytes.size() - pos < n)
      throw TruncatedData("P5 raster truncated: need " + std::to_string(n) + " bytes from offset " +
                          std::to_string(pos) + ", file has " + std::to_string(bytes.size() - pos));
    for (std::size_t i = 0; i < n; ++i) img.data[i] = bytes[pos + i] / 255.0;
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      std::string tok;
      try {
        tok = next_pgm_token(bytes, pos, "pixel");
      } catch (const MalformedHeader&) {
        throw TruncatedData("P2 raster truncated: pixel " + std::to_string(i) + " of " +
                            std::to_string(n) + " missing at byte " + std::to_string(pos));
      }
      const int v = parse_pgm_int(tok, pos, "pixel");
      if (v > maxval)
        throw MalformedHeader("P2 pixel value " + std::to_string(v) + " exceeds maxval near byte " +
                              std::to_string(pos));
      img.data[i] = v / 255.0;
    }
  }
  return img;
}

inline std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

inline std::vector<std::uint8_t> zlib_inflate(const std::vector<std::uint8_t>& in,
                                              std::size_t expected, const std::string& path) {
  std::vector<std::uint8_t> out(expected);
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw IoFailure("zlib init failed for " + path);
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  const std::size_t produced = out.size() - zs.avail_out;
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || produced != expected)
    throw TruncatedData("PNG image data truncated in " + path + ": inflated " +
                        std::to_string(produced) + " of " + std::to_string(expected) + " bytes");
  return out;
}

inline int paeth_predictor(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

// 8-bit grayscale, non-interlaced PNG only; everything else is rejected with
// the offending field named.
inline Image load_png(const std::vector<std::uint8_t>& bytes, const std::string& path) {
  std::size_t pos = 8;  // signature already checked
  bool saw_ihdr = false, saw_iend = false;
  std::uint32_t w = 0, h = 0;
  std::vector<std::uint8_t> idat;

  while (pos + 8 <= bytes.size() && !saw_iend) {
    const std::uint32_t len = read_be32(&bytes[pos]);
    const std::string type(reinterpret_cast<const char*>(&bytes[pos + 4]), 4);
    if (pos + 12 + len > bytes.size())
      throw TruncatedData("PNG chunk '" + type + "' at byte " + std::to_string(pos) + " needs " +
                          std::to_string(len + 12) + " bytes past end of file " + path);
    const std::uint8_t* data = &bytes[pos + 8];
    const std::uint32_t want_crc = read_be32(&bytes[pos + 8 + len]);
    const std::uint32_t got_crc = static_cast<std::uint32_t>(
        crc32(crc32(0L, &bytes[pos + 4], 4), data, len));
    if (want_crc != got_crc)
      throw MalformedHeader("PNG chunk '" + type + "' at byte " + std::to_string(pos) +
                            " fails CRC in " + path);

    if (type == "IHDR") {
      if (len != 13) throw MalformedHeader("PNG IHDR length " + std::to_string(len) + " != 13");
      w = read_be32(data);
      h = read_be32(data + 4);
      const int bit_depth = data[8], color_type = data[9];
      const int compression = data[10], filter = data[11], interlace = data[12];
      if (bit_depth != 8)
        throw UnsupportedFormat("PNG bit depth " + std::to_string(bit_depth) +
                                " unsupported (8 required) in " + path);
      if (color_type != 0)
        throw UnsupportedFormat("PNG color type " + std::to_string(color_type) +
                                " unsupported (grayscale required) in " + path);
      if (compression != 0 || filter != 0)
        throw UnsupportedFormat("PNG compression/filter method must be 0 in " + path);
      if (interlace != 0) throw UnsupportedFormat("interlaced PNG unsupported in " + path);
      saw_ihdr = true;
    } else if (type == "IDAT") {
      if (!saw_ihdr) throw MalformedHeader("PNG IDAT before IHDR in " + path);
      idat.insert(idat.end(), data, data + len);
    } else if (type == "IEND") {
      saw_iend = true;
    }
    pos += 12 + len;
  }
  if (!saw_ihdr) throw MalformedHeader("PNG missing IHDR chunk in " + path);
  if (!saw_iend) throw TruncatedData("PNG missing IEND chunk in " + path);
  if (w == 0 || h == 0) throw MalformedHeader("PNG has zero dimension in " + path);

  const std::size_t stride = static_cast<std::size_t>(w) + 1;  // filter byte + row
  const std::vector<std::uint8_t> raw = zlib_inflate(idat, stride * h, path);

  Image img(static_cast<int>(w), static_cast<int>(h));
  std::vector<std::uint8_t> prev(w, 0), cur(w, 0);
  for (std::uint32_t y = 0; y < h; ++y) {
    const std::uint8_t* row = &raw[y * stride];
    const int filter = row[0];
    for (std::uint32_t x = 0; x < w; ++x) {
      const int rawv = row[1 + x];
      const int a = x > 0 ? cur[x - 1] : 0;
      const int b = prev[x];
      const int c = x > 0 ? prev[x - 1] : 0;
      int v = 0;
      switch (filter) {
        case 0: v = rawv; break;
        case 1: v = rawv + a; break;
        case 2: v = rawv + b; break;
        case 3: v = rawv + (a + b) / 2; break;
        case 4: v = rawv + paeth_predictor(a, b, c); break;
        default:
          throw MalformedHeader("PNG scanline " + std::to_string(y) + " has filter type " +
                                std::to_string(filter) + " in " + path);
      }
      cur[x] = static_cast<std::uint8_t>(v & 0xff);
      img.at(static_cast<int>(y), static_cast<int>(x)) = cur[x] / 255.0;
    }
    std::swap(prev, cur);
  }
  return img;
}

}  // namespace detail

/// Loads an 8-bit grayscale PGM (P2 or P5) or 8-bit grayscale PNG, mapping
/// intensities to [0, 1] by v/255.
inline Image load_image(const std::string& path) {
  const std::vector<std::uint8_t> bytes = detail::read_file_bytes(path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '2' || bytes[1] == '5'))
    return detail::load_pgm(bytes, path);
  static const std::uint8_t png_sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  if (bytes.size() >= 8 && std::equal(png_sig, png_sig + 8, bytes.begin()))
    return detail::load_png(bytes, path);
  throw UnsupportedFormat("not a PGM (P2/P5) or PNG file: " + path);
}

/// Quantizes to 8 bits (round half up on v*255) and writes a binary PGM with
/// the canonical header "P5\n<w> <h>\n255\n".
inline void save_image(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot open for writing: " + path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<std::uint8_t> bytes(img.pixel_count());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const double v = std::clamp(img.data[i], 0.0, 1.0);
    bytes[i] = static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoFailure("short write to " + path);
}

/// Sorted list of *.pgm / *.png files directly inside dir.
inline std::vector<std::filesystem::path> list_images(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoFailure("not a directory: " + dir);
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = e.path().extension().string();
    if (ext == ".pgm" || ext == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace despeckle
