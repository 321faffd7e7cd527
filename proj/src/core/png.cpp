#include "core/png.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <vector>

namespace opcorr {

namespace {

uint32_t crc32_update(uint32_t crc, const uint8_t* data, size_t len) {
  static uint32_t table[256];
  static bool init = false;
  if (!init) {
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    init = true;
  }
  crc ^= 0xffffffffu;
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
  return crc ^ 0xffffffffu;
}

void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

void write_chunk(std::vector<uint8_t>& out, const char type[4],
                 const std::vector<uint8_t>& data) {
  put_u32_be(out, static_cast<uint32_t>(data.size()));
  size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uint32_t crc = crc32_update(0, out.data() + crc_start, out.size() - crc_start);
  put_u32_be(out, crc);
}

// zlib stream with stored (uncompressed) deflate blocks
std::vector<uint8_t> zlib_store(const std::vector<uint8_t>& raw) {
  std::vector<uint8_t> z;
  z.push_back(0x78);
  z.push_back(0x01);
  size_t pos = 0;
  while (pos < raw.size() || raw.empty()) {
    size_t len = std::min<size_t>(65535, raw.size() - pos);
    bool final = (pos + len == raw.size());
    z.push_back(final ? 1 : 0);
    z.push_back(static_cast<uint8_t>(len & 0xff));
    z.push_back(static_cast<uint8_t>(len >> 8));
    z.push_back(static_cast<uint8_t>(~len & 0xff));
    z.push_back(static_cast<uint8_t>((~len >> 8) & 0xff));
    z.insert(z.end(), raw.begin() + pos, raw.begin() + pos + len);
    pos += len;
    if (final) break;
  }
  uint32_t a = 1, b = 0;
  for (uint8_t byte : raw) {
    a = (a + byte) % 65521;
    b = (b + a) % 65521;
  }
  put_u32_be(z, (b << 16) | a);
  return z;
}

}  // namespace

std::pair<double, double> write_png_gray(const std::string& path, const Grid& g) {
  double lo = min_val(g), hi = max_val(g);
  double span = hi - lo;
  if (span <= 0.0) span = 1.0;

  const int h = g.rows(), w = g.cols();
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(h) * (w + 1));
  for (int r = 0; r < h; ++r) {
    raw.push_back(0);  // filter: none
    for (int c = 0; c < w; ++c) {
      double v = (g(r, c) - lo) / span;
      raw.push_back(static_cast<uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0))));
    }
  }

  std::vector<uint8_t> png = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<uint8_t> ihdr;
  put_u32_be(ihdr, static_cast<uint32_t>(w));
  put_u32_be(ihdr, static_cast<uint32_t>(h));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(0);  // grayscale
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  write_chunk(png, "IHDR", ihdr);
  write_chunk(png, "IDAT", zlib_store(raw));
  write_chunk(png, "IEND", {});

  FILE* f = std::fopen(path.c_str(), "wb");
  require(f != nullptr, ErrorKind::io, "cannot write png " + path);
  bool ok = std::fwrite(png.data(), 1, png.size(), f) == png.size();
  std::fclose(f);
  require(ok, ErrorKind::io, "short write: " + path);
  return {lo, hi};
}

}  // namespace opcorr
