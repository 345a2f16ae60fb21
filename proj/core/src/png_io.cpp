#include <zlib.h>

#include <cstring>
#include <fstream>

#include "lgt/common.hpp"
#include "lgt/image.hpp"

namespace lgt {

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

uint32_t read_u32(const uint8_t* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void append_chunk(std::vector<uint8_t>& out, const char type[4],
                  const std::vector<uint8_t>& payload) {
  put_u32(out, static_cast<uint32_t>(payload.size()));
  size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  uint32_t crc = static_cast<uint32_t>(
      crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start)));
  put_u32(out, crc);
}

// zlib stream holding only stored deflate blocks: 2-byte header, block
// headers, raw bytes, adler32 trailer. Fully version-independent output.
std::vector<uint8_t> zlib_stored(const std::vector<uint8_t>& raw) {
  std::vector<uint8_t> z;
  z.push_back(0x78);
  z.push_back(0x01);
  size_t pos = 0;
  const size_t kMaxBlock = 65535;
  do {
    size_t len = std::min(kMaxBlock, raw.size() - pos);
    bool last = pos + len == raw.size();
    z.push_back(last ? 1 : 0);
    z.push_back(static_cast<uint8_t>(len & 0xff));
    z.push_back(static_cast<uint8_t>(len >> 8));
    z.push_back(static_cast<uint8_t>(~len & 0xff));
    z.push_back(static_cast<uint8_t>((~len >> 8) & 0xff));
    z.insert(z.end(), raw.begin() + pos, raw.begin() + pos + len);
    pos += len;
  } while (pos < raw.size());
  uint32_t ad = static_cast<uint32_t>(adler32(1L, raw.data(), static_cast<uInt>(raw.size())));
  put_u32(z, ad);
  return z;
}

std::vector<uint8_t> zlib_inflate(const uint8_t* data, size_t size, size_t expected) {
  std::vector<uint8_t> out(expected);
  z_stream zs;
  std::memset(&zs, 0, sizeof(zs));
  check_invariant(inflateInit(&zs) == Z_OK, "zlib init failed");
  zs.next_in = const_cast<Bytef*>(data);
  zs.avail_in = static_cast<uInt>(size);
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END) throw IoError("PNG: corrupt or truncated zlib stream");
  out.resize(out.size() - zs.avail_out);
  return out;
}

int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

std::vector<uint8_t> encode_png(const ImageU8& img) {
  check_config(img.channels == 1 || img.channels == 3, "PNG writer supports gray or RGB");
  check_config(img.width > 0 && img.height > 0, "PNG writer: empty image");
  check_config(img.pixels.size() ==
                   static_cast<size_t>(img.width) * img.height * img.channels,
               "PNG writer: pixel buffer size mismatch");

  std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

  std::vector<uint8_t> ihdr;
  put_u32(ihdr, static_cast<uint32_t>(img.width));
  put_u32(ihdr, static_cast<uint32_t>(img.height));
  ihdr.push_back(8);                                   // bit depth
  ihdr.push_back(img.channels == 3 ? 2 : 0);           // color type
  ihdr.push_back(0);                                   // compression
  ihdr.push_back(0);                                   // filter method
  ihdr.push_back(0);                                   // no interlace
  append_chunk(out, "IHDR", ihdr);

  const size_t stride = static_cast<size_t>(img.width) * img.channels;
  std::vector<uint8_t> raw;
  raw.reserve((stride + 1) * img.height);
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), img.pixels.begin() + y * stride, img.pixels.begin() + (y + 1) * stride);
  }
  append_chunk(out, "IDAT", zlib_stored(raw));
  append_chunk(out, "IEND", {});
  return out;
}

void write_png(const std::string& path, const ImageU8& img) {
  auto bytes = encode_png(img);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path);
}

ImageU8 read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  static const uint8_t kSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (buf.size() < 8 || std::memcmp(buf.data(), kSig, 8) != 0)
    throw IoError("not a PNG file: " + path);

  size_t pos = 8;
  int width = 0, height = 0, bit_depth = 0, color_type = 0, interlace = 0;
  std::vector<uint8_t> idat;
  while (pos + 8 <= buf.size()) {
    uint32_t len = read_u32(buf.data() + pos);
    if (pos + 12 + len > buf.size()) throw IoError("PNG: truncated chunk in " + path);
    const char* type = reinterpret_cast<const char*>(buf.data() + pos + 4);
    const uint8_t* payload = buf.data() + pos + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      width = static_cast<int>(read_u32(payload));
      height = static_cast<int>(read_u32(payload + 4));
      bit_depth = payload[8];
      color_type = payload[9];
      interlace = payload[12];
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (width <= 0 || height <= 0) throw IoError("PNG: missing IHDR in " + path);
  if (bit_depth != 8 || interlace != 0)
    throw IoError("PNG: only 8-bit non-interlaced images supported: " + path);
  int src_channels;
  switch (color_type) {
    case 0: src_channels = 1; break;
    case 2: src_channels = 3; break;
    case 6: src_channels = 4; break;
    default: throw IoError("PNG: unsupported color type in " + path);
  }

  const size_t stride = static_cast<size_t>(width) * src_channels;
  std::vector<uint8_t> raw = zlib_inflate(idat.data(), idat.size(), (stride + 1) * height);
  if (raw.size() != (stride + 1) * height) throw IoError("PNG: wrong decompressed size: " + path);

  // Undo per-scanline filters in place.
  std::vector<uint8_t> img(stride * height);
  const int bpp = src_channels;
  for (int y = 0; y < height; ++y) {
    uint8_t filter = raw[y * (stride + 1)];
    const uint8_t* src = raw.data() + y * (stride + 1) + 1;
    uint8_t* dst = img.data() + y * stride;
    const uint8_t* prev = y > 0 ? img.data() + (y - 1) * stride : nullptr;
    for (size_t x = 0; x < stride; ++x) {
      int a = x >= static_cast<size_t>(bpp) ? dst[x - bpp] : 0;
      int b = prev ? prev[x] : 0;
      int c = (prev && x >= static_cast<size_t>(bpp)) ? prev[x - bpp] : 0;
      int v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw IoError("PNG: bad filter byte in " + path);
      }
      dst[x] = static_cast<uint8_t>(v & 0xff);
    }
  }

  ImageU8 out;
  out.width = width;
  out.height = height;
  if (src_channels == 4) {  // drop alpha
    out.channels = 3;
    out.pixels.resize(static_cast<size_t>(width) * height * 3);
    for (size_t i = 0, n = static_cast<size_t>(width) * height; i < n; ++i) {
      out.pixels[i * 3 + 0] = img[i * 4 + 0];
      out.pixels[i * 3 + 1] = img[i * 4 + 1];
      out.pixels[i * 3 + 2] = img[i * 4 + 2];
    }
  } else {
    out.channels = src_channels;
    out.pixels = std::move(img);
  }
  return out;
}

}  // namespace lgt
