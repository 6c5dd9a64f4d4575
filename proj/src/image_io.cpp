#include "stratgen/image_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

namespace stratgen {

void write_ppm(const Tensor& image, const std::string& path) {
  if (image.ndim() != 3 || image.shape[2] != 3)
    throw DimensionError("write_ppm: image must be [H,W,3], got " + shape_str(image.shape));
  const int h = image.shape[0], w = image.shape[1];
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_ppm: cannot open " + path);
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  const float* px = image.ptr();
  for (int y = 0; y < h; ++y) {
    for (int i = 0; i < w * 3; ++i) {
      float v = px[static_cast<int64_t>(y) * w * 3 + i];
      if (v < 0.0f) v = 0.0f;
      if (v > 1.0f) v = 1.0f;
      row[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    out.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  if (!out) throw IoError("write_ppm: short write to " + path);
}

namespace {

struct ByteReader {
  std::ifstream in;
  int64_t offset = 0;
  std::string path;

  explicit ByteReader(const std::string& p) : in(p, std::ios::binary), path(p) {
    if (!in) throw IoError("read_ppm: cannot open " + p);
  }

  [[noreturn]] void fail(const std::string& what) {
    throw ParseError("read_ppm: " + what + " at byte " + std::to_string(offset) + " of " +
                     path);
  }

  int get() {
    int c = in.get();
    if (c != EOF) ++offset;
    return c;
  }

  // Skips PPM whitespace and '#' comments, returns first significant char.
  int skip_space() {
    for (;;) {
      int c = get();
      if (c == '#') {
        while (c != EOF && c != '\n') c = get();
        continue;
      }
      if (c == ' ' || c == '\t' || c == '\n' || c == '\r') continue;
      return c;
    }
  }

  int read_number() {
    int c = skip_space();
    if (c == EOF) fail("unexpected end of file while reading header number");
    if (c < '0' || c > '9') fail("expected digit");
    long v = 0;
    while (c >= '0' && c <= '9') {
      v = v * 10 + (c - '0');
      if (v > 1 << 28) fail("header number out of range");
      c = get();
    }
    if (c != EOF) {
      in.unget();
      --offset;
    }
    return static_cast<int>(v);
  }
};

}  // namespace

Tensor read_ppm(const std::string& path) {
  ByteReader r(path);
  if (r.get() != 'P' || r.get() != '6') r.fail("missing P6 magic");
  const int w = r.read_number();
  const int h = r.read_number();
  const int maxval = r.read_number();
  if (w <= 0 || h <= 0) r.fail("non-positive image extents");
  if (maxval != 255) r.fail("unsupported maxval (only 255)");
  // exactly one whitespace byte separates header from payload
  int c = r.get();
  if (c != ' ' && c != '\t' && c != '\n' && c != '\r') r.fail("missing header terminator");

  Tensor img = Tensor::zeros({h, w, 3});
  std::vector<char> buf(static_cast<size_t>(w) * h * 3);
  r.in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (r.in.gcount() != static_cast<std::streamsize>(buf.size())) {
    r.offset += r.in.gcount();
    r.fail("truncated pixel payload (expected " + std::to_string(buf.size()) + " bytes)");
  }
  float* px = img.ptr();
  for (size_t i = 0; i < buf.size(); ++i)
    px[i] = static_cast<float>(static_cast<unsigned char>(buf[i])) / 255.0f;
  return img;
}

}  // namespace stratgen
