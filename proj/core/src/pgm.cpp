#include "axiseg/pgm.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace axiseg {

namespace {

struct RasterDims {
  int h, w;
};

RasterDims raster_dims(const Tensor& raster) {
  const Shape& s = raster.shape();
  if (s.rank() == 2) return {s.dim(0), s.dim(1)};
  if (s.rank() == 3 && s.dim(0) == 1) return {s.dim(1), s.dim(2)};
  throw std::invalid_argument("write_pgm: raster must be [HxW] or [1xHxW], got " + s.str());
}

// Reads the next integer token, skipping whitespace and '#' comments.
int next_int(std::istream& in, const std::string& path) {
  for (;;) {
    int c = in.peek();
    if (c == EOF) throw std::runtime_error(path + ": truncated PGM header");
    if (c == '#') {
      std::string line;
      std::getline(in, line);
      continue;
    }
    if (std::isspace(c)) {
      in.get();
      continue;
    }
    break;
  }
  int value = 0;
  if (!(in >> value)) throw std::runtime_error(path + ": malformed PGM header");
  return value;
}

}  // namespace

void write_pgm(const Tensor& raster, const std::string& path) {
  RasterDims d = raster_dims(raster);
  std::vector<std::uint8_t> bytes;
  bytes.reserve(raster.values().size());
  for (double v : raster.values()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument("write_pgm: value " + std::to_string(v) + " outside [0, 1]");
    }
    bytes.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_pgm: cannot open " + path);
  out << "P5\n" << d.w << " " << d.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write_pgm: short write to " + path);
}

Tensor read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_pgm: cannot open " + path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '5') {
    throw std::runtime_error(path + ": unsupported format (expected P5 magic)");
  }
  int w = next_int(in, path);
  int h = next_int(in, path);
  int maxval = next_int(in, path);
  if (w < 1 || h < 1) throw std::runtime_error(path + ": bad PGM dimensions");
  if (maxval != 255) {
    throw std::runtime_error(path + ": unsupported maxval " + std::to_string(maxval));
  }
  in.get();  // the single whitespace byte after maxval
  std::vector<std::uint8_t> bytes(static_cast<size_t>(w) * h);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<size_t>(in.gcount()) != bytes.size()) {
    throw std::runtime_error(path + ": truncated PGM payload");
  }
  if (in.peek() != EOF) throw std::runtime_error(path + ": trailing data after PGM payload");
  std::vector<double> values(bytes.size());
  for (size_t i = 0; i < bytes.size(); ++i) values[i] = bytes[i] / 255.0;
  return Tensor::from_values(Shape{1, h, w}, std::move(values));
}

}  // namespace axiseg
