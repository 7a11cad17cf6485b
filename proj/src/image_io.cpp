#include "mmtod/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace mmtod {

static void skip_ws_and_comments(std::istream& is) {
  for (;;) {
    int c = is.peek();
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else if (std::isspace(c)) {
      is.get();
    } else {
      return;
    }
  }
}

Tensor read_image(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_image: cannot open " + path);
  std::string magic;
  f >> magic;
  int channels;
  if (magic == "P5")
    channels = 1;
  else if (magic == "P6")
    channels = 3;
  else
    throw std::runtime_error("read_image: unsupported format in " + path);
  int w, h, maxval;
  skip_ws_and_comments(f);
  f >> w;
  skip_ws_and_comments(f);
  f >> h;
  skip_ws_and_comments(f);
  f >> maxval;
  if (!f || w <= 0 || h <= 0 || maxval != 255)
    throw std::runtime_error("read_image: bad header in " + path);
  f.get();  // single whitespace after maxval

  std::vector<unsigned char> raw(static_cast<size_t>(w) * h * channels);
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!f) throw std::runtime_error("read_image: truncated data in " + path);

  Tensor img({channels, h, w});
  // file is interleaved; tensor is planar
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(c, y, x) = raw[(static_cast<size_t>(y) * w + x) * channels + c] / 255.0;
  return img;
}

void write_image(const std::string& path, const Tensor& image) {
  if (image.ndim() != 3 || (image.dim(0) != 1 && image.dim(0) != 3))
    throw std::invalid_argument("write_image: expected [1|3,H,W] tensor");
  int c_n = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_image: cannot open " + path);
  f << (c_n == 1 ? "P5" : "P6") << "\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h * c_n);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < c_n; ++c) {
        double v = std::clamp(image.at(c, y, x), 0.0, 1.0);
        raw[(static_cast<size_t>(y) * w + x) * c_n + c] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
  f.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

Tensor resize_bilinear(const Tensor& image, int out_w, int out_h) {
  if (out_w <= 0 || out_h <= 0) throw std::invalid_argument("resize_bilinear: bad size");
  int c_n = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor out({c_n, out_h, out_w});
  double sx = static_cast<double>(w) / out_w;
  double sy = static_cast<double>(h) / out_h;
  for (int c = 0; c < c_n; ++c)
    for (int oy = 0; oy < out_h; ++oy) {
      double fy = (oy + 0.5) * sy - 0.5;
      int y0 = static_cast<int>(std::floor(fy));
      double wy = fy - y0;
      int y0c = std::clamp(y0, 0, h - 1), y1c = std::clamp(y0 + 1, 0, h - 1);
      for (int ox = 0; ox < out_w; ++ox) {
        double fx = (ox + 0.5) * sx - 0.5;
        int x0 = static_cast<int>(std::floor(fx));
        double wx = fx - x0;
        int x0c = std::clamp(x0, 0, w - 1), x1c = std::clamp(x0 + 1, 0, w - 1);
        out.at(c, oy, ox) = (1 - wy) * ((1 - wx) * image.at(c, y0c, x0c) +
                                        wx * image.at(c, y0c, x1c)) +
                            wy * ((1 - wx) * image.at(c, y1c, x0c) +
                                  wx * image.at(c, y1c, x1c));
      }
    }
  return out;
}

}  // namespace mmtod
