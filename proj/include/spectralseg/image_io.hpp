#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace spectralseg {

struct GrayImage {
  int h = 0, w = 0;
  std::vector<std::uint8_t> v;

  GrayImage() = default;
  GrayImage(int h_, int w_) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, 0) {}
  std::uint8_t& at(int i, int j) { return v[static_cast<size_t>(i) * w + j]; }
  std::uint8_t at(int i, int j) const { return v[static_cast<size_t>(i) * w + j]; }
};

struct RgbImage {
  int h = 0, w = 0;
  std::vector<std::uint8_t> v;  // interleaved RGB

  RgbImage() = default;
  RgbImage(int h_, int w_) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_ * 3, 0) {}
  void set(int i, int j, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    auto* p = &v[(static_cast<size_t>(i) * w + j) * 3];
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }
};

void write_png_gray(const std::string& path, const GrayImage& img);
GrayImage read_png_gray(const std::string& path);
void write_png_rgb(const std::string& path, const RgbImage& img);

}  // namespace spectralseg
