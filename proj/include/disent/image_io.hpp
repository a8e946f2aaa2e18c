// PNG import/export, grid compositing, and the sprite dataset exporter.
#pragma once

#include <png.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <memory>
#include <string>
#include <vector>

#include "disent/sprites.hpp"
#include "disent/tensor.hpp"

namespace disent {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

}  // namespace detail

// Writes batch slot bi as 8-bit RGB; values clamped to [0,1].
template <typename Real>
void write_png(const std::string& path, const Tensor<Real>& img, int bi = 0) {
  if (bi < 0 || bi >= img.b || img.c != 3)
    throw ValidationError("write_png: need an RGB image and a valid batch index");
  std::unique_ptr<std::FILE, detail::FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open for writing: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng write failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.w, img.h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_byte> row(std::size_t(img.w) * 3);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        double v = double(img.at(bi, y, x, ch));
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        row[std::size_t(x) * 3 + ch] = png_byte(std::lround(v * 255.0));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

template <typename Real>
Tensor<Real> read_png(const std::string& path) {
  std::unique_ptr<std::FILE, detail::FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open for reading: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng read failed: " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int w = int(png_get_image_width(png, info));
  const int h = int(png_get_image_height(png, info));

  Tensor<Real> img(1, h, w, 3);
  std::vector<png_byte> row(std::size_t(w) * 3);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < 3; ++ch)
        img.at(0, y, x, ch) = Real(row[std::size_t(x) * 3 + ch] / 255.0);
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

// Lays out equally sized cells row-major with padding; an empty tensor leaves
// its cell at the background value.
template <typename Real>
Tensor<Real> compose_grid(const std::vector<Tensor<Real>>& cells, int rows, int cols,
                          int pad = 2, Real background = Real(0.25)) {
  if (rows < 1 || cols < 1 || cells.size() != std::size_t(rows) * cols)
    throw ValidationError("compose_grid: cell count does not match rows*cols");
  int ch = 0, cw = 0;
  for (const auto& c : cells)
    if (!c.empty()) {
      ch = c.h;
      cw = c.w;
      break;
    }
  if (ch == 0) throw ValidationError("compose_grid: all cells empty");
  Tensor<Real> out(1, rows * (ch + pad) + pad, cols * (cw + pad) + pad, 3);
  for (auto& v : out.data) v = background;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const auto& cell = cells[std::size_t(r) * cols + c];
      if (cell.empty()) continue;
      if (cell.h != ch || cell.w != cw || cell.c != 3)
        throw ValidationError("compose_grid: cell shape mismatch " + cell.shape_str());
      const int oy = pad + r * (ch + pad), ox = pad + c * (cw + pad);
      for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x)
          for (int k = 0; k < 3; ++k) out.at(0, oy + y, ox + x, k) = cell.at(0, y, x, k);
    }
  return out;
}

// PNG pair files plus one manifest line per image with its generative factors.
template <typename Real>
std::vector<std::string> export_pair_dataset(const std::string& dir, std::uint64_t seed,
                                             int count, int resolution,
                                             const std::vector<AppearanceFactors>& pool) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "factors.jsonl");
  if (!manifest) throw IoError("cannot write dataset manifest in " + dir);

  std::vector<std::string> files;
  PairBatch<Real> batch = sample_pair_batch<Real>(seed, count, resolution, pool);
  auto record = [&](const std::string& name, const Tensor<Real>& t, int bi,
                    const AppearanceFactors& a, const PoseFactors& p) {
    const std::string path = (fs::path(dir) / name).string();
    write_png(path, t, bi);
    manifest << nlohmann::json{{"file", name},
                               {"shape_id", a.shape_id},
                               {"color_id", a.color_id},
                               {"size_class", a.size_class},
                               {"x", p.x},
                               {"y", p.y},
                               {"rotation", p.rotation}}
                    .dump()
             << "\n";
    files.push_back(name);
  };
  for (int i = 0; i < count; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "pair%05d", i);
    record(std::string(buf) + "_a.png", batch.x1, i, batch.appearance[i], batch.pose1[i]);
    record(std::string(buf) + "_b.png", batch.x2, i, batch.appearance[i], batch.pose2[i]);
  }
  files.push_back("factors.jsonl");
  return files;
}

}  // namespace disent
