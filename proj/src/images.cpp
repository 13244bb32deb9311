// SPDX-License-Identifier: Apache-2.0
#include "flipnorm/images.hpp"

#include <cstdio>
#include <memory>

#include <png.h>

#include "flipnorm/error.hpp"

namespace flipnorm::images {

void write_png(const std::filesystem::path &path, const torch::Tensor &image) {
  require(image.dim() == 3 && (image.size(0) == 1 || image.size(0) == 3), ErrorKind::invalid_input,
          "write_png takes a [1|3, H, W] image");
  const auto hwc = image.detach()
                       .to(torch::kFloat32)
                       .clamp(0.0, 1.0)
                       .mul(255.0)
                       .round()
                       .to(torch::kUInt8)
                       .permute({1, 2, 0})
                       .contiguous();
  const auto h = static_cast<png_uint_32>(hwc.size(0));
  const auto w = static_cast<png_uint_32>(hwc.size(1));
  const int channels = static_cast<int>(hwc.size(2));

  std::unique_ptr<FILE, decltype(&std::fclose)> fp(std::fopen(path.c_str(), "wb"), std::fclose);
  require(fp != nullptr, ErrorKind::io, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::io, "libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::io, "libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, w, h, 8, channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  auto *data = hwc.data_ptr<std::uint8_t>();
  for (png_uint_32 r = 0; r < h; ++r) {
    png_write_row(png, data + static_cast<std::size_t>(r) * w * static_cast<std::size_t>(channels));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

torch::Tensor tile(const std::vector<torch::Tensor> &tiles, int columns, int zoom, int pad) {
  require(!tiles.empty() && columns >= 1 && zoom >= 1 && pad >= 0, ErrorKind::invalid_input,
          "tile needs images, columns >= 1 and zoom >= 1");
  const auto c = tiles.front().size(0);
  const auto h = tiles.front().size(1) * zoom;
  const auto w = tiles.front().size(2) * zoom;
  const auto n = static_cast<std::int64_t>(tiles.size());
  const auto rows = (n + columns - 1) / columns;
  auto canvas = torch::ones({c, rows * (h + pad) + pad, columns * (w + pad) + pad});
  for (std::int64_t i = 0; i < n; ++i) {
    const auto &t = tiles[static_cast<std::size_t>(i)];
    require(t.sizes() == tiles.front().sizes(), ErrorKind::invalid_input, "tiles differ in shape");
    const auto big = t.repeat_interleave(zoom, 1).repeat_interleave(zoom, 2);
    const auto y = pad + (i / columns) * (h + pad);
    const auto x = pad + (i % columns) * (w + pad);
    canvas.slice(1, y, y + h).slice(2, x, x + w).copy_(big);
  }
  return canvas;
}

torch::Tensor amplify_residual(const torch::Tensor &residual) {
  const double peak = residual.abs().max().item<double>();
  if (peak == 0.0) {
    return torch::full_like(residual, 0.5);
  }
  return (0.5 + residual / (2.0 * peak)).clamp(0.0, 1.0);
}

torch::Tensor triptych_grid(const torch::Tensor &clean, const torch::Tensor &backdoor, int zoom) {
  require(clean.sizes() == backdoor.sizes() && clean.dim() == 4, ErrorKind::invalid_input,
          "triptych needs matching [N,C,H,W] batches");
  const auto amplified = amplify_residual(backdoor - clean);
  std::vector<torch::Tensor> tiles;
  for (std::int64_t i = 0; i < clean.size(0); ++i) {
    tiles.push_back(clean[i]);
    tiles.push_back(backdoor[i]);
    tiles.push_back(amplified[i]);
  }
  return tile(tiles, 3, zoom);
}

} // namespace flipnorm::images
