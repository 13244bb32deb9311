// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <vector>

#include <torch/torch.h>

namespace flipnorm::images {

/// Writes a [C,H,W] float image in [0,1] (C = 1 or 3) as an 8-bit PNG.
void write_png(const std::filesystem::path &path, const torch::Tensor &image);

/// Tiles equally-shaped [C,H,W] images row-major into one image with a
/// `pad`-pixel white gutter, upscaling each tile by `zoom` (nearest).
torch::Tensor tile(const std::vector<torch::Tensor> &tiles, int columns, int zoom = 1, int pad = 2);

/// Maps a signed residual to [0,1] around mid-gray, scaled so the largest
/// magnitude in the batch reaches the range edge.
torch::Tensor amplify_residual(const torch::Tensor &residual);

/// Clean / backdoor / amplified-residual triptychs, one row per image.
torch::Tensor triptych_grid(const torch::Tensor &clean, const torch::Tensor &backdoor, int zoom = 4);

} // namespace flipnorm::images
