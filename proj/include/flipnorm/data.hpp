// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

namespace flipnorm::data {

enum class DatasetId { mnist, cifar10, cifar100, gtsrb };

struct DatasetInfo {
  std::string_view name;
  int channels;
  int height;
  int width;
  int num_classes;
  std::vector<double> mean; ///< per-channel, applied inside the classifier
  std::vector<double> std;
};

DatasetInfo info(DatasetId id);
DatasetId parse_dataset(std::string_view name);

/// Images as float [N, C, H, W] in [0, 1], labels as int64 [N].
struct Dataset {
  torch::Tensor images;
  torch::Tensor labels;
  int num_classes = 0;

  std::int64_t size() const { return labels.defined() ? labels.size(0) : 0; }
  Dataset slice(std::int64_t begin, std::int64_t end) const;
  Dataset select(const torch::Tensor &indices) const;
};

struct Splits {
  Dataset train;
  Dataset val; ///< held out from the official training set
  Dataset test;
};

/// $FLIPNORM_CACHE, else $XDG_CACHE_HOME/flipnorm, else ~/.cache/flipnorm.
std::filesystem::path cache_root();

struct FetchOptions {
  std::filesystem::path cache = cache_root();
  bool allow_download = true;
};

struct FetchResult {
  std::filesystem::path directory;
  bool downloaded = false; ///< false on a cache hit
};

/// Makes a verified local copy of the dataset. Pre-placed files are checked
/// against pinned digests; downloads land in a staging directory and only
/// move into the cache after verification.
FetchResult fetch(DatasetId id, const FetchOptions &options = {});

/// Loads the cached dataset and carves a seeded validation slice of
/// `val_size` samples out of the training set.
Splits load_splits(DatasetId id, std::uint64_t seed, std::int64_t val_size,
                   const FetchOptions &options = {});

// Format readers, exposed for tests and pre-placed archives.
Dataset read_idx(const std::filesystem::path &images, const std::filesystem::path &labels,
                 int num_classes);
Dataset read_cifar_binary(const std::vector<std::filesystem::path> &batches, bool cifar100);
Dataset read_gtsrb_directory(const std::filesystem::path &root, int size);

std::string sha256_file(const std::filesystem::path &path);
std::string md5_file(const std::filesystem::path &path);

/// Minimal gzip and ustar handling for the archives datasets ship in.
std::vector<std::uint8_t> gunzip(const std::vector<std::uint8_t> &compressed);
struct TarEntry {
  std::string name;
  std::vector<std::uint8_t> contents;
};
std::vector<TarEntry> untar(const std::vector<std::uint8_t> &archive);

} // namespace flipnorm::data
