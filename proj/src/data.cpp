// SPDX-License-Identifier: Apache-2.0
#include "flipnorm/data.hpp"

#include <algorithm>
#include <array>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include <curl/curl.h>
#include <openssl/evp.h>
#include <zlib.h>

#include "flipnorm/error.hpp"

namespace fs = std::filesystem;

namespace flipnorm::data {

namespace {

struct ArchiveFile {
  std::string name;   ///< file name inside the cache directory
  std::string sha256; ///< digest of the uncompressed file
};

struct Source {
  std::string url;
  enum class Kind { npm_tarball, gzip_per_file } kind;
};

const std::vector<ArchiveFile> &mnist_files() {
  static const std::vector<ArchiveFile> files{
      {"train-images-idx3-ubyte", "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db"},
      {"train-labels-idx1-ubyte", "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5"},
      {"t10k-images-idx3-ubyte", "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7"},
      {"t10k-labels-idx1-ubyte", "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2"},
  };
  return files;
}

const std::vector<Source> &mnist_sources() {
  static const std::vector<Source> sources{
      {"https://registry.npmjs.org/mnist-data/-/mnist-data-1.2.6.tgz", Source::Kind::npm_tarball},
      {"https://ossci-datasets.s3.amazonaws.com/mnist/", Source::Kind::gzip_per_file},
      {"https://storage.googleapis.com/cvdf-datasets/mnist/", Source::Kind::gzip_per_file},
  };
  return sources;
}

struct CifarArchive {
  std::string url;
  std::string md5;
  std::string folder;
  std::vector<std::string> train;
  std::vector<std::string> test;
};

CifarArchive cifar_archive(bool cifar100) {
  if (cifar100) {
    return {"https://www.cs.toronto.edu/~kriz/cifar-100-binary.tar.gz",
            "03b5dce01913d631647c71ecec9e9cb8",
            "cifar-100-binary",
            {"train.bin"},
            {"test.bin"}};
  }
  return {"https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz",
          "c32a1d4ab5d03f1284b67883e8d87530",
          "cifar-10-batches-bin",
          {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin",
           "data_batch_5.bin"},
          {"test_batch.bin"}};
}

std::vector<std::uint8_t> read_bytes(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path &path, const std::vector<std::uint8_t> &bytes) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::io, "short write to " + path.string());
}

std::string hex(const unsigned char *data, unsigned int len) {
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) {
    out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(data[i]);
  }
  return out.str();
}

std::string digest_file(const fs::path &path, const EVP_MD *md) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), md, nullptr);
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> out{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), out.data(), &len);
  return hex(out.data(), len);
}

std::size_t curl_write(char *ptr, std::size_t size, std::size_t nmemb, void *user) {
  auto *buf = static_cast<std::vector<std::uint8_t> *>(user);
  buf->insert(buf->end(), ptr, ptr + size * nmemb);
  return size * nmemb;
}

std::vector<std::uint8_t> download(const std::string &url) {
  static const bool initialized = [] { return curl_global_init(CURL_GLOBAL_DEFAULT) == CURLE_OK; }();
  require(initialized, ErrorKind::data, "libcurl initialization failed");
  std::unique_ptr<CURL, decltype(&curl_easy_cleanup)> curl(curl_easy_init(), curl_easy_cleanup);
  require(curl != nullptr, ErrorKind::data, "libcurl handle allocation failed");
  std::vector<std::uint8_t> body;
  curl_easy_setopt(curl.get(), CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl.get(), CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_FAILONERROR, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_CONNECTTIMEOUT, 20L);
  curl_easy_setopt(curl.get(), CURLOPT_TIMEOUT, 600L);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEFUNCTION, curl_write);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEDATA, &body);
  const CURLcode rc = curl_easy_perform(curl.get());
  require(rc == CURLE_OK, ErrorKind::data,
          "download of " + url + " failed: " + curl_easy_strerror(rc));
  return body;
}

std::uint32_t read_be32(const std::vector<std::uint8_t> &b, std::size_t at) {
  require(at + 4 <= b.size(), ErrorKind::data, "truncated IDX header");
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

bool verified(const fs::path &dir, const std::vector<ArchiveFile> &files) {
  for (const auto &f : files) {
    const auto path = dir / f.name;
    if (!fs::exists(path)) {
      return false;
    }
    const auto got = sha256_file(path);
    require(got == f.sha256, ErrorKind::data,
            "checksum mismatch for " + path.string() + " (expected " + f.sha256 + ", got " + got +
                "); refusing to use it");
  }
  return true;
}

/// Pre-placed .gz copies are decompressed next to themselves.
void inflate_preplaced(const fs::path &dir, const std::vector<ArchiveFile> &files) {
  for (const auto &f : files) {
    const auto raw = dir / f.name;
    const auto gz = dir / (f.name + ".gz");
    if (!fs::exists(raw) && fs::exists(gz)) {
      write_bytes(raw, gunzip(read_bytes(gz)));
    }
  }
}

void stage_from_source(const Source &src, const fs::path &staging,
                       const std::vector<ArchiveFile> &files) {
  if (src.kind == Source::Kind::npm_tarball) {
    const auto entries = untar(gunzip(download(src.url)));
    for (const auto &f : files) {
      const auto it = std::find_if(entries.begin(), entries.end(), [&](const TarEntry &e) {
        return fs::path(e.name).filename() == f.name;
      });
      require(it != entries.end(), ErrorKind::data, src.url + " lacks " + f.name);
      write_bytes(staging / f.name, it->contents);
    }
    return;
  }
  for (const auto &f : files) {
    write_bytes(staging / f.name, gunzip(download(src.url + f.name + ".gz")));
  }
}

FetchResult fetch_mnist(const FetchOptions &options) {
  const auto dir = options.cache / "mnist";
  fs::create_directories(dir);
  inflate_preplaced(dir, mnist_files());
  if (verified(dir, mnist_files())) {
    return {dir, false};
  }
  require(options.allow_download, ErrorKind::data,
          "MNIST is not cached under " + dir.string() +
              " and downloads are disabled; place the four IDX files (raw or .gz) there");

  std::string errors;
  for (const auto &src : mnist_sources()) {
    const auto staging = options.cache / ".staging-mnist";
    fs::remove_all(staging);
    fs::create_directories(staging);
    try {
      stage_from_source(src, staging, mnist_files());
      for (const auto &f : mnist_files()) {
        const auto got = sha256_file(staging / f.name);
        require(got == f.sha256, ErrorKind::data,
                "checksum mismatch for " + f.name + " from " + src.url);
      }
      for (const auto &f : mnist_files()) {
        fs::rename(staging / f.name, dir / f.name);
      }
      fs::remove_all(staging);
      return {dir, true};
    } catch (const Error &e) {
      errors += std::string("\n  ") + e.what();
      fs::remove_all(staging);
    }
  }
  fail(ErrorKind::data, "could not fetch MNIST from any source:" + errors);
}

FetchResult fetch_cifar(const FetchOptions &options, bool cifar100) {
  const auto arch = cifar_archive(cifar100);
  const auto dir = options.cache / (cifar100 ? "cifar100" : "cifar10");
  const auto folder = dir / arch.folder;
  auto complete = [&] {
    for (const auto &names : {arch.train, arch.test}) {
      for (const auto &n : names) {
        if (!fs::exists(folder / n)) {
          return false;
        }
      }
    }
    return true;
  };
  if (complete()) {
    return {dir, false};
  }
  fs::create_directories(dir);
  const auto tarball = dir / fs::path(arch.url).filename();
  std::vector<std::uint8_t> bytes;
  bool downloaded = false;
  if (fs::exists(tarball)) {
    const auto got = md5_file(tarball);
    require(got == arch.md5, ErrorKind::data,
            "checksum mismatch for " + tarball.string() + "; refusing to use it");
    bytes = read_bytes(tarball);
  } else {
    require(options.allow_download, ErrorKind::data,
            std::string(cifar100 ? "CIFAR-100" : "CIFAR-10") + " is not cached under " +
                dir.string() + " and downloads are disabled");
    bytes = download(arch.url);
    const auto staging = dir / ".staging.tar.gz";
    write_bytes(staging, bytes);
    const auto got = md5_file(staging);
    if (got != arch.md5) {
      fs::remove(staging);
      fail(ErrorKind::data, "checksum mismatch for " + arch.url);
    }
    fs::rename(staging, tarball);
    downloaded = true;
  }
  for (const auto &entry : untar(gunzip(bytes))) {
    const auto rel = fs::path(entry.name);
    if (rel.has_filename() && rel.parent_path().filename() == arch.folder) {
      fs::create_directories(folder);
      write_bytes(folder / rel.filename(), entry.contents);
    }
  }
  require(complete(), ErrorKind::data, "archive " + tarball.string() + " is missing batch files");
  return {dir, downloaded};
}

std::vector<fs::path> prefixed(const fs::path &dir, const std::vector<std::string> &names) {
  std::vector<fs::path> out;
  for (const auto &n : names) {
    out.push_back(dir / n);
  }
  return out;
}

// Netpbm P6 with maxval 255.
torch::Tensor read_ppm(const fs::path &path) {
  const auto bytes = read_bytes(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') {
          ++pos;
        }
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string out;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) {
      out += static_cast<char>(bytes[pos++]);
    }
    return out;
  };
  require(token() == "P6", ErrorKind::data, path.string() + " is not a binary PPM");
  const int w = std::stoi(token());
  const int h = std::stoi(token());
  require(std::stoi(token()) == 255, ErrorKind::data, path.string() + ": unsupported maxval");
  ++pos; // single whitespace before the raster
  const auto n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3;
  require(pos + n <= bytes.size(), ErrorKind::data, path.string() + ": truncated raster");
  auto t = torch::from_blob(const_cast<std::uint8_t *>(bytes.data() + pos), {h, w, 3}, torch::kUInt8)
               .clone();
  return t.permute({2, 0, 1}).to(torch::kFloat32).div_(255.0);
}

} // namespace

DatasetInfo info(DatasetId id) {
  switch (id) {
  case DatasetId::mnist: return {"mnist", 1, 28, 28, 10, {0.1307}, {0.3081}};
  case DatasetId::cifar10:
    return {"cifar10", 3, 32, 32, 10, {0.4914, 0.4822, 0.4465}, {0.2470, 0.2435, 0.2616}};
  case DatasetId::cifar100:
    return {"cifar100", 3, 32, 32, 100, {0.5071, 0.4865, 0.4409}, {0.2673, 0.2564, 0.2762}};
  case DatasetId::gtsrb:
    return {"gtsrb", 3, 32, 32, 43, {0.3403, 0.3121, 0.3214}, {0.2724, 0.2608, 0.2669}};
  }
  fail(ErrorKind::config, "unknown dataset");
}

DatasetId parse_dataset(std::string_view name) {
  if (name == "mnist") return DatasetId::mnist;
  if (name == "cifar10") return DatasetId::cifar10;
  if (name == "cifar100") return DatasetId::cifar100;
  if (name == "gtsrb") return DatasetId::gtsrb;
  fail(ErrorKind::config,
       "unknown dataset '" + std::string(name) + "' (expected mnist|cifar10|cifar100|gtsrb)");
}

Dataset Dataset::slice(std::int64_t begin, std::int64_t end) const {
  end = std::min(end, size());
  return {images.slice(0, begin, end), labels.slice(0, begin, end), num_classes};
}

Dataset Dataset::select(const torch::Tensor &indices) const {
  return {images.index_select(0, indices), labels.index_select(0, indices), num_classes};
}

fs::path cache_root() {
  if (const char *env = std::getenv("FLIPNORM_CACHE"); env && *env) {
    return env;
  }
  if (const char *xdg = std::getenv("XDG_CACHE_HOME"); xdg && *xdg) {
    return fs::path(xdg) / "flipnorm";
  }
  if (const char *home = std::getenv("HOME"); home && *home) {
    return fs::path(home) / ".cache" / "flipnorm";
  }
  return fs::temp_directory_path() / "flipnorm-cache";
}

FetchResult fetch(DatasetId id, const FetchOptions &options) {
  switch (id) {
  case DatasetId::mnist: return fetch_mnist(options);
  case DatasetId::cifar10: return fetch_cifar(options, false);
  case DatasetId::cifar100: return fetch_cifar(options, true);
  case DatasetId::gtsrb: {
    const auto dir = options.cache / "gtsrb";
    require(fs::exists(dir / "Final_Training" / "Images"), ErrorKind::data,
            "GTSRB has no public mirror reachable here; unpack GTSRB_Final_Training_Images and "
            "GTSRB_Final_Test_Images (+ GT-final_test.csv) under " +
                dir.string());
    return {dir, false};
  }
  }
  fail(ErrorKind::config, "unknown dataset");
}

Dataset read_idx(const fs::path &images, const fs::path &labels, int num_classes) {
  const auto img = read_bytes(images);
  const auto lab = read_bytes(labels);
  require(read_be32(img, 0) == 0x00000803, ErrorKind::data, images.string() + ": bad IDX3 magic");
  require(read_be32(lab, 0) == 0x00000801, ErrorKind::data, labels.string() + ": bad IDX1 magic");
  const auto n = static_cast<std::int64_t>(read_be32(img, 4));
  const auto rows = static_cast<std::int64_t>(read_be32(img, 8));
  const auto cols = static_cast<std::int64_t>(read_be32(img, 12));
  require(static_cast<std::int64_t>(read_be32(lab, 4)) == n, ErrorKind::data,
          "image/label count mismatch");
  require(img.size() == static_cast<std::size_t>(16 + n * rows * cols) &&
              lab.size() == static_cast<std::size_t>(8 + n),
          ErrorKind::data, "IDX payload size mismatch");

  auto pixels = torch::from_blob(const_cast<std::uint8_t *>(img.data() + 16), {n, 1, rows, cols},
                                 torch::kUInt8)
                    .to(torch::kFloat32)
                    .div_(255.0);
  auto targets =
      torch::from_blob(const_cast<std::uint8_t *>(lab.data() + 8), {n}, torch::kUInt8).to(torch::kInt64);
  require(targets.max().item<std::int64_t>() < num_classes, ErrorKind::data,
          "label outside class range");
  return {pixels, targets, num_classes};
}

Dataset read_cifar_binary(const std::vector<fs::path> &batches, bool cifar100) {
  const std::int64_t record = cifar100 ? 3074 : 3073;
  const std::int64_t label_bytes = cifar100 ? 2 : 1;
  std::vector<torch::Tensor> images;
  std::vector<torch::Tensor> labels;
  for (const auto &path : batches) {
    const auto bytes = read_bytes(path);
    require(bytes.size() % static_cast<std::size_t>(record) == 0, ErrorKind::data,
            path.string() + ": size is not a whole number of records");
    const auto n = static_cast<std::int64_t>(bytes.size()) / record;
    auto raw = torch::from_blob(const_cast<std::uint8_t *>(bytes.data()), {n, record}, torch::kUInt8);
    // CIFAR-100 records carry (coarse, fine); the fine label is the class
    labels.push_back(raw.select(1, label_bytes - 1).to(torch::kInt64));
    images.push_back(
        raw.slice(1, label_bytes, record).reshape({n, 3, 32, 32}).to(torch::kFloat32).div_(255.0));
  }
  auto y = torch::cat(labels);
  require(y.max().item<std::int64_t>() < (cifar100 ? 100 : 10), ErrorKind::data, "CIFAR label out of range");
  return {torch::cat(images), y, cifar100 ? 100 : 10};
}

Dataset read_gtsrb_directory(const fs::path &root, int size) {
  std::vector<torch::Tensor> images;
  std::vector<std::int64_t> labels;
  auto add = [&](const fs::path &ppm, std::int64_t label) {
    auto img = read_ppm(ppm).unsqueeze(0);
    img = torch::nn::functional::interpolate(
        img, torch::nn::functional::InterpolateFuncOptions()
                 .size(std::vector<std::int64_t>{size, size})
                 .mode(torch::kBilinear)
                 .align_corners(false));
    images.push_back(img.clamp(0.0, 1.0));
    labels.push_back(label);
  };
  // GT CSV layout: Filename;Width;Height;Roi.X1;Roi.Y1;Roi.X2;Roi.Y2;ClassId
  auto read_csv = [&](const fs::path &csv, const fs::path &image_dir) {
    std::ifstream in(csv);
    require(static_cast<bool>(in), ErrorKind::data, "cannot open " + csv.string());
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) {
        continue;
      }
      std::vector<std::string> fields;
      std::stringstream ss(line);
      for (std::string f; std::getline(ss, f, ';');) {
        fields.push_back(f);
      }
      require(fields.size() >= 8, ErrorKind::data, csv.string() + ": malformed row");
      const auto label = std::stoll(fields[7]);
      require(label >= 0 && label < 43, ErrorKind::data, csv.string() + ": class id out of range");
      add(image_dir / fields[0], label);
    }
  };
  if (fs::exists(root / "GT-final_test.csv")) {
    read_csv(root / "GT-final_test.csv", root);
  } else {
    std::vector<fs::path> class_dirs;
    for (const auto &entry : fs::directory_iterator(root)) {
      if (entry.is_directory()) {
        class_dirs.push_back(entry.path());
      }
    }
    std::sort(class_dirs.begin(), class_dirs.end());
    for (const auto &dir : class_dirs) {
      const auto csv = dir / ("GT-" + dir.filename().string() + ".csv");
      if (fs::exists(csv)) {
        read_csv(csv, dir);
      }
    }
  }
  require(!images.empty(), ErrorKind::data, "no GTSRB images under " + root.string());
  return {torch::cat(images), torch::tensor(labels, torch::kInt64), 43};
}

Splits load_splits(DatasetId id, std::uint64_t seed, std::int64_t val_size,
                   const FetchOptions &options) {
  const auto dir = fetch(id, options).directory;
  Dataset train;
  Dataset test;
  switch (id) {
  case DatasetId::mnist:
    train = read_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", 10);
    test = read_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte", 10);
    break;
  case DatasetId::cifar10:
  case DatasetId::cifar100: {
    const bool c100 = id == DatasetId::cifar100;
    const auto arch = cifar_archive(c100);
    train = read_cifar_binary(prefixed(dir / arch.folder, arch.train), c100);
    test = read_cifar_binary(prefixed(dir / arch.folder, arch.test), c100);
    break;
  }
  case DatasetId::gtsrb:
    train = read_gtsrb_directory(dir / "Final_Training" / "Images", 32);
    test = read_gtsrb_directory(dir / "Final_Test" / "Images", 32);
    break;
  }

  require(val_size >= 0 && val_size < train.size(), ErrorKind::config,
          "validation size must be smaller than the training set");
  std::vector<std::int64_t> order(static_cast<std::size_t>(train.size()));
  std::iota(order.begin(), order.end(), std::int64_t{0});
  std::mt19937_64 rng(seed ^ 0x5eed5eedULL);
  std::shuffle(order.begin(), order.end(), rng);
  const auto idx = torch::tensor(order, torch::kInt64);
  Splits out;
  out.val = train.select(idx.slice(0, 0, val_size));
  out.train = train.select(idx.slice(0, val_size, train.size()));
  out.test = test;
  return out;
}

std::string sha256_file(const fs::path &path) { return digest_file(path, EVP_sha256()); }
std::string md5_file(const fs::path &path) { return digest_file(path, EVP_md5()); }

std::vector<std::uint8_t> gunzip(const std::vector<std::uint8_t> &compressed) {
  z_stream zs{};
  require(inflateInit2(&zs, 16 + MAX_WBITS) == Z_OK, ErrorKind::data, "zlib init failed");
  zs.next_in = const_cast<Bytef *>(compressed.data());
  zs.avail_in = static_cast<uInt>(compressed.size());
  std::vector<std::uint8_t> out;
  std::array<std::uint8_t, 1 << 16> buf{};
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = buf.data();
    zs.avail_out = buf.size();
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      fail(ErrorKind::data, "corrupt gzip stream");
    }
    out.insert(out.end(), buf.data(), buf.data() + (buf.size() - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      fail(ErrorKind::data, "truncated gzip stream");
    }
  }
  inflateEnd(&zs);
  return out;
}

std::vector<TarEntry> untar(const std::vector<std::uint8_t> &archive) {
  std::vector<TarEntry> out;
  std::size_t pos = 0;
  while (pos + 512 <= archive.size()) {
    const auto *h = archive.data() + pos;
    if (std::all_of(h, h + 512, [](std::uint8_t b) { return b == 0; })) {
      break;
    }
    auto field = [&](std::size_t off, std::size_t len) {
      std::string s(reinterpret_cast<const char *>(h + off), len);
      return s.substr(0, s.find('\0'));
    };
    std::string name = field(0, 100);
    if (const auto prefix = field(345, 155); !prefix.empty()) {
      name = prefix + "/" + name;
    }
    const auto size = static_cast<std::size_t>(std::stoull("0" + field(124, 12), nullptr, 8));
    const char type = static_cast<char>(h[156]);
    pos += 512;
    require(pos + size <= archive.size(), ErrorKind::data, "truncated tar entry " + name);
    if (type == '0' || type == '\0') {
      out.push_back({name, std::vector<std::uint8_t>(archive.begin() + static_cast<std::ptrdiff_t>(pos),
                                                     archive.begin() +
                                                         static_cast<std::ptrdiff_t>(pos + size))});
    }
    pos += (size + 511) / 512 * 512;
  }
  return out;
}

} // namespace flipnorm::data
