#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pcs/image_io.hpp"
#include "pcs/rng.hpp"

namespace pcs {

/// PGM/PPM files directly inside `dir`, sorted by filename.
inline std::vector<std::filesystem::path> list_images(const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) throw DataError("dataset directory '" + dir + "' does not exist");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return char(std::tolower(c)); });
        if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
    if (files.empty()) throw DataError("dataset directory '" + dir + "' contains no PGM/PPM images");
    return files;
}

/// Grayscale training images in [0,1], held in memory.
template <typename T>
struct Dataset {
    std::vector<std::string> names;
    std::vector<Tensor<T>> images;
    std::vector<std::string> warnings;

    std::size_t size() const { return images.size(); }
};

/// Loads every image at least crop_size on both sides; PPM is converted to
/// BT.601 luma. Smaller images are skipped with a warning.
template <typename T>
Dataset<T> load_dataset(const std::string& dir, std::size_t crop_size) {
    Dataset<T> ds;
    for (const auto& path : list_images(dir)) {
        Tensor<T> img = to_luma(read_image<T>(path.string()));
        if (img.shape().h < crop_size || img.shape().w < crop_size) {
            ds.warnings.push_back("skipping " + path.filename().string() + ": " + std::to_string(img.shape().h) +
                                  "x" + std::to_string(img.shape().w) + " is smaller than crop " +
                                  std::to_string(crop_size));
            continue;
        }
        ds.names.push_back(path.filename().string());
        ds.images.push_back(std::move(img));
    }
    if (ds.images.empty()) {
        throw DataError("dataset directory '" + dir + "' has no image of at least " + std::to_string(crop_size) +
                        " pixels per side");
    }
    return ds;
}

/// Seeded stream of random crops: image index and offsets drawn uniformly,
/// with replacement. The generator state is the stream position.
template <typename T>
class SampleStream {
public:
    SampleStream(const Dataset<T>& data, std::size_t crop_size, std::uint64_t seed)
        : SampleStream(data, crop_size, Rng(seed)) {}

    SampleStream(const Dataset<T>& data, std::size_t crop_size, Rng rng)
        : data_(&data), crop_(crop_size), rng_(rng) {}

    Tensor<T> next_batch(std::size_t batch_size) {
        Tensor<T> batch(Shape{batch_size, 1, crop_, crop_});
        for (std::size_t b = 0; b < batch_size; ++b) {
            const Tensor<T>& img = data_->images[rng_.uniform_index(data_->size())];
            const std::size_t y0 = rng_.uniform_index(img.shape().h - crop_ + 1);
            const std::size_t x0 = rng_.uniform_index(img.shape().w - crop_ + 1);
            auto dst = batch.plane(b, 0);
            for (std::size_t y = 0; y < crop_; ++y) {
                for (std::size_t x = 0; x < crop_; ++x) dst[y * crop_ + x] = img.at(0, 0, y0 + y, x0 + x);
            }
        }
        return batch;
    }

    Rng& rng() noexcept { return rng_; }
    const Rng& rng() const noexcept { return rng_; }

private:
    const Dataset<T>* data_;
    std::size_t crop_;
    Rng rng_;
};

}  // namespace pcs
