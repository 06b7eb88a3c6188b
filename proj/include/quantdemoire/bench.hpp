#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "quantdemoire/model.hpp"
#include "quantdemoire/tensor.hpp"

namespace qdm {

/// One sinusoidal grating of the synthetic moire model.
struct Grating {
    double frequency = 0.1;    ///< cycles per pixel, [0.05, 0.45]
    double orientation = 0.0;  ///< radians
    double amplitude = 0.1;    ///< [0.05, 0.25]
    double phase[3] = {0.0, 0.0, 0.0};  ///< per RGB channel
};

struct MoireParams {
    std::vector<Grating> gratings;  ///< 2..4
    double gamma = 1.0;             ///< [0.8, 1.25]
};

MoireParams draw_moire_params(std::uint64_t seed);

/// Smooth random image: linear colour gradient plus four Gaussian colour blobs, clipped to [0,1].
Tensor gen_clean(std::uint64_t seed, std::int64_t h, std::int64_t w);

/// clip(clean^gamma + sum_g a_g sin(2 pi f_g (x cos t_g + y sin t_g) + phase_{g,c}), 0, 1)
Tensor gen_moire(const Tensor& clean, const MoireParams& params);
Tensor gen_moire(const Tensor& clean, std::uint64_t seed);

/// 10 log10(1 / MSE) over all elements; +infinity when the inputs are identical.
double psnr(const Tensor& a, const Tensor& b);

/// Mean SSIM of the luma (0.299 R + 0.587 G + 0.114 B) images over all 11x11 windows that fit
/// inside the image, Gaussian weights with sigma 1.5, K1 = 0.01, K2 = 0.03, range 1.
double ssim(const Tensor& a, const Tensor& b);

/// "inf" for infinite values, otherwise fixed with the given precision.
std::string format_db(double v, int precision = 4);

enum class Split { Train, Calib, Test };
std::string to_string(Split s);
Split parse_split(const std::string& s);

struct ManifestEntry {
    Split split = Split::Train;
    std::string clean;  ///< path relative to the manifest directory
    std::string moire;
    std::uint64_t seed = 0;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
    std::filesystem::path root;
    std::vector<ManifestEntry> entries;

    std::vector<ManifestEntry> split(Split s) const;
};

struct DatasetCounts {
    std::size_t train = 500;
    std::size_t calib = 50;
    std::size_t test = 50;
};

/// Writes PPM pairs and "manifest.txt" into out_dir. Image i (train, then calib, then test)
/// uses seed derive_seed(seed, i).
DatasetManifest gen_dataset(std::uint64_t seed, const DatasetCounts& counts, std::int64_t h, std::int64_t w,
                            const std::filesystem::path& out_dir);

/// The clean/moire pair for one per-image seed, before PPM quantization.
ImagePair gen_pair(std::uint64_t image_seed, std::int64_t h, std::int64_t w);

/// Lines "<split>\t<clean.ppm>\t<moire.ppm>\t<seed-hex>".
std::string format_manifest(const DatasetManifest& m);
DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& root);
DatasetManifest read_manifest(const std::filesystem::path& dir);

/// Loads (moire, clean) pairs of one split.
std::vector<ImagePair> load_pairs(const DatasetManifest& m, Split s);

}  // namespace qdm
