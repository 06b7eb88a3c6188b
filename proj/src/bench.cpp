#include "quantdemoire/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "quantdemoire/error.hpp"
#include "quantdemoire/rng.hpp"
#include "quantdemoire/tensor_io.hpp"

namespace qdm {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

float clip01(double v) noexcept { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

}  // namespace

MoireParams draw_moire_params(std::uint64_t seed) {
    Rng rng(seed);
    MoireParams p;
    const auto count = 2 + rng.below(3);
    for (std::uint64_t g = 0; g < count; ++g) {
        Grating gr;
        gr.frequency = rng.uniform(0.05, 0.45);
        gr.orientation = rng.uniform(0.0, std::numbers::pi);
        gr.amplitude = rng.uniform(0.05, 0.25);
        for (double& ph : gr.phase) ph = rng.uniform(0.0, kTwoPi);
        p.gratings.push_back(gr);
    }
    p.gamma = rng.uniform(0.8, 1.25);
    return p;
}

Tensor gen_clean(std::uint64_t seed, std::int64_t h, std::int64_t w) {
    require(h >= 16 && w >= 16, ErrorKind::InvalidArgument, "gen_clean: image must be at least 16x16");
    Rng rng(seed);
    double base[3], gx[3], gy[3];
    for (int c = 0; c < 3; ++c) {
        base[c] = rng.uniform(0.2, 0.6);
        gx[c] = rng.uniform(-0.3, 0.3);
        gy[c] = rng.uniform(-0.3, 0.3);
    }
    struct Blob {
        double cy, cx, sigma, color[3];
    };
    Blob blobs[4];
    const double side = static_cast<double>(std::min(h, w));
    for (auto& b : blobs) {
        b.cy = rng.uniform(0.0, static_cast<double>(h));
        b.cx = rng.uniform(0.0, static_cast<double>(w));
        b.sigma = rng.uniform(0.15, 0.4) * side;
        for (double& c : b.color) c = rng.uniform(-0.4, 0.4);
    }
    Tensor t = Tensor::nchw(1, 3, h, w);
    for (int c = 0; c < 3; ++c) {
        float* p = t.plane(0, c);
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
                double v = base[c] + gx[c] * static_cast<double>(x) / static_cast<double>(w) +
                           gy[c] * static_cast<double>(y) / static_cast<double>(h);
                for (const auto& b : blobs) {
                    const double dy = static_cast<double>(y) - b.cy, dx = static_cast<double>(x) - b.cx;
                    v += b.color[c] * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
                }
                p[y * w + x] = clip01(v);
            }
    }
    return t;
}

Tensor gen_moire(const Tensor& clean, const MoireParams& params) {
    require(clean.ndim() == 4 && clean.dim(1) == 3, ErrorKind::ShapeMismatch, "gen_moire expects [N,3,H,W]");
    const std::int64_t h = clean.dim(2), w = clean.dim(3);
    Tensor out = clean;
    for (std::int64_t n = 0; n < clean.dim(0); ++n)
        for (int c = 0; c < 3; ++c) {
            float* p = out.plane(n, c);
            for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t x = 0; x < w; ++x) {
                    double v = std::pow(std::max(0.0, static_cast<double>(p[y * w + x])), params.gamma);
                    for (const auto& g : params.gratings) {
                        const double proj = static_cast<double>(x) * std::cos(g.orientation) +
                                            static_cast<double>(y) * std::sin(g.orientation);
                        v += g.amplitude * std::sin(kTwoPi * g.frequency * proj + g.phase[c]);
                    }
                    p[y * w + x] = clip01(v);
                }
        }
    return out;
}

Tensor gen_moire(const Tensor& clean, std::uint64_t seed) { return gen_moire(clean, draw_moire_params(seed)); }

ImagePair gen_pair(std::uint64_t image_seed, std::int64_t h, std::int64_t w) {
    Tensor clean = gen_clean(derive_seed(image_seed, 0), h, w);
    Tensor moire = gen_moire(clean, derive_seed(image_seed, 1));
    return {std::move(moire), std::move(clean)};
}

// Metrics

double psnr(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "psnr");
    double se = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

namespace {

std::vector<double> luma(const Tensor& t, std::int64_t n) {
    const auto hw = static_cast<std::size_t>(t.dim(2) * t.dim(3));
    std::vector<double> y(hw);
    const float* r = t.plane(n, 0);
    const float* g = t.plane(n, 1);
    const float* b = t.plane(n, 2);
    for (std::size_t i = 0; i < hw; ++i) y[i] = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
    return y;
}

// Valid-region separable filtering with an 11-tap kernel.
std::vector<double> filter_valid(const std::vector<double>& img, std::int64_t h, std::int64_t w,
                                 const std::vector<double>& k) {
    const auto kn = static_cast<std::int64_t>(k.size());
    const std::int64_t oh = h - kn + 1, ow = w - kn + 1;
    std::vector<double> tmp(static_cast<std::size_t>(h * ow));
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < ow; ++x) {
            double s = 0.0;
            for (std::int64_t i = 0; i < kn; ++i) s += k[static_cast<std::size_t>(i)] * img[static_cast<std::size_t>(y * w + x + i)];
            tmp[static_cast<std::size_t>(y * ow + x)] = s;
        }
    std::vector<double> out(static_cast<std::size_t>(oh * ow));
    for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t x = 0; x < ow; ++x) {
            double s = 0.0;
            for (std::int64_t i = 0; i < kn; ++i) s += k[static_cast<std::size_t>(i)] * tmp[static_cast<std::size_t>((y + i) * ow + x)];
            out[static_cast<std::size_t>(y * ow + x)] = s;
        }
    return out;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "ssim");
    require(a.ndim() == 4 && a.dim(1) == 3, ErrorKind::ShapeMismatch, "ssim expects [N,3,H,W]");
    constexpr int kWin = 11;
    const std::int64_t h = a.dim(2), w = a.dim(3);
    require(h >= kWin && w >= kWin, ErrorKind::InvalidArgument, "ssim: image smaller than the 11x11 window");
    std::vector<double> k(kWin);
    double ksum = 0.0;
    for (int i = 0; i < kWin; ++i) {
        const double d = i - kWin / 2;
        k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        ksum += k[static_cast<std::size_t>(i)];
    }
    for (double& v : k) v /= ksum;
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

    double total = 0.0;
    for (std::int64_t n = 0; n < a.dim(0); ++n) {
        const auto x = luma(a, n);
        const auto y = luma(b, n);
        std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = filter_valid(x, h, w, k), my = filter_valid(y, h, w, k);
        const auto sxx = filter_valid(xx, h, w, k), syy = filter_valid(yy, h, w, k), sxy = filter_valid(xy, h, w, k);
        double acc = 0.0;
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double vx = sxx[i] - mx[i] * mx[i];
            const double vy = syy[i] - my[i] * my[i];
            const double cov = sxy[i] - mx[i] * my[i];
            acc += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
                   ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
        }
        total += acc / static_cast<double>(mx.size());
    }
    return total / static_cast<double>(a.dim(0));
}

std::string format_db(double v, int precision) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}

// Dataset

std::string to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Calib: return "calib";
        case Split::Test: return "test";
    }
    return "train";
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "calib") return Split::Calib;
    if (s == "test") return Split::Test;
    fail(ErrorKind::Format, "unknown split '" + s + "'");
}

std::vector<ManifestEntry> DatasetManifest::split(Split s) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
        if (e.split == s) out.push_back(e);
    return out;
}

DatasetManifest gen_dataset(std::uint64_t seed, const DatasetCounts& counts, std::int64_t h, std::int64_t w,
                            const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) fail(ErrorKind::Io, "cannot create " + out_dir.string() + ": " + ec.message());
    DatasetManifest m;
    m.root = out_dir;
    std::uint64_t index = 0;
    const std::pair<Split, std::size_t> plan[] = {
        {Split::Train, counts.train}, {Split::Calib, counts.calib}, {Split::Test, counts.test}};
    for (const auto& [split, count] : plan) {
        for (std::size_t i = 0; i < count; ++i, ++index) {
            const std::uint64_t s = derive_seed(seed, index);
            const ImagePair pair = gen_pair(s, h, w);
            char stem[64];
            std::snprintf(stem, sizeof stem, "%s_%05zu", to_string(split).c_str(), i);
            ManifestEntry e{split, std::string(stem) + "_clean.ppm", std::string(stem) + "_moire.ppm", s};
            write_ppm(pair.target, out_dir / e.clean);
            write_ppm(pair.input, out_dir / e.moire);
            m.entries.push_back(std::move(e));
        }
    }
    const std::string text = format_manifest(m);
    std::ofstream out(out_dir / "manifest.txt", std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write manifest in " + out_dir.string());
    out << text;
    if (!out) fail(ErrorKind::Io, "manifest write failed");
    return m;
}

std::string format_manifest(const DatasetManifest& m) {
    std::string text;
    char seed[32];
    for (const auto& e : m.entries) {
        std::snprintf(seed, sizeof seed, "%016llx", static_cast<unsigned long long>(e.seed));
        text += to_string(e.split) + "\t" + e.clean + "\t" + e.moire + "\t" + seed + "\n";
    }
    return text;
}

DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& root) {
    DatasetManifest m;
    m.root = root;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::size_t start = 0;
        for (;;) {
            const std::size_t tab = line.find('\t', start);
            f.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (f.size() != 4) fail(ErrorKind::Format, "manifest line " + std::to_string(lineno) + ": expected 4 fields");
        ManifestEntry e;
        e.split = parse_split(f[0]);
        e.clean = f[1];
        e.moire = f[2];
        if (f[3].empty() || f[3].size() > 16 || f[3].find_first_not_of("0123456789abcdefABCDEF") != std::string::npos)
            fail(ErrorKind::Format, "manifest line " + std::to_string(lineno) + ": bad seed");
        e.seed = std::stoull(f[3], nullptr, 16);
        m.entries.push_back(std::move(e));
    }
    return m;
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
    const auto bytes = read_file_bytes(dir / "manifest.txt");
    return parse_manifest(std::string(bytes.begin(), bytes.end()), dir);
}

std::vector<ImagePair> load_pairs(const DatasetManifest& m, Split s) {
    std::vector<ImagePair> out;
    for (const auto& e : m.split(s)) out.push_back({read_ppm(m.root / e.moire), read_ppm(m.root / e.clean)});
    return out;
}

}  // namespace qdm
