#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "pcs/dataset.hpp"
#include "pcs/pipeline.hpp"

namespace pcs {

/// 10 log10(peak^2 / MSE) over all elements; +inf for identical inputs.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0) {
    require_same_shape(a.shape(), b.shape(), "psnr");
    if (!(peak > 0.0)) throw ConfigError("psnr: peak must be positive");
    double se = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = double(a[i]) - double(b[i]);
        se += d * d;
    }
    if (se == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / (se / double(a.size())));
}

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;
inline constexpr const char* kSsimVariant = "ssim-ref-11x11";

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
inline std::array<double, kSsimWindow> ssim_gaussian() {
    std::array<double, kSsimWindow> g{};
    double total = 0.0;
    const double c = double(kSsimWindow / 2);
    for (std::size_t i = 0; i < kSsimWindow; ++i) {
        g[i] = std::exp(-((double(i) - c) * (double(i) - c)) / (2.0 * kSsimSigma * kSsimSigma));
        total += g[i];
    }
    for (auto& v : g) v /= total;
    return g;
}

namespace detail {

/// Mean SSIM over all fully-contained 11x11 windows of one plane, using
/// separable Gaussian filtering of the five moment images.
inline double ssim_plane(const double* a, const double* b, std::size_t h, std::size_t w, double peak) {
    const auto g = ssim_gaussian();
    const std::size_t oh = h - kSsimWindow + 1, ow = w - kSsimWindow + 1;
    // Horizontal pass: five moment images of size h x ow.
    std::vector<double> hx(h * ow), hy(h * ow), hxx(h * ow), hyy(h * ow), hxy(h * ow);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
            double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
            for (std::size_t k = 0; k < kSsimWindow; ++k) {
                const double va = a[y * w + x + k], vb = b[y * w + x + k], gk = g[k];
                sx += gk * va;
                sy += gk * vb;
                sxx += gk * va * va;
                syy += gk * vb * vb;
                sxy += gk * va * vb;
            }
            const std::size_t i = y * ow + x;
            hx[i] = sx, hy[i] = sy, hxx[i] = sxx, hyy[i] = syy, hxy[i] = sxy;
        }
    }
    const double c1 = (kSsimK1 * peak) * (kSsimK1 * peak);
    const double c2 = (kSsimK2 * peak) * (kSsimK2 * peak);
    double total = 0.0;
    for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
            double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
            for (std::size_t k = 0; k < kSsimWindow; ++k) {
                const std::size_t i = (y + k) * ow + x;
                const double gk = g[k];
                mx += gk * hx[i];
                my += gk * hy[i];
                mxx += gk * hxx[i];
                myy += gk * hyy[i];
                mxy += gk * hxy[i];
            }
            const double vx = mxx - mx * mx, vy = myy - my * my, cxy = mxy - mx * my;
            total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    return total / double(oh * ow);
}

}  // namespace detail

/// Mean structural similarity (Gaussian 11x11, sigma 1.5, K1 0.01, K2 0.03),
/// averaged over every (sample, channel) plane.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0) {
    require_same_shape(a.shape(), b.shape(), "ssim");
    const Shape& s = a.shape();
    if (s.h < kSsimWindow || s.w < kSsimWindow) {
        throw GeometryError("ssim: image " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                            " is smaller than the 11x11 window");
    }
    double total = 0.0;
    std::vector<double> pa(s.plane()), pb(s.plane());
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            auto sa = a.plane(n, c), sb = b.plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) pa[i] = double(sa[i]), pb[i] = double(sb[i]);
            total += detail::ssim_plane(pa.data(), pb.data(), s.h, s.w, peak);
        }
    }
    return total / double(s.n * s.c);
}

/// Grid-aligned edge energy: mean |neighbour difference| across block
/// boundaries over the mean elsewhere, for columns and rows, averaged.
/// 1.0 means no block structure; a 0/0 ratio counts as 1.0.
template <typename T>
double blockiness(const Tensor<T>& img, std::size_t block) {
    const Shape& s = img.shape();
    if (block < 2 || s.h % block != 0 || s.w % block != 0 || s.h / block < 2 || s.w / block < 2) {
        throw GeometryError("blockiness: image " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                            " must hold at least 2x2 blocks of size " + std::to_string(block));
    }
    auto ratio = [](double on, std::size_t n_on, double off, std::size_t n_off) {
        const double a = on / double(n_on), b = off / double(n_off);
        if (a == 0.0 && b == 0.0) return 1.0;
        if (b == 0.0) return std::numeric_limits<double>::infinity();
        return a / b;
    };
    double h_on = 0, h_off = 0, v_on = 0, v_off = 0;
    std::size_t nh_on = 0, nh_off = 0, nv_on = 0, nv_off = 0;
    for (std::size_t b = 0; b < s.n; ++b) {
        for (std::size_t c = 0; c < s.c; ++c) {
            for (std::size_t y = 0; y < s.h; ++y) {
                for (std::size_t x = 0; x + 1 < s.w; ++x) {
                    const double d = std::abs(double(img.at(b, c, y, x + 1)) - double(img.at(b, c, y, x)));
                    if ((x + 1) % block == 0) {
                        h_on += d, ++nh_on;
                    } else {
                        h_off += d, ++nh_off;
                    }
                }
            }
            for (std::size_t y = 0; y + 1 < s.h; ++y) {
                for (std::size_t x = 0; x < s.w; ++x) {
                    const double d = std::abs(double(img.at(b, c, y + 1, x)) - double(img.at(b, c, y, x)));
                    if ((y + 1) % block == 0) {
                        v_on += d, ++nv_on;
                    } else {
                        v_off += d, ++nv_off;
                    }
                }
            }
        }
    }
    return 0.5 * (ratio(h_on, nh_on, h_off, nh_off) + ratio(v_on, nv_on, v_off, nv_off));
}

// Reports -------------------------------------------------------------------

struct MetricRow {
    std::string name;
    double psnr_db = 0.0;
    double ssim = 0.0;
    double blockiness = 0.0;
};

struct MetricReport {
    std::vector<MetricRow> rows;
    double mean_psnr_db = 0.0;
    double mean_ssim = 0.0;
    double mean_blockiness = 0.0;

    void add(MetricRow row) {
        rows.push_back(std::move(row));
        finalize();
    }

    /// Recomputes the aggregate means from the rows.
    void finalize() {
        double p = 0, s = 0, b = 0;
        for (const auto& r : rows) p += r.psnr_db, s += r.ssim, b += r.blockiness;
        const double n = rows.empty() ? 1.0 : double(rows.size());
        mean_psnr_db = p / n, mean_ssim = s / n, mean_blockiness = b / n;
    }
};

struct EvalOptions {
    double peak = 1.0;
    /// 0 uses the model's measurement stride.
    std::size_t block = 0;
    PadPolicy pad_policy = PadPolicy::ReflectPadThenCrop;
};

/// Recovers every image in `dataset_dir` (sorted by filename) and scores it
/// against the original. Color images are processed per channel.
template <typename T>
MetricReport evaluate(const ModelParams<T>& params, const std::string& dataset_dir, const EvalOptions& opt = {}) {
    MetricReport report;
    const std::size_t block = opt.block ? opt.block : params.config.measurement_stride;
    for (const auto& path : list_images(dataset_dir)) {
        const Tensor<T> original = read_image<T>(path.string());
        const Tensor<T> rec = recover_image(params, original, opt.pad_policy);
        MetricRow row{path.filename().string(), psnr(rec, original, opt.peak), 0.0, 0.0};
        const Shape& s = original.shape();
        row.ssim = std::min(s.h, s.w) >= kSsimWindow ? ssim(rec, original, opt.peak)
                                                      : std::numeric_limits<double>::quiet_NaN();
        row.blockiness = (s.h % block == 0 && s.w % block == 0 && s.h >= 2 * block && s.w >= 2 * block)
                             ? blockiness(rec, block)
                             : std::numeric_limits<double>::quiet_NaN();
        report.rows.push_back(std::move(row));
    }
    report.finalize();
    return report;
}

}  // namespace pcs
