#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dpmlat/common.hpp"
#include "dpmlat/rng.hpp"

namespace dpmlat {

// ---------------------------------------------------------------------------
// ImageGrid: a small real-valued image with pixel values in [0, peak].
// Layout: row-major, channel-interleaved ((y * width + x) * channels + ch).
// ---------------------------------------------------------------------------

struct ImageGrid {
    int height = 0, width = 0, channels = 1;
    double peak = 1.0;
    Vec pix;

    ImageGrid() = default;
    ImageGrid(int h, int w, int c, double pk)
        : height(h), width(w), channels(c), peak(pk),
          pix(static_cast<std::size_t>(h) * w * c, 0.0) {
        if (h < 1 || w < 1 || c < 1 || pk <= 0.0)
            throw ValidationError("metrics", "bad image shape");
    }

    double& at(int y, int x, int ch = 0) {
        return pix[(static_cast<std::size_t>(y) * width + x) * channels + ch];
    }
    double at(int y, int x, int ch = 0) const {
        return pix[(static_cast<std::size_t>(y) * width + x) * channels + ch];
    }

    bool same_shape(const ImageGrid& o) const {
        return height == o.height && width == o.width && channels == o.channels &&
               peak == o.peak;
    }

    void validate() const {
        if (pix.size() != static_cast<std::size_t>(height) * width * channels)
            throw DimensionMismatch("metrics", "pixel buffer size");
        for (double v : pix)
            if (!(v >= 0.0 && v <= peak))
                throw ValidationError("metrics", "pixel outside [0, peak]");
    }

    static ImageGrid from_vec(const Vec& v, int h, int w, int c, double peak) {
        ImageGrid img(h, w, c, peak);
        if (v.size() != img.pix.size()) throw DimensionMismatch("metrics", "vector vs image size");
        img.pix = v;
        return img;
    }
};

// ---------------------------------------------------------------------------
// PSNR: 10 log10(peak^2 / MSE), capped (default 100 dB) for identical inputs.
// ---------------------------------------------------------------------------

inline double psnr(const ImageGrid& x, const ImageGrid& y, double cap_db = 100.0) {
    if (!x.same_shape(y)) throw DimensionMismatch("metrics", "psnr shape mismatch");
    double mse = 0.0;
    for (std::size_t i = 0; i < x.pix.size(); ++i) {
        double d = x.pix[i] - y.pix[i];
        mse += d * d;
    }
    mse /= static_cast<double>(x.pix.size());
    if (mse <= 0.0) return cap_db;
    return std::min(cap_db, 10.0 * std::log10(x.peak * x.peak / mse));
}

// ---------------------------------------------------------------------------
// SSIM, Wang et al. formulation: Gaussian-weighted local means, variances and
// covariance over every fully interior window, stabilizers C1 = (K1 peak)^2,
// C2 = (K2 peak)^2, mean over windows and channels.
// ---------------------------------------------------------------------------

struct SsimConfig {
    int window = 7;
    double gaussian_sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
};

inline double ssim(const ImageGrid& x, const ImageGrid& y, const SsimConfig& cfg = {}) {
    if (!x.same_shape(y)) throw DimensionMismatch("metrics", "ssim shape mismatch");
    int w = cfg.window;
    if (w < 1 || w % 2 == 0) throw ValidationError("metrics", "window must be odd and positive");
    if (x.height < w || x.width < w)
        throw ValidationError("metrics", "window larger than image");

    // Normalized Gaussian kernel.
    std::vector<double> kern(static_cast<std::size_t>(w) * w);
    double half = (w - 1) / 2.0, sum = 0.0;
    for (int i = 0; i < w; ++i)
        for (int j = 0; j < w; ++j) {
            double d2 = (i - half) * (i - half) + (j - half) * (j - half);
            double v = std::exp(-d2 / (2.0 * cfg.gaussian_sigma * cfg.gaussian_sigma));
            kern[static_cast<std::size_t>(i) * w + j] = v;
            sum += v;
        }
    for (auto& v : kern) v /= sum;

    double c1 = (cfg.k1 * x.peak) * (cfg.k1 * x.peak);
    double c2 = (cfg.k2 * x.peak) * (cfg.k2 * x.peak);

    double total = 0.0;
    long count = 0;
    for (int ch = 0; ch < x.channels; ++ch) {
        for (int y0 = 0; y0 + w <= x.height; ++y0) {
            for (int x0 = 0; x0 + w <= x.width; ++x0) {
                double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
                for (int i = 0; i < w; ++i)
                    for (int j = 0; j < w; ++j) {
                        double k = kern[static_cast<std::size_t>(i) * w + j];
                        double a = x.at(y0 + i, x0 + j, ch);
                        double b = y.at(y0 + i, x0 + j, ch);
                        mx += k * a;
                        my += k * b;
                        sxx += k * (a * a);
                        syy += k * (b * b);
                        sxy += k * (a * b);  // grouping keeps ssim(x,y) == ssim(y,x) bitwise
                    }
                double vx = sxx - mx * mx;
                double vy = syy - my * my;
                double cxy = sxy - mx * my;
                double num = (2.0 * (mx * my) + c1) * (2.0 * cxy + c2);
                double den = (mx * mx + my * my + c1) * (vx + vy + c2);
                total += num / den;
                ++count;
            }
        }
    }
    return total / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Squared maximum mean discrepancy, biased V-statistic with an rbf kernel
// k(a, b) = exp(-||a - b||^2 / (2 h^2)).
// ---------------------------------------------------------------------------

inline double median_pairwise_distance(const std::vector<Vec>& xs, const std::vector<Vec>& ys) {
    std::vector<Vec> all = xs;
    all.insert(all.end(), ys.begin(), ys.end());
    std::vector<double> d;
    d.reserve(all.size() * (all.size() - 1) / 2);
    for (std::size_t i = 0; i < all.size(); ++i)
        for (std::size_t j = i + 1; j < all.size(); ++j) d.push_back(norm2(all[i] - all[j]));
    if (d.empty()) return 1.0;
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
    double med = d[d.size() / 2];
    return med > 0.0 ? med : 1.0;
}

inline double mmd2(const std::vector<Vec>& xs, const std::vector<Vec>& ys, double bandwidth = 0.0) {
    if (xs.empty() || ys.empty()) throw ValidationError("metrics", "mmd2 needs nonempty sets");
    std::size_t d = xs[0].size();
    for (const auto& v : xs)
        if (v.size() != d) throw DimensionMismatch("metrics", "mmd2 sample dims");
    for (const auto& v : ys)
        if (v.size() != d) throw DimensionMismatch("metrics", "mmd2 sample dims");
    double h = bandwidth > 0.0 ? bandwidth : median_pairwise_distance(xs, ys);
    double inv = 1.0 / (2.0 * h * h);
    auto kern_sum = [&](const std::vector<Vec>& a, const std::vector<Vec>& b) {
        double s = 0.0;
        for (const auto& u : a)
            for (const auto& v : b) {
                double q = 0.0;
                for (std::size_t i = 0; i < u.size(); ++i) q += (u[i] - v[i]) * (u[i] - v[i]);
                s += std::exp(-q * inv);
            }
        return s;
    };
    double nx = static_cast<double>(xs.size()), ny = static_cast<double>(ys.size());
    return kern_sum(xs, xs) / (nx * nx) + kern_sum(ys, ys) / (ny * ny) -
           2.0 * kern_sum(xs, ys) / (nx * ny);
}

// ---------------------------------------------------------------------------
// Sliced Wasserstein-1: average over random unit directions of the 1D W1
// between the projected samples. Unequal set sizes are subsampled to match.
// ---------------------------------------------------------------------------

inline double sliced_w1(std::vector<Vec> xs, std::vector<Vec> ys, int n_projections, Rng& rng) {
    if (xs.empty() || ys.empty()) throw ValidationError("metrics", "sliced_w1 needs nonempty sets");
    if (n_projections < 1) throw ValidationError("metrics", "need at least one projection");
    std::size_t d = xs[0].size();
    auto subsample = [&](std::vector<Vec>& v, std::size_t n) {
        std::vector<Vec> out;
        out.reserve(n);
        for (std::size_t i = 0; i < n; ++i)
            out.push_back(v[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(v.size()) - 1))]);
        v = std::move(out);
    };
    if (xs.size() > ys.size()) subsample(xs, ys.size());
    if (ys.size() > xs.size()) subsample(ys, xs.size());

    std::size_t n = xs.size();
    std::vector<double> px(n), py(n);
    double total = 0.0;
    for (int p = 0; p < n_projections; ++p) {
        Vec dir = rng.normal_vec(d);
        double nrm = norm2(dir);
        if (nrm < 1e-12) {
            --p;
            continue;
        }
        for (auto& v : dir) v /= nrm;
        for (std::size_t i = 0; i < n; ++i) {
            px[i] = dot(xs[i], dir);
            py[i] = dot(ys[i], dir);
        }
        std::sort(px.begin(), px.end());
        std::sort(py.begin(), py.end());
        double w1 = 0.0;
        for (std::size_t i = 0; i < n; ++i) w1 += std::abs(px[i] - py[i]);
        total += w1 / static_cast<double>(n);
    }
    return total / static_cast<double>(n_projections);
}

}  // namespace dpmlat
