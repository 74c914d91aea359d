#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <tuple>

#include "fpsr/matcher.hpp"

namespace fpsr {

using std::numbers::pi;

namespace {

// Clockwise 8-neighbourhood starting north: P2..P9 in Zhang-Suen notation.
constexpr std::array<int, 8> kDr = {-1, -1, 0, 1, 1, 1, 0, -1};
constexpr std::array<int, 8> kDc = {0, 1, 1, 1, 0, -1, -1, -1};

Raster gaussian_blur(const Raster& src, double sigma) {
    const int rad = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * rad + 1);
    double s = 0.0;
    for (int i = -rad; i <= rad; ++i) s += k[i + rad] = std::exp(-i * i / (2.0 * sigma * sigma));
    for (double& v : k) v /= s;
    Raster tmp(src.height, src.width), out(src.height, src.width);
    for (int r = 0; r < src.height; ++r) {
        for (int c = 0; c < src.width; ++c) {
            double acc = 0.0;
            for (int i = -rad; i <= rad; ++i) acc += k[i + rad] * src.at(r, std::clamp(c + i, 0, src.width - 1));
            tmp.at(r, c) = acc;
        }
    }
    for (int r = 0; r < src.height; ++r) {
        for (int c = 0; c < src.width; ++c) {
            double acc = 0.0;
            for (int i = -rad; i <= rad; ++i) acc += k[i + rad] * tmp.at(std::clamp(r + i, 0, src.height - 1), c);
            out.at(r, c) = acc;
        }
    }
    return out;
}

/// Box mean and standard deviation over a window clipped to the image.
void local_stats(const Raster& src, int window, Raster& mean, Raster& stddev) {
    const int h = src.height, w = src.width, half = window / 2;
    std::vector<double> s1(static_cast<std::size_t>(h + 1) * (w + 1), 0.0), s2(s1.size(), 0.0);
    auto at = [w](std::vector<double>& v, int r, int c) -> double& { return v[static_cast<std::size_t>(r) * (w + 1) + c]; };
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const double x = src.at(r, c);
            at(s1, r + 1, c + 1) = x + at(s1, r, c + 1) + at(s1, r + 1, c) - at(s1, r, c);
            at(s2, r + 1, c + 1) = x * x + at(s2, r, c + 1) + at(s2, r + 1, c) - at(s2, r, c);
        }
    }
    mean = Raster(h, w);
    stddev = Raster(h, w);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const int r0 = std::max(0, r - half), r1 = std::min(h, r + half + 1);
            const int c0 = std::max(0, c - half), c1 = std::min(w, c + half + 1);
            const double n = static_cast<double>((r1 - r0) * (c1 - c0));
            const double m = (at(s1, r1, c1) - at(s1, r0, c1) - at(s1, r1, c0) + at(s1, r0, c0)) / n;
            const double q = (at(s2, r1, c1) - at(s2, r0, c1) - at(s2, r1, c0) + at(s2, r0, c0)) / n;
            mean.at(r, c) = m;
            stddev.at(r, c) = std::sqrt(std::max(0.0, q - m * m));
        }
    }
}

void drop_small_components(BinaryImage& img, int min_size) {
    std::vector<int> label(img.data.size(), -1);
    std::vector<int> stack, members;
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c) {
            const std::size_t start = static_cast<std::size_t>(r) * img.width + c;
            if (!img.data[start] || label[start] >= 0) continue;
            members.clear();
            stack.assign(1, static_cast<int>(start));
            label[start] = 1;
            while (!stack.empty()) {
                const int p = stack.back();
                stack.pop_back();
                members.push_back(p);
                const int pr = p / img.width, pc = p % img.width;
                for (int k = 0; k < 8; ++k) {
                    const int nr = pr + kDr[k], nc = pc + kDc[k];
                    if (!img.get(nr, nc)) continue;
                    const std::size_t q = static_cast<std::size_t>(nr) * img.width + nc;
                    if (label[q] >= 0) continue;
                    label[q] = 1;
                    stack.push_back(static_cast<int>(q));
                }
            }
            if (static_cast<int>(members.size()) < min_size) {
                for (int p : members) img.data[static_cast<std::size_t>(p)] = 0;
            }
        }
    }
}

int crossing_number(const BinaryImage& s, int r, int c) {
    int t = 0;
    for (int k = 0; k < 8; ++k) {
        t += std::abs(int(s.get(r + kDr[k], c + kDc[k])) - int(s.get(r + kDr[(k + 1) % 8], c + kDc[(k + 1) % 8])));
    }
    return t / 2;
}

/// Walks up to `steps` pixels along the skeleton from (r,c) through neighbour (nr,nc) and
/// returns the end of the walk.
std::pair<int, int> walk(const BinaryImage& s, int r, int c, int nr, int nc, int steps) {
    int pr = r, pc = c, cr = nr, cc = nc;
    for (int i = 1; i < steps; ++i) {
        int next_r = -1, next_c = -1;
        for (int k = 0; k < 8; ++k) {
            const int tr = cr + kDr[k], tc = cc + kDc[k];
            if ((tr == pr && tc == pc) || (tr == r && tc == c) || !s.get(tr, tc)) continue;
            // Skip pixels adjacent to where we came from to avoid doubling back at corners.
            if (std::abs(tr - pr) <= 1 && std::abs(tc - pc) <= 1) continue;
            next_r = tr;
            next_c = tc;
            break;
        }
        if (next_r < 0) break;
        pr = cr;
        pc = cc;
        cr = next_r;
        cc = next_c;
    }
    return {cr, cc};
}

double axis_angle(double dr, double dc) {
    double a = std::atan2(dr, dc);
    a = std::fmod(a, pi);
    return a < 0.0 ? a + pi : a;
}

}  // namespace

std::size_t BinaryImage::count() const {
    return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

BinaryImage binarize_ridges(const FingerprintImage& image, const MinutiaeParams& params) {
    const double scale = image.ppi > 0.0 ? image.ppi / 1000.0 : 1.0;
    const Raster smooth = gaussian_blur(image, params.smooth_sigma * scale);
    Raster mean, sd;
    local_stats(smooth, std::max(3, static_cast<int>(std::lround(params.mean_window * scale)) | 1), mean, sd);
    BinaryImage fg(image.height, image.width);
    for (int r = 0; r < image.height; ++r) {
        for (int c = 0; c < image.width; ++c) {
            // Flat regions carry no ridge structure.
            fg.at(r, c) = sd.at(r, c) > 0.03 && smooth.at(r, c) < mean.at(r, c) - 0.01 ? 1 : 0;
        }
    }
    drop_small_components(fg, params.min_component);
    return fg;
}

BinaryImage thin(const BinaryImage& foreground) {
    BinaryImage s = foreground;
    std::vector<std::size_t> remove;
    for (bool changed = true; changed;) {
        changed = false;
        for (int pass = 0; pass < 2; ++pass) {
            remove.clear();
            for (int r = 0; r < s.height; ++r) {
                for (int c = 0; c < s.width; ++c) {
                    if (!s.at(r, c)) continue;
                    std::array<int, 8> p{};
                    int b = 0;
                    for (int k = 0; k < 8; ++k) b += p[k] = s.get(r + kDr[k], c + kDc[k]);
                    if (b < 2 || b > 6) continue;
                    int a = 0;
                    for (int k = 0; k < 8; ++k) a += (p[k] == 0 && p[(k + 1) % 8] == 1);
                    if (a != 1) continue;
                    // p[0]=P2 (N), p[2]=P4 (E), p[4]=P6 (S), p[6]=P8 (W)
                    if (pass == 0) {
                        if (p[0] * p[2] * p[4] != 0 || p[2] * p[4] * p[6] != 0) continue;
                    } else {
                        if (p[0] * p[2] * p[6] != 0 || p[0] * p[4] * p[6] != 0) continue;
                    }
                    remove.push_back(static_cast<std::size_t>(r) * s.width + c);
                }
            }
            for (auto i : remove) s.data[i] = 0;
            changed = changed || !remove.empty();
        }
    }
    return s;
}

std::vector<Minutia> minutiae_from_skeleton(const BinaryImage& skeleton, int border) {
    constexpr int kSteps = 6;
    std::vector<Minutia> found;
    for (int r = 0; r < skeleton.height; ++r) {
        for (int c = 0; c < skeleton.width; ++c) {
            if (!skeleton.at(r, c)) continue;
            const int cn = crossing_number(skeleton, r, c);
            if (cn != 1 && cn != 3) continue;
            if (r < border || c < border || r >= skeleton.height - border || c >= skeleton.width - border) continue;
            Minutia m;
            m.row = r;
            m.col = c;
            m.kind = cn == 1 ? MinutiaKind::Ending : MinutiaKind::Bifurcation;
            // Doubled-angle average of the branch directions.
            double sx = 0.0, sy = 0.0;
            for (int k = 0; k < 8; ++k) {
                const int nr = r + kDr[k], nc = c + kDc[k];
                if (!skeleton.get(nr, nc)) continue;
                const auto [er, ec] = walk(skeleton, r, c, nr, nc, kSteps);
                const double a = axis_angle(er - r, ec - c);
                sx += std::cos(2.0 * a);
                sy += std::sin(2.0 * a);
            }
            m.orientation = axis_angle(std::sin(std::atan2(sy, sx) / 2.0), std::cos(std::atan2(sy, sx) / 2.0));
            found.push_back(m);
        }
    }
    std::vector<Minutia> merged;
    for (const auto& m : found) {
        const bool dup = std::any_of(merged.begin(), merged.end(), [&](const Minutia& o) {
            return o.kind == m.kind && std::hypot(o.row - m.row, o.col - m.col) <= 2.0;
        });
        if (!dup) merged.push_back(m);
    }
    return merged;
}

std::vector<Minutia> extract_minutiae(const FingerprintImage& image, const MinutiaeParams& params) {
    const BinaryImage fg = binarize_ridges(image, params);
    const BinaryImage skel = thin(fg);
    if (skel.count() == 0) throw std::invalid_argument("extract_minutiae: blank image (no skeleton)");
    return minutiae_from_skeleton(skel, params.border);
}

// ------------------------------------------------------------------ matching

namespace {

double angle_gap(double a, double b) {
    double d = std::fmod(std::abs(a - b), pi);
    return std::min(d, pi - d);
}

}  // namespace

int count_minutia_pairs(const std::vector<Minutia>& a, const std::vector<Minutia>& b, double theta, double ty,
                        double tx, const MinutiaeParams& params) {
    const double ct = std::cos(theta), st = std::sin(theta);
    std::vector<std::tuple<double, int, int>> cand;
    const double d2max = params.distance_tol * params.distance_tol;
    for (int j = 0; j < static_cast<int>(b.size()); ++j) {
        const double r = st * b[j].col + ct * b[j].row + ty;
        const double c = ct * b[j].col - st * b[j].row + tx;
        const double o = b[j].orientation + theta;
        for (int i = 0; i < static_cast<int>(a.size()); ++i) {
            const double d2 = (a[i].row - r) * (a[i].row - r) + (a[i].col - c) * (a[i].col - c);
            if (d2 <= d2max && angle_gap(a[i].orientation, o) <= params.angle_tol) cand.emplace_back(d2, i, j);
        }
    }
    std::sort(cand.begin(), cand.end());
    std::vector<char> ua(a.size(), 0), ub(b.size(), 0);
    int m = 0;
    for (const auto& [d2, i, j] : cand) {
        if (ua[i] || ub[j]) continue;
        ua[i] = ub[j] = 1;
        ++m;
    }
    return m;
}

double minutiae_match_score(const std::vector<Minutia>& a, const std::vector<Minutia>& b,
                            const MinutiaeParams& params) {
    if (a.empty() || b.empty()) return 0.0;
    struct Model {
        int count;
        double theta, ty, tx;
    };
    Model best{count_minutia_pairs(a, b, 0.0, 0.0, 0.0, params), 0.0, 0.0, 0.0};
    const double bin = params.distance_tol / 2.0;
    const int steps = static_cast<int>(std::floor(params.max_rotation / params.rotation_step + 1e-9));
    for (int s = -steps; s <= steps; ++s) {
        const double theta = s * params.rotation_step;
        const double ct = std::cos(theta), st = std::sin(theta);
        // Hough vote over translations implied by orientation-compatible pairs.
        struct Vote {
            long key;
            double ty, tx;
        };
        std::vector<Vote> votes;
        for (const auto& mb : b) {
            const double rr = st * mb.col + ct * mb.row, rc = ct * mb.col - st * mb.row;
            for (const auto& ma : a) {
                if (angle_gap(ma.orientation, mb.orientation + theta) > params.angle_tol) continue;
                const double ty = ma.row - rr, tx = ma.col - rc;
                const long ky = std::lround(std::floor(ty / bin)), kx = std::lround(std::floor(tx / bin));
                votes.push_back({ky * 100003L + kx, ty, tx});
            }
        }
        if (votes.empty()) continue;
        std::sort(votes.begin(), votes.end(), [](const Vote& x, const Vote& y) { return x.key < y.key; });
        struct Peak {
            std::size_t n;
            double ty, tx;
        };
        std::vector<Peak> peaks;
        for (std::size_t i = 0; i < votes.size();) {
            std::size_t j = i;
            double sy = 0.0, sx = 0.0;
            while (j < votes.size() && votes[j].key == votes[i].key) {
                sy += votes[j].ty;
                sx += votes[j].tx;
                ++j;
            }
            peaks.push_back({j - i, sy / static_cast<double>(j - i), sx / static_cast<double>(j - i)});
            i = j;
        }
        std::stable_sort(peaks.begin(), peaks.end(), [](const Peak& x, const Peak& y) { return x.n > y.n; });
        for (std::size_t k = 0; k < std::min<std::size_t>(5, peaks.size()); ++k) {
            const int n = count_minutia_pairs(a, b, theta, peaks[k].ty, peaks[k].tx, params);
            if (n > best.count) best = {n, theta, peaks[k].ty, peaks[k].tx};
        }
    }
    // Local refinement around the best coarse model.
    const Model coarse = best;
    for (double dt = -params.rotation_step; dt <= params.rotation_step + 1e-12; dt += params.rotation_step / 4.0) {
        for (int dy = -2; dy <= 2; ++dy) {
            for (int dx = -2; dx <= 2; ++dx) {
                const int n = count_minutia_pairs(a, b, coarse.theta + dt, coarse.ty + dy, coarse.tx + dx, params);
                if (n > best.count) best = {n, coarse.theta + dt, coarse.ty + dy, coarse.tx + dx};
            }
        }
    }
    return 2.0 * best.count / static_cast<double>(a.size() + b.size());
}

}  // namespace fpsr
