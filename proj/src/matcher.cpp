#include "fpsr/matcher.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>

namespace fpsr {

using std::numbers::pi;

// ----------------------------------------------------------------- correlation

Raster bandpass(const Raster& image, double sigma_low, double sigma_high) {
    if (!(sigma_low > 0.0) || !(sigma_high > sigma_low)) {
        throw std::invalid_argument("bandpass: need 0 < sigma_low < sigma_high");
    }
    const int rad = static_cast<int>(std::ceil(3.0 * sigma_high));
    if (image.height <= 2 * rad || image.width <= 2 * rad) throw std::invalid_argument("bandpass: image too small");
    auto kernel = [rad](double sigma) {
        std::vector<double> k(2 * rad + 1);
        double s = 0.0;
        for (int i = -rad; i <= rad; ++i) s += k[i + rad] = std::exp(-i * i / (2.0 * sigma * sigma));
        for (double& v : k) v /= s;
        return k;
    };
    const auto klo = kernel(sigma_low), khi = kernel(sigma_high);
    const int oh = image.height - 2 * rad, ow = image.width - 2 * rad;
    // Difference of two separable valid-mode convolutions.
    auto filter = [&](const std::vector<double>& k) {
        Raster tmp(image.height, ow), out(oh, ow);
        for (int r = 0; r < image.height; ++r) {
            for (int c = 0; c < ow; ++c) {
                double acc = 0.0;
                for (int i = 0; i <= 2 * rad; ++i) acc += k[i] * image.at(r, c + i);
                tmp.at(r, c) = acc;
            }
        }
        for (int r = 0; r < oh; ++r) {
            for (int c = 0; c < ow; ++c) {
                double acc = 0.0;
                for (int i = 0; i <= 2 * rad; ++i) acc += k[i] * tmp.at(r + i, c);
                out.at(r, c) = acc;
            }
        }
        return out;
    };
    Raster lo = filter(klo);
    const Raster hi = filter(khi);
    for (std::size_t i = 0; i < lo.size(); ++i) lo.data[i] -= hi.data[i];
    return lo;
}

namespace {

struct Integral {
    int h = 0, w = 0;
    std::vector<double> s1, s2;

    explicit Integral(const Raster& r) : h(r.height), w(r.width) {
        s1.assign(static_cast<std::size_t>(h + 1) * (w + 1), 0.0);
        s2 = s1;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double v = r.at(y, x);
                s1[idx(y + 1, x + 1)] = v + s1[idx(y, x + 1)] + s1[idx(y + 1, x)] - s1[idx(y, x)];
                s2[idx(y + 1, x + 1)] = v * v + s2[idx(y, x + 1)] + s2[idx(y + 1, x)] - s2[idx(y, x)];
            }
        }
    }
    std::size_t idx(int y, int x) const { return static_cast<std::size_t>(y) * (w + 1) + x; }
    /// Sums over rows [r0,r1) and cols [c0,c1).
    std::pair<double, double> box(int r0, int r1, int c0, int c1) const {
        auto q = [&](const std::vector<double>& s) {
            return s[idx(r1, c1)] - s[idx(r0, c1)] - s[idx(r1, c0)] + s[idx(r0, c0)];
        };
        return {q(s1), q(s2)};
    }
};

/// corr(dy,dx) = sum_x a(x) b(x - (dy,dx)) for all shifts, via zero-padded FFTs.
class CrossCorrelator {
public:
    CrossCorrelator(const Raster& a, const Raster& b)
        : ph_(a.height + b.height), pw_(a.width + b.width), out_(static_cast<std::size_t>(ph_) * pw_) {
        const int cw = pw_ / 2 + 1;
        std::vector<double> buf(static_cast<std::size_t>(ph_) * pw_, 0.0);
        std::vector<std::complex<double>> fa(static_cast<std::size_t>(ph_) * cw), fb(fa.size());
        auto forward = [&](const Raster& src, std::vector<std::complex<double>>& dst) {
            std::fill(buf.begin(), buf.end(), 0.0);
            for (int r = 0; r < src.height; ++r) {
                std::copy_n(&src.data[static_cast<std::size_t>(r) * src.width], src.width,
                            &buf[static_cast<std::size_t>(r) * pw_]);
            }
            fftw_plan p = fftw_plan_dft_r2c_2d(ph_, pw_, buf.data(), reinterpret_cast<fftw_complex*>(dst.data()),
                                               FFTW_ESTIMATE);
            fftw_execute(p);
            fftw_destroy_plan(p);
        };
        forward(a, fa);
        forward(b, fb);
        for (std::size_t i = 0; i < fa.size(); ++i) fa[i] *= std::conj(fb[i]);
        fftw_plan p = fftw_plan_dft_c2r_2d(ph_, pw_, reinterpret_cast<fftw_complex*>(fa.data()), out_.data(),
                                           FFTW_ESTIMATE);
        fftw_execute(p);
        fftw_destroy_plan(p);
        const double norm = 1.0 / (static_cast<double>(ph_) * pw_);
        for (double& v : out_) v *= norm;
    }

    double at(int dy, int dx) const {
        const int y = ((dy % ph_) + ph_) % ph_, x = ((dx % pw_) + pw_) % pw_;
        return out_[static_cast<std::size_t>(y) * pw_ + x];
    }

private:
    int ph_, pw_;
    std::vector<double> out_;
};

}  // namespace

double correlation_match_score(const FingerprintImage& a, const FingerprintImage& b, const CorrelationParams& params) {
    if (a.ppi != b.ppi) throw std::invalid_argument("correlation_match_score: ppi mismatch");
    if (std::abs(a.height - b.height) > params.max_shift || std::abs(a.width - b.width) > params.max_shift) {
        throw std::invalid_argument("correlation_match_score: size mismatch beyond search window");
    }
    const double scale = a.ppi / 1000.0;
    const Raster fa = bandpass(a, params.sigma_low * scale, params.sigma_high * scale);
    const Raster fb = bandpass(b, params.sigma_low * scale, params.sigma_high * scale);
    const Integral ia(fa), ib(fb);
    const CrossCorrelator xc(fa, fb);

    double best = -1.0;
    for (int dy = -params.max_shift; dy <= params.max_shift; ++dy) {
        for (int dx = -params.max_shift; dx <= params.max_shift; ++dx) {
            // a(r,c) is paired with b(r-dy, c-dx).
            const int r0 = std::max(0, dy), r1 = std::min(fa.height, fb.height + dy);
            const int c0 = std::max(0, dx), c1 = std::min(fa.width, fb.width + dx);
            if (r1 - r0 < 1 || c1 - c0 < 1) continue;
            const double n = static_cast<double>((r1 - r0) * (c1 - c0));
            const auto [sa, saa] = ia.box(r0, r1, c0, c1);
            const auto [sb, sbb] = ib.box(r0 - dy, r1 - dy, c0 - dx, c1 - dx);
            const double va = saa - sa * sa / n, vb = sbb - sb * sb / n;
            if (va <= 1e-12 || vb <= 1e-12) continue;
            const double cov = xc.at(dy, dx) - sa * sb / n;
            best = std::max(best, std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0));
        }
    }
    return (best + 1.0) / 2.0;
}

// ----------------------------------------------------------------------- pores

std::vector<std::vector<double>> pore_descriptors(const FingerprintImage& image, const PorePointSet& pores,
                                                  int radius) {
    std::vector<std::vector<double>> out;
    out.reserve(pores.size());
    for (const auto& p : pores.points) {
        const int pr = static_cast<int>(std::lround(p.row)), pc = static_cast<int>(std::lround(p.col));
        std::vector<double> d;
        d.reserve(static_cast<std::size_t>((2 * radius + 1) * (2 * radius + 1)));
        for (int r = pr - radius; r <= pr + radius; ++r) {
            for (int c = pc - radius; c <= pc + radius; ++c) {
                d.push_back(image.at(std::clamp(r, 0, image.height - 1), std::clamp(c, 0, image.width - 1)));
            }
        }
        double mean = 0.0;
        for (double v : d) mean += v;
        mean /= static_cast<double>(d.size());
        double norm = 0.0;
        for (double& v : d) {
            v -= mean;
            norm += v * v;
        }
        norm = std::sqrt(norm);
        if (norm > 1e-12) {
            for (double& v : d) v /= norm;
        }
        out.push_back(std::move(d));
    }
    return out;
}

double pore_match_score(const FingerprintImage& image_a, const PorePointSet& pores_a, const FingerprintImage& image_b,
                        const PorePointSet& pores_b, const PoreMatchParams& params) {
    const std::size_t na = pores_a.size(), nb = pores_b.size();
    if (static_cast<int>(na) < params.min_pores || static_cast<int>(nb) < params.min_pores) return 0.0;
    const double scale = image_a.ppi / 1000.0;
    const int radius = std::max(1, static_cast<int>(std::lround(params.patch_radius * scale)));
    const auto da = pore_descriptors(image_a, pores_a, radius);
    const auto db = pore_descriptors(image_b, pores_b, radius);

    std::vector<double> dist(na * nb);
    for (std::size_t i = 0; i < na; ++i) {
        for (std::size_t j = 0; j < nb; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < da[i].size(); ++k) {
                const double e = da[i][k] - db[j][k];
                s += e * e;
            }
            dist[i * nb + j] = s;
        }
    }
    std::vector<std::size_t> best_b(na), best_a(nb);
    for (std::size_t i = 0; i < na; ++i) {
        best_b[i] = static_cast<std::size_t>(std::min_element(dist.begin() + i * nb, dist.begin() + (i + 1) * nb) -
                                             (dist.begin() + i * nb));
    }
    for (std::size_t j = 0; j < nb; ++j) {
        std::size_t arg = 0;
        for (std::size_t i = 1; i < na; ++i) {
            if (dist[i * nb + j] < dist[arg * nb + j]) arg = i;
        }
        best_a[j] = arg;
    }
    std::vector<std::pair<std::size_t, std::size_t>> corr;
    for (std::size_t i = 0; i < na; ++i) {
        if (best_a[best_b[i]] == i) corr.emplace_back(i, best_b[i]);
    }
    if (corr.size() < 2) return 0.0;

    const double tol = params.inlier_radius * scale;
    auto inliers = [&](double theta, double ty, double tx) {
        const double ct = std::cos(theta), st = std::sin(theta);
        int n = 0;
        for (const auto& [i, j] : corr) {
            const auto& pa = pores_a.points[i];
            const auto& pb = pores_b.points[j];
            const double r = st * pb.col + ct * pb.row + ty, c = ct * pb.col - st * pb.row + tx;
            if ((pa.row - r) * (pa.row - r) + (pa.col - c) * (pa.col - c) <= tol * tol) ++n;
        }
        return n;
    };
    auto hypothesis = [&](std::size_t u, std::size_t v) -> int {
        const auto& a1 = pores_a.points[corr[u].first];
        const auto& a2 = pores_a.points[corr[v].first];
        const auto& b1 = pores_b.points[corr[u].second];
        const auto& b2 = pores_b.points[corr[v].second];
        const double la = std::hypot(a2.row - a1.row, a2.col - a1.col);
        const double lb = std::hypot(b2.row - b1.row, b2.col - b1.col);
        if (la < 1.0 || lb < 1.0 || std::abs(la - lb) > 2.0 * tol) return 0;
        const double theta = std::atan2(a2.row - a1.row, a2.col - a1.col) - std::atan2(b2.row - b1.row, b2.col - b1.col);
        const double ct = std::cos(theta), st = std::sin(theta);
        const double ty = a1.row - (st * b1.col + ct * b1.row);
        const double tx = a1.col - (ct * b1.col - st * b1.row);
        return inliers(theta, ty, tx);
    };

    int best = 0;
    const std::size_t m = corr.size();
    if (m * (m - 1) / 2 <= static_cast<std::size_t>(params.iterations)) {
        for (std::size_t u = 0; u < m; ++u) {
            for (std::size_t v = u + 1; v < m; ++v) best = std::max(best, hypothesis(u, v));
        }
    } else {
        std::mt19937_64 rng(params.seed);
        std::uniform_int_distribution<std::size_t> pick(0, m - 1);
        for (int it = 0; it < params.iterations; ++it) {
            const std::size_t u = pick(rng);
            std::size_t v = pick(rng);
            if (u == v) v = (v + 1) % m;
            best = std::max(best, hypothesis(u, v));
        }
    }
    return static_cast<double>(best) / static_cast<double>(std::min(na, nb));
}

// -------------------------------------------------------------- score algebra

std::string to_string(MatchLevel level) {
    switch (level) {
        case MatchLevel::Correlation: return "correlation";
        case MatchLevel::Minutiae: return "minutiae";
        case MatchLevel::Pore: return "pore";
        case MatchLevel::Fused: return "fused";
    }
    return "unknown";
}

std::vector<double> minmax_normalize(const std::vector<double>& scores) {
    if (scores.empty()) return {};
    const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
    std::vector<double> out(scores.size(), 0.5);
    if (*hi == *lo) return out;
    const double span = *hi - *lo;
    for (std::size_t i = 0; i < scores.size(); ++i) out[i] = (scores[i] - *lo) / span;
    return out;
}

std::vector<MatchScore> fuse_scores(const std::vector<std::vector<MatchScore>>& per_level) {
    if (per_level.empty()) throw std::invalid_argument("fuse_scores: no levels");
    const auto& first = per_level.front();
    std::map<std::pair<std::string, std::string>, std::size_t> index;
    for (std::size_t i = 0; i < first.size(); ++i) {
        if (!index.emplace(std::make_pair(first[i].probe, first[i].gallery), i).second) {
            throw std::invalid_argument("fuse_scores: duplicate pair " + first[i].probe + "/" + first[i].gallery);
        }
    }
    std::vector<double> sum(first.size(), 0.0);
    for (const auto& level : per_level) {
        if (level.size() != first.size()) throw std::invalid_argument("fuse_scores: pair-set mismatch");
        std::vector<double> raw;
        raw.reserve(level.size());
        for (const auto& s : level) raw.push_back(s.value);
        const auto norm = minmax_normalize(raw);
        std::vector<char> seen(first.size(), 0);
        for (std::size_t i = 0; i < level.size(); ++i) {
            const auto it = index.find({level[i].probe, level[i].gallery});
            if (it == index.end() || seen[it->second]) throw std::invalid_argument("fuse_scores: pair-set mismatch");
            seen[it->second] = 1;
            sum[it->second] += norm[i];
        }
    }
    std::vector<MatchScore> fused = first;
    for (std::size_t i = 0; i < fused.size(); ++i) {
        fused[i].value = sum[i] / static_cast<double>(per_level.size());
        fused[i].level = MatchLevel::Fused;
    }
    return fused;
}

// -------------------------------------------------------------------- protocol

std::vector<ImagePair> make_pairs(const Manifest& manifest) {
    std::vector<std::string> sessions, subjects;
    for (const auto& r : manifest.records) {
        if (r.session_id.empty() || r.subject_id.empty()) {
            throw std::invalid_argument("make_pairs: record " + r.image.string() + " lacks subject/session labels");
        }
        if (std::find(sessions.begin(), sessions.end(), r.session_id) == sessions.end()) sessions.push_back(r.session_id);
        if (std::find(subjects.begin(), subjects.end(), r.subject_id) == subjects.end()) subjects.push_back(r.subject_id);
    }
    std::sort(sessions.begin(), sessions.end());
    if (sessions.size() < 2) throw std::invalid_argument("make_pairs: protocol needs two sessions");

    // Per subject, the record indices of each session ordered by impression.
    auto collect = [&](const std::string& subject, const std::string& session) {
        std::vector<int> idx;
        for (int i = 0; i < static_cast<int>(manifest.records.size()); ++i) {
            const auto& r = manifest.records[i];
            if (r.subject_id == subject && r.session_id == session) idx.push_back(i);
        }
        std::stable_sort(idx.begin(), idx.end(), [&](int x, int y) {
            return manifest.records[x].impression < manifest.records[y].impression;
        });
        return idx;
    };
    std::vector<std::vector<int>> s1, s2;
    for (const auto& subj : subjects) {
        s1.push_back(collect(subj, sessions[0]));
        s2.push_back(collect(subj, sessions[1]));
    }
    std::vector<ImagePair> pairs;
    for (std::size_t s = 0; s < subjects.size(); ++s) {
        for (int p : s1[s]) {
            for (int g : s2[s]) pairs.push_back({p, g, true});
        }
    }
    for (std::size_t s = 0; s < subjects.size(); ++s) {
        if (s2[s].empty()) continue;
        for (std::size_t t = 0; t < subjects.size(); ++t) {
            if (t == s || s1[t].empty()) continue;
            pairs.push_back({s2[s].front(), s1[t].front(), false});
        }
    }
    return pairs;
}

// ------------------------------------------------------------------------ ROC

RocCurve roc_and_eer(const std::vector<double>& genuine, const std::vector<double>& imposter) {
    if (genuine.empty() || imposter.empty()) throw std::invalid_argument("roc_and_eer: both classes required");
    std::vector<double> g = genuine, im = imposter;
    std::sort(g.begin(), g.end());
    std::sort(im.begin(), im.end());
    std::vector<double> thr(g);
    thr.insert(thr.end(), im.begin(), im.end());
    std::sort(thr.begin(), thr.end());
    thr.erase(std::unique(thr.begin(), thr.end()), thr.end());
    thr.push_back(std::numeric_limits<double>::infinity());

    const double ng = static_cast<double>(g.size()), ni = static_cast<double>(im.size());
    RocCurve roc;
    std::vector<double> frr;
    for (double t : thr) {
        const auto gen_below = std::lower_bound(g.begin(), g.end(), t) - g.begin();
        const auto imp_at_or_above = im.end() - std::lower_bound(im.begin(), im.end(), t);
        const double far = static_cast<double>(imp_at_or_above) / ni;
        const double fr = static_cast<double>(gen_below) / ng;
        roc.points.push_back({t, far, 1.0 - fr});
        frr.push_back(fr);
    }
    // FAR - FRR starts at >= 0 (lowest threshold: FRR = 0) and ends at <= 0 (+inf: FAR = 0).
    roc.eer = roc.points.back().far;
    for (std::size_t k = 0; k < roc.points.size(); ++k) {
        const double d = roc.points[k].far - frr[k];
        if (d == 0.0) {
            roc.eer = roc.points[k].far;
            break;
        }
        if (d < 0.0) {
            const double dp = roc.points[k - 1].far - frr[k - 1];
            const double alpha = dp / (dp - d);
            roc.eer = roc.points[k - 1].far + alpha * (roc.points[k].far - roc.points[k - 1].far);
            break;
        }
    }
    // Points run from (1,1) down to (0,0); integrate in the reverse direction.
    double auc = 0.0;
    for (std::size_t k = 1; k < roc.points.size(); ++k) {
        const auto& p = roc.points[k - 1];
        const auto& q = roc.points[k];
        auc += (p.far - q.far) * (p.tar + q.tar) / 2.0;
    }
    roc.auc = auc;
    return roc;
}

RocCurve roc_and_eer(const std::vector<MatchScore>& scores) {
    std::vector<double> g, im;
    for (const auto& s : scores) (s.genuine ? g : im).push_back(s.value);
    return roc_and_eer(g, im);
}

}  // namespace fpsr
