#pragma once

// Independent reference implementations shared by the unit tests and the acceptance gate.
// Each one is deliberately naive: exhaustive enumeration instead of sorting or indexing.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <set>
#include <vector>

#include "fpsr/matcher.hpp"
#include "fpsr/nn/autograd.hpp"
#include "fpsr/poreeval.hpp"

namespace oracle {

using fpsr::nn::Tensor;
using fpsr::nn::Var;

inline Tensor random_tensor(fpsr::nn::Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(s);
    for (auto& v : t.storage()) v = u(rng);
    return t;
}

struct GradCheck {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

/// Central differences against the tape gradient for every element of every input.
/// Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps elements whose true
/// gradient is ~0 from dominating.
inline GradCheck check_gradients(const std::function<Var(const std::vector<Var>&)>& f, std::vector<Var> inputs,
                                 double h = 1e-6, double floor = 1e-6) {
    for (auto& v : inputs) {
        v.set_requires_grad(true);
        v.zero_grad();
    }
    Var out = f(inputs);
    fpsr::nn::backward(out);
    GradCheck r;
    for (auto& v : inputs) {
        const Tensor analytic = v.has_grad() ? v.grad() : Tensor(v.shape());
        for (std::size_t i = 0; i < v.value().size(); ++i) {
            const double x0 = v.value()[i];
            v.mutable_value()[i] = x0 + h;
            const double fp = f(inputs).value().item();
            v.mutable_value()[i] = x0 - h;
            const double fm = f(inputs).value().item();
            v.mutable_value()[i] = x0;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[i];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
            r.max_rel_error = std::max(r.max_rel_error, rel);
            ++r.checked;
        }
    }
    return r;
}

/// All pixels, thresholded, 8-neighbour peak test, then repeated selection of the best
/// surviving candidate (highest score, then lowest row-major index).
inline fpsr::DetectionResult nms(const fpsr::Raster& map, double threshold, double radius) {
    struct C {
        double s;
        int r, c;
        bool alive;
    };
    std::vector<C> all;
    for (int r = 0; r < map.height; ++r) {
        for (int c = 0; c < map.width; ++c) {
            const double v = map.at(r, c);
            if (v < threshold || v <= 0.0) continue;
            bool peak = true;
            for (int rr = r - 1; rr <= r + 1; ++rr)
                for (int cc = c - 1; cc <= c + 1; ++cc)
                    if (rr >= 0 && cc >= 0 && rr < map.height && cc < map.width && map.at(rr, cc) > v) peak = false;
            if (peak) all.push_back({v, r, c, true});
        }
    }
    fpsr::DetectionResult out;
    out.detected.image_height = map.height;
    out.detected.image_width = map.width;
    for (;;) {
        int best = -1;
        for (int i = 0; i < static_cast<int>(all.size()); ++i) {
            if (!all[i].alive) continue;
            if (best < 0 || all[i].s > all[best].s) best = i;
        }
        if (best < 0) break;
        const C k = all[best];
        out.detected.points.push_back({static_cast<double>(k.r), static_cast<double>(k.c)});
        out.scores.push_back(k.s);
        for (auto& o : all) {
            const double dr = o.r - k.r, dc = o.c - k.c;
            if (o.alive && dr * dr + dc * dc <= radius * radius) o.alive = false;
        }
    }
    return out;
}

/// Repeatedly takes the globally closest unmatched (detected, truth) pair within radius,
/// ties by detected then truth index.
inline fpsr::MatchOutcome greedy_match(const fpsr::PorePointSet& det, const fpsr::PorePointSet& truth,
                                       double radius) {
    const int nd = static_cast<int>(det.size()), nt = static_cast<int>(truth.size());
    std::vector<bool> du(nd, false), tu(nt, false);
    fpsr::MatchOutcome m;
    for (;;) {
        int bi = -1, bj = -1;
        double bd = std::numeric_limits<double>::infinity();
        for (int i = 0; i < nd; ++i) {
            for (int j = 0; j < nt; ++j) {
                if (du[i] || tu[j]) continue;
                const double dr = det.points[i].row - truth.points[j].row;
                const double dc = det.points[i].col - truth.points[j].col;
                const double d2 = dr * dr + dc * dc;
                if (d2 <= radius * radius && d2 < bd) {
                    bd = d2;
                    bi = i;
                    bj = j;
                }
            }
        }
        if (bi < 0) break;
        du[bi] = tu[bj] = true;
        m.pairs.emplace_back(bi, bj);
    }
    m.tp = static_cast<long>(m.pairs.size());
    m.fp = nd - m.tp;
    m.fn = nt - m.tp;
    return m;
}

/// Largest one-to-one matching within radius, by enumerating every assignment.
inline long max_assignment(const fpsr::PorePointSet& det, const fpsr::PorePointSet& truth, double radius) {
    const int nd = static_cast<int>(det.size()), nt = static_cast<int>(truth.size());
    std::vector<bool> used(nt, false);
    std::function<long(int)> go = [&](int i) -> long {
        if (i == nd) return 0;
        long best = go(i + 1);
        for (int j = 0; j < nt; ++j) {
            if (used[j]) continue;
            const double dr = det.points[i].row - truth.points[j].row;
            const double dc = det.points[i].col - truth.points[j].col;
            if (dr * dr + dc * dc > radius * radius) continue;
            used[j] = true;
            best = std::max(best, 1 + go(i + 1));
            used[j] = false;
        }
        return best;
    };
    return go(0);
}

/// Every distinct score plus +inf as a threshold; rates counted by direct scan.
inline fpsr::RocCurve roc(const std::vector<double>& gen, const std::vector<double>& imp) {
    std::set<double> ts(gen.begin(), gen.end());
    ts.insert(imp.begin(), imp.end());
    ts.insert(std::numeric_limits<double>::infinity());
    fpsr::RocCurve out;
    std::vector<double> frr;
    for (double t : ts) {
        long ia = 0, gb = 0;
        for (double s : imp) ia += s >= t;
        for (double s : gen) gb += s < t;
        const double far = static_cast<double>(ia) / static_cast<double>(imp.size());
        const double fr = static_cast<double>(gb) / static_cast<double>(gen.size());
        out.points.push_back({t, far, 1.0 - fr});
        frr.push_back(fr);
    }
    out.eer = out.points.back().far;
    for (std::size_t k = 0; k < out.points.size(); ++k) {
        const double d = out.points[k].far - frr[k];
        if (d == 0.0) {
            out.eer = out.points[k].far;
            break;
        }
        if (d < 0.0) {
            const double dp = out.points[k - 1].far - frr[k - 1];
            out.eer = out.points[k - 1].far + dp / (dp - d) * (out.points[k].far - out.points[k - 1].far);
            break;
        }
    }
    for (std::size_t k = 1; k < out.points.size(); ++k) {
        const auto& p = out.points[k - 1];
        const auto& q = out.points[k];
        out.auc += (p.far - q.far) * (p.tar + q.tar) / 2.0;
    }
    return out;
}

inline bool same_points(const fpsr::PorePointSet& a, const fpsr::PorePointSet& b) {
    return a.points == b.points;
}

inline bool same_roc(const fpsr::RocCurve& a, const fpsr::RocCurve& b) {
    if (a.points.size() != b.points.size() || a.eer != b.eer || a.auc != b.auc) return false;
    for (std::size_t i = 0; i < a.points.size(); ++i) {
        if (a.points[i].threshold != b.points[i].threshold || a.points[i].far != b.points[i].far ||
            a.points[i].tar != b.points[i].tar) {
            return false;
        }
    }
    return true;
}

/// Random instances shared by the unit tests and the acceptance gate.
inline fpsr::Raster random_map(std::mt19937_64& rng, int h, int w) {
    fpsr::Raster m(h, w);
    // Coarse levels make ties (plateaus and equal peaks) common.
    std::uniform_int_distribution<int> lvl(0, 10);
    for (auto& v : m.data) v = lvl(rng) / 10.0;
    return m;
}

inline fpsr::PorePointSet random_points(std::mt19937_64& rng, int n, int h, int w, bool integer) {
    fpsr::PorePointSet p;
    p.image_height = h;
    p.image_width = w;
    std::uniform_real_distribution<double> ur(0.0, h - 1.0), uc(0.0, w - 1.0);
    for (int i = 0; i < n; ++i) {
        double r = ur(rng), c = uc(rng);
        if (integer) {
            r = std::round(r);
            c = std::round(c);
        }
        p.points.push_back({r, c});
    }
    return p;
}

inline std::vector<double> random_scores(std::mt19937_64& rng, int n, double shift) {
    std::uniform_int_distribution<int> lvl(0, 20);
    std::vector<double> s;
    for (int i = 0; i < n; ++i) s.push_back(lvl(rng) / 20.0 + shift);
    return s;
}

}  // namespace oracle
