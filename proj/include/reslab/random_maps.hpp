#pragma once

#include <random>
#include <vector>

#include <Eigen/Dense>

#include "exact.hpp"

// Random transitive affine Markov maps with rational data.

namespace reslab {

struct RandomMapOptions {
    int min_intervals = 2, max_intervals = 5;
    int max_length = 6;           // interval lengths are integers 1..max_length over a common denominator
    double min_slope = 2.0, max_slope = 6.0;
    bool allow_reversing = true;
};

inline bool is_primitive(const Eigen::MatrixXi& A) {
    const int n = static_cast<int>(A.rows());
    Eigen::MatrixXi P = A.cwiseMin(1);
    Eigen::MatrixXi Q = P;
    // Wielandt bound
    const int limit = (n - 1) * (n - 1) + 1;
    for (int k = 1; k < limit; ++k) {
        if ((Q.array() > 0).all()) return true;
        Q = (Q * P).cwiseMin(1);
    }
    return (Q.array() > 0).all();
}

inline exact::RationalAffineMap random_affine_markov(std::mt19937_64& rng, const RandomMapOptions& opt = {}) {
    using exact::Rational;
    std::uniform_int_distribution<int> nd(opt.min_intervals, opt.max_intervals);
    std::uniform_int_distribution<int> ld(1, opt.max_length);
    for (;;) {
        const int n = nd(rng);
        std::vector<int> len(n);
        int total = 0;
        for (auto& l : len) total += (l = ld(rng));
        std::vector<int> cum(n + 1, 0);
        for (int i = 0; i < n; ++i) cum[i + 1] = cum[i] + len[i];

        std::vector<int> lo(n), hi(n);
        bool ok = true;
        for (int j = 0; j < n && ok; ++j) {
            std::vector<std::pair<int, int>> runs;
            for (int a = 0; a < n; ++a)
                for (int b = a; b < n; ++b) {
                    const double s = static_cast<double>(cum[b + 1] - cum[a]) / len[j];
                    if (s >= opt.min_slope && s <= opt.max_slope) runs.emplace_back(a, b);
                }
            if (runs.empty()) {
                ok = false;
                break;
            }
            std::uniform_int_distribution<std::size_t> rd(0, runs.size() - 1);
            std::tie(lo[j], hi[j]) = runs[rd(rng)];
        }
        if (!ok) continue;
        Eigen::MatrixXi A = Eigen::MatrixXi::Zero(n, n);
        for (int j = 0; j < n; ++j)
            for (int i = lo[j]; i <= hi[j]; ++i) A(j, i) = 1;
        if (!is_primitive(A)) continue;

        std::vector<Rational> p, slope, offset;
        for (int i = 0; i <= n; ++i) p.emplace_back(Rational(cum[i], total));
        std::bernoulli_distribution flip(0.5);
        for (int j = 0; j < n; ++j) {
            Rational s(cum[hi[j] + 1] - cum[lo[j]], len[j]);
            if (opt.allow_reversing && flip(rng)) {
                slope.push_back(-s);
                offset.push_back(p[hi[j] + 1] + s * p[j]);
            } else {
                slope.push_back(s);
                offset.push_back(p[lo[j]] - s * p[j]);
            }
        }
        auto m = exact::make_rational(p, slope, offset);
        if (m.A != A) continue;
        return m;
    }
}

} // namespace reslab
