#pragma once

// Weighted MMSE block-coordinate ascent for the MISO interference channel,
// used as the normalization oracle for every reported rate.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "metagate/core/errors.hpp"
#include "metagate/sumrate/rate.hpp"

namespace metagate::sumrate {

struct WmmseResult {
    Beamformer V;
    RateReport report;
    std::vector<double> trace;  // weighted sum rate: initial point, then after each iteration
    std::size_t regularized_solves = 0;
};

/// v_k = sqrt(P) g / ||g||, g ~ CN(0, I).
inline Beamformer random_full_power(std::size_t K, std::size_t Nt, double p_max, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Beamformer b(K, Nt);
    for (std::size_t k = 0; k < K; ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i < Nt; ++i) {
            const double re = n(rng), im = n(rng);
            b.at(k, i) = {re, im};
            s += std::norm(b.at(k, i));
        }
        s = std::sqrt(s);
        for (std::size_t i = 0; i < Nt; ++i) b.at(k, i) *= std::sqrt(p_max) / s;
    }
    return b;
}

namespace detail {

using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;

/// Solves (A + mu I) v = b with the smallest mu >= 0 such that ||v||^2 <= P.
/// A is Hermitian PSD. Returns true when the solve had to be regularized.
inline bool power_constrained_solve(const CMat& A, const CVec& b, double p_max, CVec& v) {
    Eigen::SelfAdjointEigenSolver<CMat> es(A);
    const Eigen::VectorXd d = es.eigenvalues().cwiseMax(0.0);
    const CVec c = es.eigenvectors().adjoint() * b;
    const Eigen::VectorXd c2 = c.cwiseAbs2();
    auto power_at = [&](double mu) {
        double s = 0.0;
        for (Eigen::Index i = 0; i < d.size(); ++i) s += c2[i] / ((d[i] + mu) * (d[i] + mu));
        return s;
    };
    auto solve_at = [&](double mu) {
        CVec y(c.size());
        for (Eigen::Index i = 0; i < c.size(); ++i) y[i] = c[i] / (d[i] + mu);
        v = es.eigenvectors() * y;
    };

    constexpr double kReg = 1e-12;
    const double scale = std::max(1.0, d.maxCoeff());
    const bool singular = d.minCoeff() <= kReg * scale;
    double lo = singular ? kReg : 0.0;
    if (power_at(lo) <= p_max) {
        solve_at(lo);
        return singular;
    }
    double hi = std::sqrt(c2.sum() / p_max) + lo;
    while (power_at(hi) > p_max) hi *= 2.0;
    for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (power_at(mid) > p_max ? lo : hi) = mid;
    }
    solve_at(hi);
    return false;
}

}  // namespace detail

/// WMMSE from a given feasible starting point.
inline WmmseResult wmmse_solve(const ChannelRealization& ch, double p_max, std::size_t iters, Beamformer init) {
    require(iters >= 1, "wmmse_solve: iters must be >= 1");
    require(p_max > 0.0, "wmmse_solve: P_max must be positive");
    ch.validate();
    const std::size_t K = ch.K, Nt = ch.Nt;
    using detail::CMat;
    using detail::CVec;

    auto hvec = [&](std::size_t j, std::size_t k) {
        CVec h(Nt);
        auto s = ch.h(j, k);
        for (std::size_t i = 0; i < Nt; ++i) h[i] = s[i];
        return h;
    };

    WmmseResult res;
    require(init.K == K && init.Nt == Nt && init.feasible(p_max), "wmmse_solve: infeasible starting point");
    res.V = std::move(init);
    res.trace.push_back(evaluate_rate(ch, res.V).weighted_sum_rate);

    std::vector<cd> u(K);
    std::vector<double> lambda(K);
    for (std::size_t it = 0; it < iters; ++it) {
        for (std::size_t k = 0; k < K; ++k) {
            double total = ch.noise_power;
            for (std::size_t j = 0; j < K; ++j) total += std::norm(inner(ch.h(j, k), row(res.V, j)));
            const cd s = inner(ch.h(k, k), row(res.V, k));
            u[k] = s / total;
            const double e = std::max(1.0 - (std::conj(u[k]) * s).real(), 1e-300);
            lambda[k] = 1.0 / e;
        }
        for (std::size_t k = 0; k < K; ++k) {
            CMat A = CMat::Zero(Nt, Nt);
            for (std::size_t j = 0; j < K; ++j) {
                const CVec h = hvec(k, j);  // transmitter k -> receiver j
                A += ch.weights[j] * lambda[j] * std::norm(u[j]) * (h * h.adjoint());
            }
            A = 0.5 * (A + A.adjoint()).eval();
            const CVec b = ch.weights[k] * lambda[k] * u[k] * hvec(k, k);
            CVec v;
            if (detail::power_constrained_solve(A, b, p_max, v)) ++res.regularized_solves;
            for (std::size_t i = 0; i < Nt; ++i) res.V.at(k, i) = v[static_cast<Eigen::Index>(i)];
        }
        res.trace.push_back(evaluate_rate(ch, res.V).weighted_sum_rate);
    }
    res.report = evaluate_rate(ch, res.V);
    return res;
}

/// WMMSE from a seeded random full-power start.
inline WmmseResult wmmse_solve(const ChannelRealization& ch, double p_max, std::size_t iters,
                               std::uint64_t seed) {
    require(p_max > 0.0, "wmmse_solve: P_max must be positive");
    return wmmse_solve(ch, p_max, iters, random_full_power(ch.K, ch.Nt, p_max, seed));
}

}  // namespace metagate::sumrate
