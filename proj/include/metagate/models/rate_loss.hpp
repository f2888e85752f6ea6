#pragma once

// Negative weighted sum rate built from tape primitives, so it can be
// differentiated with respect to whatever produced the transmit weights.

#include <cmath>
#include <numbers>
#include <vector>

#include "metagate/channels/realization.hpp"
#include "metagate/core/autodiff.hpp"
#include "metagate/core/errors.hpp"

namespace metagate::models {

using channels::ChannelRealization;

enum class GateMode {
    gated,  // y = sigma(inner ⊙ outer)
    ones,   // outer output replaced by all-ones (inner network alone)
    zeros,  // outer output replaced by all-zeros
};

namespace detail {

/// gains: K x K matrix, gains[j][k] = |h_jk^H v_j|^2. Returns -sum_k w_k log2(1 + SINR_k).
template <class T>
ad::Var<T> neg_rate_from_gains(ad::Tape<T>& tape, ad::Var<T> gains, const ChannelRealization& ch) {
    const std::size_t K = ch.K;
    Tensor<T> eye = Tensor<T>::matrix(K, K), off = Tensor<T>::matrix(K, K, T(1));
    for (std::size_t k = 0; k < K; ++k) {
        eye.at(k, k) = T(1);
        off.at(k, k) = T(0);
    }
    auto signal = ad::sum_cols(ad::mul(gains, tape.constant(std::move(eye))));
    auto interference = ad::sum_cols(ad::mul(gains, tape.constant(std::move(off))));
    auto sinr = ad::divide(signal, ad::add_scalar(interference, ch.noise_power));
    auto ln_rate = ad::log(ad::add_scalar(sinr, 1.0));
    Tensor<T> w = Tensor<T>::matrix(1, K);
    for (std::size_t k = 0; k < K; ++k) w[k] = T(ch.weights[k]);
    auto weighted = ad::mul(ln_rate, tape.constant(std::move(w)));
    return ad::scale(ad::sum(weighted), -1.0 / std::numbers::ln2);
}

}  // namespace detail

/// V: K x 2Nt real matrix, row k = [Re v_k, Im v_k].
template <class T>
ad::Var<T> neg_sum_rate(ad::Tape<T>& tape, ad::Var<T> V, const ChannelRealization& ch) {
    const std::size_t K = ch.K, Nt = ch.Nt;
    require(V.value().rank() == 2 && V.value().rows() == K && V.value().cols() == 2 * Nt,
            "neg_sum_rate: beamformer must be K x 2Nt");
    Tensor<T> hr = Tensor<T>::matrix(K * K, Nt), hi = Tensor<T>::matrix(K * K, Nt);
    std::vector<std::size_t> src(K * K);
    for (std::size_t j = 0; j < K; ++j)
        for (std::size_t k = 0; k < K; ++k) {
            auto h = ch.h(j, k);
            src[j * K + k] = j;
            for (std::size_t i = 0; i < Nt; ++i) {
                hr.at(j * K + k, i) = T(h[i].real());
                hi.at(j * K + k, i) = T(h[i].imag());
            }
        }
    auto Hr = tape.constant(std::move(hr));
    auto Hi = tape.constant(std::move(hi));
    auto vr = ad::gather_rows(ad::slice_cols(V, 0, Nt), src);
    auto vi = ad::gather_rows(ad::slice_cols(V, Nt, 2 * Nt), src);
    // h^H v = sum(hr vr + hi vi) + i sum(hr vi - hi vr)
    auto re = ad::sum_rows(ad::add(ad::mul(Hr, vr), ad::mul(Hi, vi)));
    auto im = ad::sum_rows(ad::sub(ad::mul(Hr, vi), ad::mul(Hi, vr)));
    auto gains = ad::reshape(ad::add(ad::square(re), ad::square(im)), {K, K});
    return detail::neg_rate_from_gains(tape, gains, ch);
}

/// Single-antenna power control: p is 1 x K transmit powers.
template <class T>
ad::Var<T> neg_sum_rate_powers(ad::Tape<T>& tape, ad::Var<T> p, const ChannelRealization& ch) {
    const std::size_t K = ch.K;
    require(ch.Nt == 1, "neg_sum_rate_powers: requires Nt == 1");
    require(p.value().size() == K, "neg_sum_rate_powers: need K powers");
    // gains[j][k] = |h_jk|^2 p_j
    Tensor<T> g2 = Tensor<T>::matrix(K, K);
    for (std::size_t j = 0; j < K; ++j)
        for (std::size_t k = 0; k < K; ++k) g2.at(j, k) = T(std::norm(ch.h(j, k)[0]));
    std::vector<std::size_t> rep(K * K);
    for (std::size_t j = 0; j < K; ++j)
        for (std::size_t k = 0; k < K; ++k) rep[j * K + k] = j;
    auto pcol = ad::reshape(p, {K, 1});
    auto prep = ad::reshape(ad::gather_rows(pcol, rep), {K, K});
    auto gains = ad::mul(tape.constant(std::move(g2)), prep);
    return detail::neg_rate_from_gains(tape, gains, ch);
}

}  // namespace metagate::models
