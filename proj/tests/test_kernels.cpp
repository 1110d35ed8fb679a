// SPDX-License-Identifier: Apache-2.0
//
// The OpenMP kernels must be bit-identical to the serial reference: each
// output element is produced by one thread with the same operation order, so
// equality is exact, not approximate. Runs with several thread counts.

#include <cstring>
#include <vector>

#include <omp.h>

#include "cyb/kernels.hpp"
#include "cyb/rng.hpp"
#include "doctest.h"

using namespace cyb;

namespace {

template <typename T>
std::vector<T> random_vec(std::size_t n, SplitMix64& rng, double scale = 1.0) {
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(rng.next_normal() * scale);
    return v;
}

template <typename T>
bool bitwise_equal(const std::vector<T>& a, const std::vector<T>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

}  // namespace

TEST_CASE_TEMPLATE("dense kernels: omp equals serial bitwise", T, float, double) {
    SplitMix64 rng(2718);
    const int m = 37, n = 29, k = 23;
    const auto x = random_vec<T>(static_cast<std::size_t>(m) * k, rng);
    const auto w = random_vec<T>(static_cast<std::size_t>(n) * k, rng);
    const auto dy = random_vec<T>(static_cast<std::size_t>(m) * n, rng);

    for (int threads : {1, 3, 7}) {
        omp_set_num_threads(threads);
        CAPTURE(threads);

        std::vector<T> y_ref(static_cast<std::size_t>(m) * n), y_omp = y_ref;
        kernels::ref::linear_forward(y_ref.data(), x.data(), w.data(), m, n, k);
        kernels::linear_forward(y_omp.data(), x.data(), w.data(), m, n, k);
        CHECK(bitwise_equal(y_ref, y_omp));

        std::vector<T> dx_ref(static_cast<std::size_t>(m) * k), dx_omp = dx_ref;
        kernels::ref::linear_backward_input(dx_ref.data(), dy.data(), w.data(), m, n, k);
        kernels::linear_backward_input(dx_omp.data(), dy.data(), w.data(), m, n, k);
        CHECK(bitwise_equal(dx_ref, dx_omp));

        std::vector<T> dw_ref(static_cast<std::size_t>(n) * k, T(0.5)), dw_omp = dw_ref;
        kernels::ref::linear_backward_weight(dw_ref.data(), dy.data(), x.data(), m, n, k);
        kernels::linear_backward_weight(dw_omp.data(), dy.data(), x.data(), m, n, k);
        CHECK(bitwise_equal(dw_ref, dw_omp));
    }
}

TEST_CASE_TEMPLATE("norm, activation, softmax kernels bitwise", T, float, double) {
    SplitMix64 rng(3141);
    const int rows = 41, dim = 24;
    const auto x = random_vec<T>(static_cast<std::size_t>(rows) * dim, rng);
    const auto w = random_vec<T>(dim, rng);
    const auto dy = random_vec<T>(static_cast<std::size_t>(rows) * dim, rng);
    omp_set_num_threads(5);

    std::vector<T> y_ref(x.size()), y_omp(x.size()), rstd_ref(rows), rstd_omp(rows);
    kernels::ref::rmsnorm_forward(y_ref.data(), rstd_ref.data(), x.data(), w.data(), rows, dim,
                                  T(1e-5));
    kernels::rmsnorm_forward(y_omp.data(), rstd_omp.data(), x.data(), w.data(), rows, dim,
                             T(1e-5));
    CHECK(bitwise_equal(y_ref, y_omp));
    CHECK(bitwise_equal(rstd_ref, rstd_omp));

    std::vector<T> dx_ref(x.size()), dx_omp(x.size());
    kernels::ref::rmsnorm_backward_input(dx_ref.data(), dy.data(), x.data(), w.data(),
                                         rstd_ref.data(), rows, dim);
    kernels::rmsnorm_backward_input(dx_omp.data(), dy.data(), x.data(), w.data(),
                                    rstd_ref.data(), rows, dim);
    CHECK(bitwise_equal(dx_ref, dx_omp));

    std::vector<T> dw_ref(dim, T(1)), dw_omp(dim, T(1));
    kernels::ref::rmsnorm_backward_weight(dw_ref.data(), dy.data(), x.data(), rstd_ref.data(),
                                          rows, dim);
    kernels::rmsnorm_backward_weight(dw_omp.data(), dy.data(), x.data(), rstd_ref.data(), rows,
                                     dim);
    CHECK(bitwise_equal(dw_ref, dw_omp));

    std::vector<T> g_ref(x.size()), g_omp(x.size());
    kernels::ref::gelu_forward(g_ref.data(), x.data(), x.size());
    kernels::gelu_forward(g_omp.data(), x.data(), x.size());
    CHECK(bitwise_equal(g_ref, g_omp));
    kernels::ref::gelu_backward(g_ref.data(), dy.data(), x.data(), x.size());
    kernels::gelu_backward(g_omp.data(), dy.data(), x.data(), x.size());
    CHECK(bitwise_equal(g_ref, g_omp));

    std::vector<T> p_ref(x.size()), p_omp(x.size());
    kernels::ref::softmax_rows(p_ref.data(), x.data(), rows, dim);
    kernels::softmax_rows(p_omp.data(), x.data(), rows, dim);
    CHECK(bitwise_equal(p_ref, p_omp));
}

TEST_CASE_TEMPLATE("embedding and rope kernels bitwise", T, float, double) {
    SplitMix64 rng(1618);
    const int rows = 53, dim = 16, vocab = 19, heads = 2;
    std::vector<std::int32_t> ids(rows), positions(rows);
    for (auto& id : ids) id = static_cast<std::int32_t>(rng.next_below(vocab));
    for (int r = 0; r < rows; ++r) {
        positions[r] = static_cast<std::int32_t>(rng.next_below(17));
    }
    const auto table = random_vec<T>(static_cast<std::size_t>(vocab) * dim, rng);
    const auto dy = random_vec<T>(static_cast<std::size_t>(rows) * dim, rng);
    omp_set_num_threads(4);

    std::vector<T> y_ref(static_cast<std::size_t>(rows) * dim), y_omp = y_ref;
    kernels::ref::embedding_forward(y_ref.data(), ids.data(), table.data(), rows, dim);
    kernels::embedding_forward(y_omp.data(), ids.data(), table.data(), rows, dim);
    CHECK(bitwise_equal(y_ref, y_omp));

    std::vector<T> dt_ref(table.size(), T(0)), dt_omp(table.size(), T(0));
    kernels::ref::embedding_backward(dt_ref.data(), ids.data(), dy.data(), rows, dim);
    kernels::embedding_backward(dt_omp.data(), ids.data(), dy.data(), rows, dim);
    CHECK(bitwise_equal(dt_ref, dt_omp));

    auto q_ref = random_vec<T>(static_cast<std::size_t>(rows) * dim, rng);
    auto q_omp = q_ref;
    kernels::ref::rope_forward(q_ref.data(), positions.data(), rows, heads, dim / heads,
                               T(10000));
    kernels::rope_forward(q_omp.data(), positions.data(), rows, heads, dim / heads, T(10000));
    CHECK(bitwise_equal(q_ref, q_omp));
    kernels::ref::rope_backward(q_ref.data(), positions.data(), rows, heads, dim / heads,
                                T(10000));
    kernels::rope_backward(q_omp.data(), positions.data(), rows, heads, dim / heads, T(10000));
    CHECK(bitwise_equal(q_ref, q_omp));
}

TEST_CASE_TEMPLATE("attention kernels bitwise", T, float, double) {
    SplitMix64 rng(999);
    const int t_len = 33, heads = 3, hd = 8;
    const int dim = heads * hd;
    const auto q = random_vec<T>(static_cast<std::size_t>(t_len) * dim, rng);
    const auto k = random_vec<T>(static_cast<std::size_t>(t_len) * dim, rng);
    const auto v = random_vec<T>(static_cast<std::size_t>(t_len) * dim, rng);
    const auto dout = random_vec<T>(static_cast<std::size_t>(t_len) * dim, rng);
    omp_set_num_threads(6);

    std::vector<T> out_ref(q.size()), out_omp(q.size());
    std::vector<T> att_ref(static_cast<std::size_t>(heads) * t_len * t_len);
    std::vector<T> att_omp(att_ref.size());
    kernels::ref::attention_forward(out_ref.data(), att_ref.data(), q.data(), k.data(),
                                    v.data(), t_len, heads, hd);
    kernels::attention_forward(out_omp.data(), att_omp.data(), q.data(), k.data(), v.data(),
                               t_len, heads, hd);
    CHECK(bitwise_equal(out_ref, out_omp));
    CHECK(bitwise_equal(att_ref, att_omp));

    std::vector<T> dq_ref(q.size()), dk_ref(q.size()), dv_ref(q.size()), ds_ref(att_ref.size());
    std::vector<T> dq_omp(q.size()), dk_omp(q.size()), dv_omp(q.size()), ds_omp(att_ref.size());
    kernels::ref::attention_backward(dq_ref.data(), dk_ref.data(), dv_ref.data(), ds_ref.data(),
                                     dout.data(), att_ref.data(), q.data(), k.data(), v.data(),
                                     t_len, heads, hd);
    kernels::attention_backward(dq_omp.data(), dk_omp.data(), dv_omp.data(), ds_omp.data(),
                                dout.data(), att_ref.data(), q.data(), k.data(), v.data(),
                                t_len, heads, hd);
    CHECK(bitwise_equal(dq_ref, dq_omp));
    CHECK(bitwise_equal(dk_ref, dk_omp));
    CHECK(bitwise_equal(dv_ref, dv_omp));

    // Causality of the attention weights themselves.
    for (int h = 0; h < heads; ++h) {
        for (int t = 0; t < t_len; ++t) {
            for (int u = t + 1; u < t_len; ++u) {
                CHECK(att_ref[(static_cast<std::size_t>(h) * t_len + t) * t_len + u] == T(0));
            }
        }
    }
}

TEST_CASE("adam update bitwise and behavior") {
    SplitMix64 rng(424242);
    const std::size_t n = 1001;
    auto p_ref = random_vec<float>(n, rng);
    auto p_omp = p_ref;
    const auto g = random_vec<float>(n, rng);
    std::vector<float> m_ref(n, 0), v_ref(n, 0), m_omp(n, 0), v_omp(n, 0);
    omp_set_num_threads(3);
    for (long step = 1; step <= 5; ++step) {
        kernels::ref::adam_update(p_ref.data(), g.data(), m_ref.data(), v_ref.data(), n, 1e-3f,
                                  0.9f, 0.999f, 1e-8f, 0.0f, step);
        kernels::adam_update(p_omp.data(), g.data(), m_omp.data(), v_omp.data(), n, 1e-3f, 0.9f,
                             0.999f, 1e-8f, 0.0f, step);
    }
    CHECK(std::memcmp(p_ref.data(), p_omp.data(), n * sizeof(float)) == 0);
    CHECK(std::memcmp(m_ref.data(), m_omp.data(), n * sizeof(float)) == 0);
    CHECK(std::memcmp(v_ref.data(), v_omp.data(), n * sizeof(float)) == 0);

    // First step moves each parameter by exactly lr against the gradient sign
    // (bias correction makes mhat/sqrt(vhat) = sign(g) when eps is small).
    std::vector<float> p(4, 1.0f), m(4, 0), v(4, 0);
    const std::vector<float> grad{0.5f, -0.25f, 2.0f, -1.0f};
    kernels::ref::adam_update(p.data(), grad.data(), m.data(), v.data(), 4, 0.1f, 0.9f, 0.999f,
                              1e-12f, 0.0f, 1);
    for (int i = 0; i < 4; ++i) {
        const float expected = 1.0f - 0.1f * (grad[i] > 0 ? 1.0f : -1.0f);
        CHECK(p[i] == doctest::Approx(expected).epsilon(1e-5));
    }
}
