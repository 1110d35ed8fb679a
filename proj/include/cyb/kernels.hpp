// SPDX-License-Identifier: Apache-2.0
//
// Dense kernels behind the transformer. Every kernel exists twice:
//
//   kernels::ref::*   plain serial loops, the reference implementation
//   kernels::*        OpenMP-parallel over independent output elements
//
// Both variants perform the same floating-point operations in the same order
// per output element, so their results are bit-identical; the tests assert
// exact equality and the bench target compares their throughput. Reductions
// never cross threads, which also makes the parallel path deterministic for
// any thread count.
//
// All matrices are row-major. Weights are [out_features, in_features].

#pragma once

#include <cmath>
#include <cstdint>

namespace cyb::kernels {

namespace ref {

// Y[m,n] = sum_k X[m,k] W[n,k]
template <typename T>
void linear_forward(T* y, const T* x, const T* w, int m, int n, int k) {
    for (int i = 0; i < m; ++i) {
        for (int o = 0; o < n; ++o) {
            T acc = 0;
            const T* xi = x + static_cast<std::size_t>(i) * k;
            const T* wo = w + static_cast<std::size_t>(o) * k;
            for (int j = 0; j < k; ++j) acc += xi[j] * wo[j];
            y[static_cast<std::size_t>(i) * n + o] = acc;
        }
    }
}

// dX[m,k] = sum_n dY[m,n] W[n,k]; accumulated row-wise so both operands
// stream contiguously.
template <typename T>
void linear_backward_input(T* dx, const T* dy, const T* w, int m, int n, int k) {
    for (int i = 0; i < m; ++i) {
        T* dxi = dx + static_cast<std::size_t>(i) * k;
        for (int j = 0; j < k; ++j) dxi[j] = 0;
        const T* dyi = dy + static_cast<std::size_t>(i) * n;
        for (int o = 0; o < n; ++o) {
            const T c = dyi[o];
            const T* wo = w + static_cast<std::size_t>(o) * k;
            for (int j = 0; j < k; ++j) dxi[j] += c * wo[j];
        }
    }
}

// dW[n,k] += sum_m dY[m,n] X[m,k]
template <typename T>
void linear_backward_weight(T* dw, const T* dy, const T* x, int m, int n, int k) {
    for (int o = 0; o < n; ++o) {
        T* dwo = dw + static_cast<std::size_t>(o) * k;
        for (int i = 0; i < m; ++i) {
            const T c = dy[static_cast<std::size_t>(i) * n + o];
            const T* xi = x + static_cast<std::size_t>(i) * k;
            for (int j = 0; j < k; ++j) dwo[j] += c * xi[j];
        }
    }
}

template <typename T>
void embedding_forward(T* y, const std::int32_t* ids, const T* table, int rows, int dim) {
    for (int r = 0; r < rows; ++r) {
        const T* src = table + static_cast<std::size_t>(ids[r]) * dim;
        T* dst = y + static_cast<std::size_t>(r) * dim;
        for (int j = 0; j < dim; ++j) dst[j] = src[j];
    }
}

// dTable[id[r], j] += dY[r, j]; safe to parallelize over j only.
template <typename T>
void embedding_backward(T* dtable, const std::int32_t* ids, const T* dy, int rows, int dim) {
    for (int j = 0; j < dim; ++j) {
        for (int r = 0; r < rows; ++r) {
            dtable[static_cast<std::size_t>(ids[r]) * dim + j] +=
                dy[static_cast<std::size_t>(r) * dim + j];
        }
    }
}

template <typename T>
void rmsnorm_forward(T* y, T* rstd, const T* x, const T* w, int rows, int dim, T eps) {
    for (int r = 0; r < rows; ++r) {
        const T* xr = x + static_cast<std::size_t>(r) * dim;
        T ss = 0;
        for (int j = 0; j < dim; ++j) ss += xr[j] * xr[j];
        const T inv = T(1) / std::sqrt(ss / dim + eps);
        rstd[r] = inv;
        T* yr = y + static_cast<std::size_t>(r) * dim;
        for (int j = 0; j < dim; ++j) yr[j] = xr[j] * inv * w[j];
    }
}

template <typename T>
void rmsnorm_backward_input(T* dx, const T* dy, const T* x, const T* w, const T* rstd,
                            int rows, int dim) {
    for (int r = 0; r < rows; ++r) {
        const T* xr = x + static_cast<std::size_t>(r) * dim;
        const T* dyr = dy + static_cast<std::size_t>(r) * dim;
        const T inv = rstd[r];
        T dot = 0;
        for (int j = 0; j < dim; ++j) dot += dyr[j] * w[j] * xr[j];
        const T scale = dot * inv * inv * inv / dim;
        T* dxr = dx + static_cast<std::size_t>(r) * dim;
        for (int j = 0; j < dim; ++j) dxr[j] = dyr[j] * w[j] * inv - xr[j] * scale;
    }
}

// dw[j] += sum_r dY[r,j] X[r,j] rstd[r]
template <typename T>
void rmsnorm_backward_weight(T* dw, const T* dy, const T* x, const T* rstd, int rows, int dim) {
    for (int j = 0; j < dim; ++j) {
        T acc = 0;
        for (int r = 0; r < rows; ++r) {
            acc += dy[static_cast<std::size_t>(r) * dim + j] *
                   x[static_cast<std::size_t>(r) * dim + j] * rstd[r];
        }
        dw[j] += acc;
    }
}

// Rotates query/key pairs by position-dependent phases. positions may repeat
// (pause slots reuse the preceding real token's index).
template <typename T>
void rope_forward(T* qk, const std::int32_t* positions, int rows, int n_heads, int head_dim,
                  T base) {
    const int dim = n_heads * head_dim;
    for (int r = 0; r < rows; ++r) {
        T* row = qk + static_cast<std::size_t>(r) * dim;
        const T pos = static_cast<T>(positions[r]);
        for (int h = 0; h < n_heads; ++h) {
            T* head = row + h * head_dim;
            for (int j = 0; j + 1 < head_dim; j += 2) {
                const T freq = std::pow(base, -static_cast<T>(j) / head_dim);
                const T theta = pos * freq;
                const T c = std::cos(theta);
                const T s = std::sin(theta);
                const T x0 = head[j];
                const T x1 = head[j + 1];
                head[j] = x0 * c - x1 * s;
                head[j + 1] = x0 * s + x1 * c;
            }
        }
    }
}

// Gradient of rope_forward: rotation by the opposite phase.
template <typename T>
void rope_backward(T* dqk, const std::int32_t* positions, int rows, int n_heads, int head_dim,
                   T base) {
    const int dim = n_heads * head_dim;
    for (int r = 0; r < rows; ++r) {
        T* row = dqk + static_cast<std::size_t>(r) * dim;
        const T pos = static_cast<T>(positions[r]);
        for (int h = 0; h < n_heads; ++h) {
            T* head = row + h * head_dim;
            for (int j = 0; j + 1 < head_dim; j += 2) {
                const T freq = std::pow(base, -static_cast<T>(j) / head_dim);
                const T theta = pos * freq;
                const T c = std::cos(theta);
                const T s = std::sin(theta);
                const T g0 = head[j];
                const T g1 = head[j + 1];
                head[j] = g0 * c + g1 * s;
                head[j + 1] = -g0 * s + g1 * c;
            }
        }
    }
}

// Causal softmax attention over one sequence. q,k,v are [T, H*dh]; att is
// [H, T, T] and is kept for the backward pass; out is [T, H*dh].
template <typename T>
void attention_forward(T* out, T* att, const T* q, const T* k, const T* v, int t_len,
                       int n_heads, int head_dim) {
    const int dim = n_heads * head_dim;
    const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
    for (int h = 0; h < n_heads; ++h) {
        for (int t = 0; t < t_len; ++t) {
            T* att_row = att + (static_cast<std::size_t>(h) * t_len + t) * t_len;
            const T* qt = q + static_cast<std::size_t>(t) * dim + h * head_dim;
            T maxs = -1e30;
            for (int u = 0; u <= t; ++u) {
                const T* ku = k + static_cast<std::size_t>(u) * dim + h * head_dim;
                T s = 0;
                for (int j = 0; j < head_dim; ++j) s += qt[j] * ku[j];
                s *= scale;
                att_row[u] = s;
                if (s > maxs) maxs = s;
            }
            T denom = 0;
            for (int u = 0; u <= t; ++u) {
                const T e = std::exp(att_row[u] - maxs);
                att_row[u] = e;
                denom += e;
            }
            const T inv = T(1) / denom;
            for (int u = 0; u <= t; ++u) att_row[u] *= inv;
            for (int u = t + 1; u < t_len; ++u) att_row[u] = 0;
            T* ot = out + static_cast<std::size_t>(t) * dim + h * head_dim;
            for (int j = 0; j < head_dim; ++j) {
                T acc = 0;
                for (int u = 0; u <= t; ++u) {
                    acc += att_row[u] * v[static_cast<std::size_t>(u) * dim + h * head_dim + j];
                }
                ot[j] = acc;
            }
        }
    }
}

// Backward of attention_forward. dscore is an [H, T, T] scratch buffer.
template <typename T>
void attention_backward(T* dq, T* dk, T* dv, T* dscore, const T* dout, const T* att,
                        const T* q, const T* k, const T* v, int t_len, int n_heads,
                        int head_dim) {
    const int dim = n_heads * head_dim;
    const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
    // Pass 1: per query row, softmax backward to scores plus dq.
    for (int h = 0; h < n_heads; ++h) {
        for (int t = 0; t < t_len; ++t) {
            const T* att_row = att + (static_cast<std::size_t>(h) * t_len + t) * t_len;
            T* ds_row = dscore + (static_cast<std::size_t>(h) * t_len + t) * t_len;
            const T* dot = dout + static_cast<std::size_t>(t) * dim + h * head_dim;
            T dot_sum = 0;
            for (int u = 0; u <= t; ++u) {
                T datt = 0;
                const T* vu = v + static_cast<std::size_t>(u) * dim + h * head_dim;
                for (int j = 0; j < head_dim; ++j) datt += dot[j] * vu[j];
                ds_row[u] = datt;
                dot_sum += datt * att_row[u];
            }
            for (int u = 0; u <= t; ++u) {
                ds_row[u] = att_row[u] * (ds_row[u] - dot_sum) * scale;
            }
            for (int u = t + 1; u < t_len; ++u) ds_row[u] = 0;
            T* dqt = dq + static_cast<std::size_t>(t) * dim + h * head_dim;
            for (int j = 0; j < head_dim; ++j) {
                T acc = 0;
                for (int u = 0; u <= t; ++u) {
                    acc += ds_row[u] * k[static_cast<std::size_t>(u) * dim + h * head_dim + j];
                }
                dqt[j] = acc;
            }
        }
    }
    // Pass 2: per key/value row, gather over query rows.
    for (int h = 0; h < n_heads; ++h) {
        for (int u = 0; u < t_len; ++u) {
            T* dku = dk + static_cast<std::size_t>(u) * dim + h * head_dim;
            T* dvu = dv + static_cast<std::size_t>(u) * dim + h * head_dim;
            for (int j = 0; j < head_dim; ++j) {
                T acc_k = 0;
                T acc_v = 0;
                for (int t = u; t < t_len; ++t) {
                    const std::size_t idx = (static_cast<std::size_t>(h) * t_len + t) * t_len + u;
                    acc_k += dscore[idx] * q[static_cast<std::size_t>(t) * dim + h * head_dim + j];
                    acc_v += att[idx] * dout[static_cast<std::size_t>(t) * dim + h * head_dim + j];
                }
                dku[j] = acc_k;
                dvu[j] = acc_v;
            }
        }
    }
}

template <typename T>
void gelu_forward(T* y, const T* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = T(0.5) * x[i] * (T(1) + std::erf(x[i] * T(0.7071067811865476)));
    }
}

template <typename T>
void gelu_backward(T* dx, const T* dy, const T* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const T cdf = T(0.5) * (T(1) + std::erf(x[i] * T(0.7071067811865476)));
        const T pdf = std::exp(T(-0.5) * x[i] * x[i]) * T(0.3989422804014327);
        dx[i] = dy[i] * (cdf + x[i] * pdf);
    }
}

template <typename T>
void softmax_rows(T* p, const T* logits, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        const T* lr = logits + static_cast<std::size_t>(r) * cols;
        T* pr = p + static_cast<std::size_t>(r) * cols;
        T maxv = lr[0];
        for (int j = 1; j < cols; ++j) {
            if (lr[j] > maxv) maxv = lr[j];
        }
        T denom = 0;
        for (int j = 0; j < cols; ++j) {
            const T e = std::exp(lr[j] - maxv);
            pr[j] = e;
            denom += e;
        }
        const T inv = T(1) / denom;
        for (int j = 0; j < cols; ++j) pr[j] *= inv;
    }
}

template <typename T>
void add_inplace(T* y, const T* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += x[i];
}

// Adds the same vector to every row (the DK logit prior shift).
template <typename T>
void add_row_vector(T* y, const T* vec, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        T* yr = y + static_cast<std::size_t>(r) * cols;
        for (int j = 0; j < cols; ++j) yr[j] += vec[j];
    }
}

// Bias-corrected first/second-moment adaptive update. step is 1-based.
template <typename T>
void adam_update(T* param, const T* grad, T* m, T* v, std::size_t n, T lr, T beta1, T beta2,
                 T eps, T weight_decay, long step) {
    const T bc1 = T(1) - std::pow(beta1, static_cast<T>(step));
    const T bc2 = T(1) - std::pow(beta2, static_cast<T>(step));
    for (std::size_t i = 0; i < n; ++i) {
        const T g = grad[i] + weight_decay * param[i];
        m[i] = beta1 * m[i] + (T(1) - beta1) * g;
        v[i] = beta2 * v[i] + (T(1) - beta2) * g * g;
        const T mhat = m[i] / bc1;
        const T vhat = v[i] / bc2;
        param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

}  // namespace ref

// ---------------------------------------------------------------------------
// OpenMP variants. Same per-element arithmetic as ref::, outer loop split
// across threads.
// ---------------------------------------------------------------------------

template <typename T>
void linear_forward(T* y, const T* x, const T* w, int m, int n, int k) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        for (int o = 0; o < n; ++o) {
            T acc = 0;
            const T* xi = x + static_cast<std::size_t>(i) * k;
            const T* wo = w + static_cast<std::size_t>(o) * k;
            for (int j = 0; j < k; ++j) acc += xi[j] * wo[j];
            y[static_cast<std::size_t>(i) * n + o] = acc;
        }
    }
}

template <typename T>
void linear_backward_input(T* dx, const T* dy, const T* w, int m, int n, int k) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        T* dxi = dx + static_cast<std::size_t>(i) * k;
        for (int j = 0; j < k; ++j) dxi[j] = 0;
        const T* dyi = dy + static_cast<std::size_t>(i) * n;
        for (int o = 0; o < n; ++o) {
            const T c = dyi[o];
            const T* wo = w + static_cast<std::size_t>(o) * k;
            for (int j = 0; j < k; ++j) dxi[j] += c * wo[j];
        }
    }
}

template <typename T>
void linear_backward_weight(T* dw, const T* dy, const T* x, int m, int n, int k) {
#pragma omp parallel for schedule(static)
    for (int o = 0; o < n; ++o) {
        T* dwo = dw + static_cast<std::size_t>(o) * k;
        for (int i = 0; i < m; ++i) {
            const T c = dy[static_cast<std::size_t>(i) * n + o];
            const T* xi = x + static_cast<std::size_t>(i) * k;
            for (int j = 0; j < k; ++j) dwo[j] += c * xi[j];
        }
    }
}

template <typename T>
void embedding_forward(T* y, const std::int32_t* ids, const T* table, int rows, int dim) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        const T* src = table + static_cast<std::size_t>(ids[r]) * dim;
        T* dst = y + static_cast<std::size_t>(r) * dim;
        for (int j = 0; j < dim; ++j) dst[j] = src[j];
    }
}

template <typename T>
void embedding_backward(T* dtable, const std::int32_t* ids, const T* dy, int rows, int dim) {
#pragma omp parallel for schedule(static)
    for (int j = 0; j < dim; ++j) {
        for (int r = 0; r < rows; ++r) {
            dtable[static_cast<std::size_t>(ids[r]) * dim + j] +=
                dy[static_cast<std::size_t>(r) * dim + j];
        }
    }
}

template <typename T>
void rmsnorm_forward(T* y, T* rstd, const T* x, const T* w, int rows, int dim, T eps) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        const T* xr = x + static_cast<std::size_t>(r) * dim;
        T ss = 0;
        for (int j = 0; j < dim; ++j) ss += xr[j] * xr[j];
        const T inv = T(1) / std::sqrt(ss / dim + eps);
        rstd[r] = inv;
        T* yr = y + static_cast<std::size_t>(r) * dim;
        for (int j = 0; j < dim; ++j) yr[j] = xr[j] * inv * w[j];
    }
}

template <typename T>
void rmsnorm_backward_input(T* dx, const T* dy, const T* x, const T* w, const T* rstd,
                            int rows, int dim) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        const T* xr = x + static_cast<std::size_t>(r) * dim;
        const T* dyr = dy + static_cast<std::size_t>(r) * dim;
        const T inv = rstd[r];
        T dot = 0;
        for (int j = 0; j < dim; ++j) dot += dyr[j] * w[j] * xr[j];
        const T scale = dot * inv * inv * inv / dim;
        T* dxr = dx + static_cast<std::size_t>(r) * dim;
        for (int j = 0; j < dim; ++j) dxr[j] = dyr[j] * w[j] * inv - xr[j] * scale;
    }
}

template <typename T>
void rmsnorm_backward_weight(T* dw, const T* dy, const T* x, const T* rstd, int rows, int dim) {
#pragma omp parallel for schedule(static)
    for (int j = 0; j < dim; ++j) {
        T acc = 0;
        for (int r = 0; r < rows; ++r) {
            acc += dy[static_cast<std::size_t>(r) * dim + j] *
                   x[static_cast<std::size_t>(r) * dim + j] * rstd[r];
        }
        dw[j] += acc;
    }
}

template <typename T>
void rope_forward(T* qk, const std::int32_t* positions, int rows, int n_heads, int head_dim,
                  T base) {
    const int dim = n_heads * head_dim;
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        T* row = qk + static_cast<std::size_t>(r) * dim;
        const T pos = static_cast<T>(positions[r]);
        for (int h = 0; h < n_heads; ++h) {
            T* head = row + h * head_dim;
            for (int j = 0; j + 1 < head_dim; j += 2) {
                const T freq = std::pow(base, -static_cast<T>(j) / head_dim);
                const T theta = pos * freq;
                const T c = std::cos(theta);
                const T s = std::sin(theta);
                const T x0 = head[j];
                const T x1 = head[j + 1];
                head[j] = x0 * c - x1 * s;
                head[j + 1] = x0 * s + x1 * c;
            }
        }
    }
}

template <typename T>
void rope_backward(T* dqk, const std::int32_t* positions, int rows, int n_heads, int head_dim,
                   T base) {
    const int dim = n_heads * head_dim;
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        T* row = dqk + static_cast<std::size_t>(r) * dim;
        const T pos = static_cast<T>(positions[r]);
        for (int h = 0; h < n_heads; ++h) {
            T* head = row + h * head_dim;
            for (int j = 0; j + 1 < head_dim; j += 2) {
                const T freq = std::pow(base, -static_cast<T>(j) / head_dim);
                const T theta = pos * freq;
                const T c = std::cos(theta);
                const T s = std::sin(theta);
                const T g0 = head[j];
                const T g1 = head[j + 1];
                head[j] = g0 * c + g1 * s;
                head[j + 1] = -g0 * s + g1 * c;
            }
        }
    }
}

template <typename T>
void attention_forward(T* out, T* att, const T* q, const T* k, const T* v, int t_len,
                       int n_heads, int head_dim) {
    const int dim = n_heads * head_dim;
    const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
#pragma omp parallel for collapse(2) schedule(static)
    for (int h = 0; h < n_heads; ++h) {
        for (int t = 0; t < t_len; ++t) {
            T* att_row = att + (static_cast<std::size_t>(h) * t_len + t) * t_len;
            const T* qt = q + static_cast<std::size_t>(t) * dim + h * head_dim;
            T maxs = -1e30;
            for (int u = 0; u <= t; ++u) {
                const T* ku = k + static_cast<std::size_t>(u) * dim + h * head_dim;
                T s = 0;
                for (int j = 0; j < head_dim; ++j) s += qt[j] * ku[j];
                s *= scale;
                att_row[u] = s;
                if (s > maxs) maxs = s;
            }
            T denom = 0;
            for (int u = 0; u <= t; ++u) {
                const T e = std::exp(att_row[u] - maxs);
                att_row[u] = e;
                denom += e;
            }
            const T inv = T(1) / denom;
            for (int u = 0; u <= t; ++u) att_row[u] *= inv;
            for (int u = t + 1; u < t_len; ++u) att_row[u] = 0;
            T* ot = out + static_cast<std::size_t>(t) * dim + h * head_dim;
            for (int j = 0; j < head_dim; ++j) {
                T acc = 0;
                for (int u = 0; u <= t; ++u) {
                    acc += att_row[u] * v[static_cast<std::size_t>(u) * dim + h * head_dim + j];
                }
                ot[j] = acc;
            }
        }
    }
}

template <typename T>
void attention_backward(T* dq, T* dk, T* dv, T* dscore, const T* dout, const T* att,
                        const T* q, const T* k, const T* v, int t_len, int n_heads,
                        int head_dim) {
    const int dim = n_heads * head_dim;
    const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
#pragma omp parallel for collapse(2) schedule(static)
    for (int h = 0; h < n_heads; ++h) {
        for (int t = 0; t < t_len; ++t) {
            const T* att_row = att + (static_cast<std::size_t>(h) * t_len + t) * t_len;
            T* ds_row = dscore + (static_cast<std::size_t>(h) * t_len + t) * t_len;
            const T* dot = dout + static_cast<std::size_t>(t) * dim + h * head_dim;
            T dot_sum = 0;
            for (int u = 0; u <= t; ++u) {
                T datt = 0;
                const T* vu = v + static_cast<std::size_t>(u) * dim + h * head_dim;
                for (int j = 0; j < head_dim; ++j) datt += dot[j] * vu[j];
                ds_row[u] = datt;
                dot_sum += datt * att_row[u];
            }
            for (int u = 0; u <= t; ++u) {
                ds_row[u] = att_row[u] * (ds_row[u] - dot_sum) * scale;
            }
            for (int u = t + 1; u < t_len; ++u) ds_row[u] = 0;
            T* dqt = dq + static_cast<std::size_t>(t) * dim + h * head_dim;
            for (int j = 0; j < head_dim; ++j) {
                T acc = 0;
                for (int u = 0; u <= t; ++u) {
                    acc += ds_row[u] * k[static_cast<std::size_t>(u) * dim + h * head_dim + j];
                }
                dqt[j] = acc;
            }
        }
    }
#pragma omp parallel for collapse(2) schedule(static)
    for (int h = 0; h < n_heads; ++h) {
        for (int u = 0; u < t_len; ++u) {
            T* dku = dk + static_cast<std::size_t>(u) * dim + h * head_dim;
            T* dvu = dv + static_cast<std::size_t>(u) * dim + h * head_dim;
            for (int j = 0; j < head_dim; ++j) {
                T acc_k = 0;
                T acc_v = 0;
                for (int t = u; t < t_len; ++t) {
                    const std::size_t idx = (static_cast<std::size_t>(h) * t_len + t) * t_len + u;
                    acc_k += dscore[idx] * q[static_cast<std::size_t>(t) * dim + h * head_dim + j];
                    acc_v += att[idx] * dout[static_cast<std::size_t>(t) * dim + h * head_dim + j];
                }
                dku[j] = acc_k;
                dvu[j] = acc_v;
            }
        }
    }
}

template <typename T>
void gelu_forward(T* y, const T* x, std::size_t n) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
        y[i] = T(0.5) * x[i] * (T(1) + std::erf(x[i] * T(0.7071067811865476)));
    }
}

template <typename T>
void gelu_backward(T* dx, const T* dy, const T* x, std::size_t n) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
        const T cdf = T(0.5) * (T(1) + std::erf(x[i] * T(0.7071067811865476)));
        const T pdf = std::exp(T(-0.5) * x[i] * x[i]) * T(0.3989422804014327);
        dx[i] = dy[i] * (cdf + x[i] * pdf);
    }
}

template <typename T>
void softmax_rows(T* p, const T* logits, int rows, int cols) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        const T* lr = logits + static_cast<std::size_t>(r) * cols;
        T* pr = p + static_cast<std::size_t>(r) * cols;
        T maxv = lr[0];
        for (int j = 1; j < cols; ++j) {
            if (lr[j] > maxv) maxv = lr[j];
        }
        T denom = 0;
        for (int j = 0; j < cols; ++j) {
            const T e = std::exp(lr[j] - maxv);
            pr[j] = e;
            denom += e;
        }
        const T inv = T(1) / denom;
        for (int j = 0; j < cols; ++j) pr[j] *= inv;
    }
}

template <typename T>
void add_inplace(T* y, const T* x, std::size_t n) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) y[i] += x[i];
}

template <typename T>
void add_row_vector(T* y, const T* vec, int rows, int cols) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        T* yr = y + static_cast<std::size_t>(r) * cols;
        for (int j = 0; j < cols; ++j) yr[j] += vec[j];
    }
}

template <typename T>
void adam_update(T* param, const T* grad, T* m, T* v, std::size_t n, T lr, T beta1, T beta2,
                 T eps, T weight_decay, long step) {
    const T bc1 = T(1) - std::pow(beta1, static_cast<T>(step));
    const T bc2 = T(1) - std::pow(beta2, static_cast<T>(step));
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
        const T g = grad[i] + weight_decay * param[i];
        m[i] = beta1 * m[i] + (T(1) - beta1) * g;
        v[i] = beta2 * v[i] + (T(1) - beta2) * g * g;
        const T mhat = m[i] / bc1;
        const T vhat = v[i] / bc2;
        param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

}  // namespace cyb::kernels
