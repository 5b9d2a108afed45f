#pragma once

#include <cstdint>

#include "smoe/threadpool.hpp"

namespace smoe::kern {

// Dense kernels behind the tape ops. All writes are partitioned by output
// row, so multithreaded results are bit-identical to single-threaded ones.

// C[m,n] = (accumulate ? C : 0) + A[m,k] * B[k,n]
template <typename T>
void matmul(const T* A, const T* B, T* C, int m, int k, int n, bool accumulate) {
    auto body = [=](std::int64_t i0, std::int64_t i1) {
        for (std::int64_t i = i0; i < i1; ++i) {
            T* __restrict c = C + i * n;
            if (!accumulate)
                for (int j = 0; j < n; ++j) c[j] = T{0};
            const T* __restrict a = A + i * k;
            for (int p = 0; p < k; ++p) {
                const T ap = a[p];
                if (ap == T{0}) continue;
                const T* __restrict b = B + static_cast<std::int64_t>(p) * n;
                for (int j = 0; j < n; ++j) c[j] += ap * b[j];
            }
        }
    };
    if (static_cast<std::int64_t>(m) * k * n >= 1 << 16)
        ThreadPool::instance().parallel_for(m, body);
    else
        body(0, m);
}

// C[m,n] = (accumulate ? C : 0) + A[m,k] * B[n,k]^T
template <typename T>
void matmul_nt(const T* A, const T* B, T* C, int m, int k, int n, bool accumulate) {
    auto body = [=](std::int64_t i0, std::int64_t i1) {
        for (std::int64_t i = i0; i < i1; ++i) {
            const T* __restrict a = A + i * k;
            T* __restrict c = C + i * n;
            for (int j = 0; j < n; ++j) {
                const T* __restrict b = B + static_cast<std::int64_t>(j) * k;
                T s0{0}, s1{0}, s2{0}, s3{0};
                int p = 0;
                for (; p + 4 <= k; p += 4) {
                    s0 += a[p] * b[p];
                    s1 += a[p + 1] * b[p + 1];
                    s2 += a[p + 2] * b[p + 2];
                    s3 += a[p + 3] * b[p + 3];
                }
                T s = (s0 + s1) + (s2 + s3);
                for (; p < k; ++p) s += a[p] * b[p];
                c[j] = accumulate ? c[j] + s : s;
            }
        }
    };
    if (static_cast<std::int64_t>(m) * k * n >= 1 << 16)
        ThreadPool::instance().parallel_for(m, body);
    else
        body(0, m);
}

// C[m,n] = (accumulate ? C : 0) + A[k,m]^T * B[k,n]
template <typename T>
void matmul_tn(const T* A, const T* B, T* C, int m, int k, int n, bool accumulate) {
    auto body = [=](std::int64_t r0, std::int64_t r1) {
        for (std::int64_t r = r0; r < r1; ++r) {
            T* __restrict c = C + r * n;
            if (!accumulate)
                for (int j = 0; j < n; ++j) c[j] = T{0};
            for (int p = 0; p < k; ++p) {
                const T ap = A[static_cast<std::int64_t>(p) * m + r];
                if (ap == T{0}) continue;
                const T* __restrict b = B + static_cast<std::int64_t>(p) * n;
                for (int j = 0; j < n; ++j) c[j] += ap * b[j];
            }
        }
    };
    if (static_cast<std::int64_t>(m) * k * n >= 1 << 16)
        ThreadPool::instance().parallel_for(m, body);
    else
        body(0, m);
}

}  // namespace smoe::kern
