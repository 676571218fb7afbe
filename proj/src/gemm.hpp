#pragma once

#include <Eigen/Core>

#include <cstddef>

namespace snsteg::detail {

// Row-major C = alpha * op(A) * op(B) + beta * C, with leading dimensions as in BLAS.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc) {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Stride = Eigen::OuterStride<>;
    using CMap = Eigen::Map<const Mat, 0, Stride>;
    const auto im = static_cast<Eigen::Index>(m);
    const auto in = static_cast<Eigen::Index>(n);
    const auto ik = static_cast<Eigen::Index>(k);
    CMap A(a, trans_a ? ik : im, trans_a ? im : ik, Stride(static_cast<Eigen::Index>(lda)));
    CMap B(b, trans_b ? in : ik, trans_b ? ik : in, Stride(static_cast<Eigen::Index>(ldb)));
    Eigen::Map<Mat, 0, Stride> C(c, im, in, Stride(static_cast<Eigen::Index>(ldc)));
    if (beta == T(0))
        C.setZero();
    else if (beta != T(1))
        C *= beta;
    if (trans_a && trans_b)
        C.noalias() += alpha * A.transpose() * B.transpose();
    else if (trans_a)
        C.noalias() += alpha * A.transpose() * B;
    else if (trans_b)
        C.noalias() += alpha * A * B.transpose();
    else
        C.noalias() += alpha * A * B;
}

}  // namespace snsteg::detail
