#pragma once

#include <cstddef>

namespace gawwn::detail {

// C[m,n] += op(A) * op(B) for contiguous row-major buffers, where op(A) is
// m x k and op(B) is k x n. With trans_a, A is stored k x m; with trans_b,
// B is stored n x k.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c);

}  // namespace gawwn::detail
