#include "gemm.hpp"

#include <Eigen/Core>

namespace gawwn::detail {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c) {
  if (m == 0 || n == 0 || k == 0) return;
  const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n),
             K = static_cast<Eigen::Index>(k);
  MutMap C(c, M, N);
  if (!trans_a && !trans_b)
    C.noalias() += ConstMap(a, M, K) * ConstMap(b, K, N);
  else if (!trans_a && trans_b)
    C.noalias() += ConstMap(a, M, K) * ConstMap(b, N, K).transpose();
  else if (trans_a && !trans_b)
    C.noalias() += ConstMap(a, K, M).transpose() * ConstMap(b, K, N);
  else
    C.noalias() += ConstMap(a, K, M).transpose() * ConstMap(b, N, K).transpose();
}

}  // namespace gawwn::detail
