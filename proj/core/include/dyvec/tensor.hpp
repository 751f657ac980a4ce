#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace dyvec {

using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::Matrix<float, Eigen::Dynamic, 1>;
using RowVector = Eigen::Matrix<float, 1, Eigen::Dynamic>;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

// 64-byte aligned storage keeps Eigen's kernel choice, and so the float
// summation order, independent of where the buffer lands on the heap.
using AlignedFloats = std::vector<float, Eigen::aligned_allocator<float>>;

using Token = std::int32_t;
using TokenSequence = std::vector<Token>;

}  // namespace dyvec
