// Copyright 2026 The sparsesfm Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "sparsesfm/common.hpp"
#include "sparsesfm/parallel.hpp"

namespace sparsesfm {

enum class BlockKind {
  kCameraPose,  // quaternion (w, x, y, z) + center
  kPoint,
  kFocal,
  kGpCenter,
  kGpPoint,
  kGpScale,
};

inline int BlockWidth(BlockKind kind) {
  switch (kind) {
    case BlockKind::kCameraPose: return 7;
    case BlockKind::kPoint: return 3;
    case BlockKind::kFocal: return 1;
    case BlockKind::kGpCenter: return 3;
    case BlockKind::kGpPoint: return 3;
    case BlockKind::kGpScale: return 1;
  }
  return 0;
}

/// Blocks removed by the Schur complement; everything else is retained in
/// the reduced system.
inline bool IsEliminable(BlockKind kind) {
  return kind == BlockKind::kPoint || kind == BlockKind::kGpPoint ||
         kind == BlockKind::kGpScale;
}

using RowMajorMatX =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using BlockRef = Eigen::Map<RowMajorMatX>;
using ConstBlockRef = Eigen::Map<const RowMajorMatX>;

struct ParameterBlock {
  BlockKind kind;
  int width;
  int offset;  // into the parameter vector
};

struct ResidualBlock {
  int height;
  int offset;  // into the residual vector
};

class BlockLayout {
 public:
  int AddParameterBlock(BlockKind kind) {
    const int width = BlockWidth(kind);
    params_.push_back({kind, width, total_params_});
    total_params_ += width;
    return static_cast<int>(params_.size()) - 1;
  }

  int AddResidualBlock(int height) {
    SPARSESFM_CHECK(height == 2 || height == 3, ErrorCode::kLayoutMismatch,
                    "residual block height must be 2 or 3");
    residuals_.push_back({height, total_residuals_});
    total_residuals_ += height;
    return static_cast<int>(residuals_.size()) - 1;
  }

  int num_parameter_blocks() const { return static_cast<int>(params_.size()); }
  int num_residual_blocks() const { return static_cast<int>(residuals_.size()); }
  const ParameterBlock& parameter_block(int i) const { return params_[i]; }
  const ResidualBlock& residual_block(int i) const { return residuals_[i]; }
  int total_params() const { return total_params_; }
  int total_residuals() const { return total_residuals_; }

 private:
  std::vector<ParameterBlock> params_;
  std::vector<ResidualBlock> residuals_;
  int total_params_ = 0;
  int total_residuals_ = 0;
};

// ---------------------------------------------------------------------------
// Jacobian

struct JacobianEntry {
  int residual_block;
  int param_block;
  std::size_t value_offset;
};

/// Sorted coordinate list of dense blocks. The sparsity pattern is fixed at
/// construction; values are rewritten in place on every evaluation.
class BlockSparseJacobian {
 public:
  BlockSparseJacobian() = default;

  /// pattern: (residual_block, param_block) pairs, strictly increasing.
  BlockSparseJacobian(std::shared_ptr<const BlockLayout> layout,
                      const std::vector<std::pair<int, int>>& pattern) {
    Rebuild(std::move(layout), pattern);
  }

  /// Replaces the pattern, keeping allocated capacity.
  void Rebuild(std::shared_ptr<const BlockLayout> layout,
               const std::vector<std::pair<int, int>>& pattern) {
    layout_ = std::move(layout);
    entries_.clear();
    col_entries_.clear();
    const int num_rows = layout_->num_residual_blocks();
    const int num_cols = layout_->num_parameter_blocks();
    entries_.reserve(pattern.size());
    row_begin_.assign(num_rows + 1, 0);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < pattern.size(); ++k) {
      const auto [rb, pb] = pattern[k];
      SPARSESFM_CHECK(rb >= 0 && rb < num_rows && pb >= 0 && pb < num_cols,
                      ErrorCode::kLayoutMismatch,
                      "jacobian entry outside the layout");
      if (k > 0) {
        SPARSESFM_CHECK(pattern[k - 1] < pattern[k], ErrorCode::kLayoutMismatch,
                        "jacobian entries must be sorted and unique");
      }
      entries_.push_back({rb, pb, offset});
      offset += static_cast<std::size_t>(layout_->residual_block(rb).height) *
                layout_->parameter_block(pb).width;
      ++row_begin_[rb + 1];
    }
    for (int r = 0; r < num_rows; ++r) {
      row_begin_[r + 1] += row_begin_[r];
    }
    values_.assign(offset, 0.0);

    // Column index: entries of each parameter block in residual order.
    col_begin_.assign(num_cols + 1, 0);
    for (const auto& e : entries_) {
      ++col_begin_[e.param_block + 1];
    }
    for (int c = 0; c < num_cols; ++c) {
      col_begin_[c + 1] += col_begin_[c];
    }
    col_entries_.resize(entries_.size());
    std::vector<int> fill(col_begin_.begin(), col_begin_.end() - 1);
    for (int k = 0; k < static_cast<int>(entries_.size()); ++k) {
      col_entries_[fill[entries_[k].param_block]++] = k;
    }
  }

  /// Builds a Jacobian from explicit dense blocks; shapes must match the
  /// layout.
  static BlockSparseJacobian FromBlocks(
      std::shared_ptr<const BlockLayout> layout,
      std::vector<std::tuple<int, int, MatX>> blocks) {
    std::sort(blocks.begin(), blocks.end(), [](const auto& a, const auto& b) {
      return std::tie(std::get<0>(a), std::get<1>(a)) <
             std::tie(std::get<0>(b), std::get<1>(b));
    });
    std::vector<std::pair<int, int>> pattern;
    pattern.reserve(blocks.size());
    for (const auto& [rb, pb, m] : blocks) {
      pattern.emplace_back(rb, pb);
    }
    BlockSparseJacobian jac(layout, pattern);
    for (int k = 0; k < jac.num_entries(); ++k) {
      const MatX& m = std::get<2>(blocks[k]);
      const auto rows = jac.layout().residual_block(jac.entry(k).residual_block).height;
      const auto cols = jac.layout().parameter_block(jac.entry(k).param_block).width;
      SPARSESFM_CHECK(m.rows() == rows && m.cols() == cols,
                      ErrorCode::kLayoutMismatch,
                      "block shape " + std::to_string(m.rows()) + "x" +
                          std::to_string(m.cols()) + " does not match layout " +
                          std::to_string(rows) + "x" + std::to_string(cols));
      jac.block(k) = m;
    }
    return jac;
  }

  const BlockLayout& layout() const { return *layout_; }
  const std::shared_ptr<const BlockLayout>& shared_layout() const {
    return layout_;
  }

  int num_entries() const { return static_cast<int>(entries_.size()); }
  const JacobianEntry& entry(int k) const { return entries_[k]; }
  std::span<const JacobianEntry> entries() const { return entries_; }

  int rows_of(int k) const {
    return layout_->residual_block(entries_[k].residual_block).height;
  }
  int cols_of(int k) const {
    return layout_->parameter_block(entries_[k].param_block).width;
  }

  BlockRef block(int k) {
    return BlockRef(values_.data() + entries_[k].value_offset, rows_of(k),
                    cols_of(k));
  }
  ConstBlockRef block(int k) const {
    return ConstBlockRef(values_.data() + entries_[k].value_offset, rows_of(k),
                         cols_of(k));
  }

  /// Entry indices [begin, end) of one residual block.
  std::pair<int, int> row_range(int residual_block) const {
    return {row_begin_[residual_block], row_begin_[residual_block + 1]};
  }

  /// Entry indices of one parameter block, ordered by residual block.
  std::span<const int> column(int param_block) const {
    return std::span<const int>(col_entries_.data() + col_begin_[param_block],
                                col_begin_[param_block + 1] - col_begin_[param_block]);
  }

  /// Number of stored scalars; O(entries), independent of the dense size.
  std::size_t num_values() const { return values_.size(); }

  void SetZero() { std::fill(values_.begin(), values_.end(), 0.0); }

  std::size_t capacity_bytes() const {
    return values_.capacity() * sizeof(double) +
           entries_.capacity() * sizeof(JacobianEntry) +
           (row_begin_.capacity() + col_begin_.capacity() +
            col_entries_.capacity()) * sizeof(int);
  }

 private:
  std::shared_ptr<const BlockLayout> layout_;
  std::vector<JacobianEntry> entries_;
  std::vector<int> row_begin_;
  std::vector<int> col_begin_;
  std::vector<int> col_entries_;
  std::vector<double> values_;
};

// ---------------------------------------------------------------------------
// Normal equations

/// Block-structured J^T J (upper triangle), the gradient -J^T r and the
/// damping currently applied to the diagonal.
class BlockNormalSystem {
 public:
  /// One side of an off-diagonal coupling as seen from a given block.
  struct Neighbor {
    int block;
    int off_index;
    // True when the stored block is (this, neighbor), i.e. this < neighbor.
    bool stored_as_row;
  };

  BlockNormalSystem() = default;

  /// Allocates the pattern implied by a Jacobian: every pair of parameter
  /// blocks sharing a residual block.
  explicit BlockNormalSystem(const BlockSparseJacobian& jac) { Rebuild(jac); }

  /// Replaces the pattern with the one implied by jac, keeping allocated
  /// capacity.
  void Rebuild(const BlockSparseJacobian& jac) {
    layout_ = jac.shared_layout();
    off_row_.clear();
    off_col_.clear();
    off_offset_.clear();
    const BlockLayout& layout = *layout_;
    const int n = layout.num_parameter_blocks();
    std::vector<std::vector<int>> upper(n);
    for (int r = 0; r < layout.num_residual_blocks(); ++r) {
      const auto [begin, end] = jac.row_range(r);
      for (int a = begin; a < end; ++a) {
        for (int b = a + 1; b < end; ++b) {
          const int pa = jac.entry(a).param_block;
          const int pb = jac.entry(b).param_block;
          upper[std::min(pa, pb)].push_back(std::max(pa, pb));
        }
      }
    }

    std::size_t offset = 0;
    diag_offset_.resize(n);
    // upper[a] is a temporary adjacency list; everything else reuses capacity.
    for (int a = 0; a < n; ++a) {
      diag_offset_[a] = offset;
      const int w = layout.parameter_block(a).width;
      offset += static_cast<std::size_t>(w) * w;
    }
    row_begin_.assign(n + 1, 0);
    for (int a = 0; a < n; ++a) {
      auto& cols = upper[a];
      std::sort(cols.begin(), cols.end());
      cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
      row_begin_[a + 1] = row_begin_[a] + static_cast<int>(cols.size());
      const int wa = layout.parameter_block(a).width;
      for (int b : cols) {
        off_col_.push_back(b);
        off_row_.push_back(a);
        off_offset_.push_back(offset);
        offset += static_cast<std::size_t>(wa) * layout.parameter_block(b).width;
      }
    }
    values_.assign(offset, 0.0);
    gradient_.setZero(layout.total_params());
    undamped_diagonal_.setZero(layout.total_params());
    lambda_ = 0.0;

    std::vector<int> degree(n, 0);
    for (int k = 0; k < num_off_diagonal(); ++k) {
      ++degree[off_row_[k]];
      ++degree[off_col_[k]];
    }
    neighbor_begin_.assign(n + 1, 0);
    for (int a = 0; a < n; ++a) {
      neighbor_begin_[a + 1] = neighbor_begin_[a] + degree[a];
    }
    neighbors_.resize(neighbor_begin_[n]);
    std::vector<int> fill(neighbor_begin_.begin(), neighbor_begin_.end() - 1);
    // Entries are visited in (row, col) order, so each neighbor list ends up
    // sorted by neighbor id.
    for (int k = 0; k < num_off_diagonal(); ++k) {
      neighbors_[fill[off_col_[k]]++] = {off_row_[k], k, false};
    }
    for (int k = 0; k < num_off_diagonal(); ++k) {
      neighbors_[fill[off_row_[k]]++] = {off_col_[k], k, true};
    }
    for (int a = 0; a < n; ++a) {
      std::sort(neighbors_.begin() + neighbor_begin_[a],
                neighbors_.begin() + neighbor_begin_[a + 1],
                [](const Neighbor& x, const Neighbor& y) { return x.block < y.block; });
    }
  }

  const BlockLayout& layout() const { return *layout_; }
  const std::shared_ptr<const BlockLayout>& shared_layout() const {
    return layout_;
  }
  int num_blocks() const { return layout_->num_parameter_blocks(); }

  BlockRef diag(int a) {
    const int w = layout_->parameter_block(a).width;
    return BlockRef(values_.data() + diag_offset_[a], w, w);
  }
  ConstBlockRef diag(int a) const {
    const int w = layout_->parameter_block(a).width;
    return ConstBlockRef(values_.data() + diag_offset_[a], w, w);
  }

  int num_off_diagonal() const { return static_cast<int>(off_col_.size()); }
  int off_row(int k) const { return off_row_[k]; }
  int off_col(int k) const { return off_col_[k]; }
  BlockRef off_diag(int k) {
    return BlockRef(values_.data() + off_offset_[k],
                    layout_->parameter_block(off_row_[k]).width,
                    layout_->parameter_block(off_col_[k]).width);
  }
  ConstBlockRef off_diag(int k) const {
    return ConstBlockRef(values_.data() + off_offset_[k],
                         layout_->parameter_block(off_row_[k]).width,
                         layout_->parameter_block(off_col_[k]).width);
  }

  /// Index of stored block (a, b) with a < b, if it is in the pattern.
  std::optional<int> find(int a, int b) const {
    const auto first = off_col_.begin() + row_begin_[a];
    const auto last = off_col_.begin() + row_begin_[a + 1];
    const auto it = std::lower_bound(first, last, b);
    if (it == last || *it != b) {
      return std::nullopt;
    }
    return static_cast<int>(it - off_col_.begin());
  }

  /// Off-diagonal entries stored in row a, i.e. (a, b) with b > a.
  std::pair<int, int> row_range(int a) const {
    return {row_begin_[a], row_begin_[a + 1]};
  }

  std::span<const Neighbor> neighbors(int a) const {
    return std::span<const Neighbor>(neighbors_.data() + neighbor_begin_[a],
                                     neighbor_begin_[a + 1] - neighbor_begin_[a]);
  }

  /// Holds -J^T r.
  VecX& gradient() { return gradient_; }
  const VecX& gradient() const { return gradient_; }

  double lambda() const { return lambda_; }

  /// Diagonal of J^T J before damping.
  const VecX& undamped_diagonal() const { return undamped_diagonal_; }

  void SetZero() {
    std::fill(values_.begin(), values_.end(), 0.0);
    gradient_.setZero();
    undamped_diagonal_.setZero();
    lambda_ = 0.0;
  }

  /// Records the current diagonal as the undamped one. For systems whose
  /// blocks were written directly rather than by JtJInto.
  void CaptureUndampedDiagonal() {
    for (int a = 0; a < num_blocks(); ++a) {
      const auto& pa = layout_->parameter_block(a);
      undamped_diagonal_.segment(pa.offset, pa.width) = diag(a).diagonal();
    }
    lambda_ = 0.0;
  }

  std::size_t capacity_bytes() const {
    return values_.capacity() * sizeof(double) +
           (diag_offset_.capacity() + off_offset_.capacity()) * sizeof(std::size_t) +
           (row_begin_.capacity() + off_row_.capacity() + off_col_.capacity() +
            neighbor_begin_.capacity()) * sizeof(int) +
           neighbors_.capacity() * sizeof(Neighbor);
  }

  /// Full symmetric matrix; only for small systems and the dense solver.
  MatX ToDense() const {
    const BlockLayout& layout = *layout_;
    MatX dense = MatX::Zero(layout.total_params(), layout.total_params());
    for (int a = 0; a < num_blocks(); ++a) {
      const auto& pa = layout.parameter_block(a);
      dense.block(pa.offset, pa.offset, pa.width, pa.width) = diag(a);
    }
    for (int k = 0; k < num_off_diagonal(); ++k) {
      const auto& pa = layout.parameter_block(off_row_[k]);
      const auto& pb = layout.parameter_block(off_col_[k]);
      dense.block(pa.offset, pb.offset, pa.width, pb.width) = off_diag(k);
      dense.block(pb.offset, pa.offset, pb.width, pa.width) =
          off_diag(k).transpose();
    }
    return dense;
  }

  /// y = A x using the stored blocks.
  VecX Multiply(const VecX& x) const {
    const BlockLayout& layout = *layout_;
    VecX y = VecX::Zero(layout.total_params());
    for (int a = 0; a < num_blocks(); ++a) {
      const auto& pa = layout.parameter_block(a);
      y.segment(pa.offset, pa.width) += diag(a) * x.segment(pa.offset, pa.width);
    }
    for (int k = 0; k < num_off_diagonal(); ++k) {
      const auto& pa = layout.parameter_block(off_row_[k]);
      const auto& pb = layout.parameter_block(off_col_[k]);
      y.segment(pa.offset, pa.width) += off_diag(k) * x.segment(pb.offset, pb.width);
      y.segment(pb.offset, pb.width) +=
          off_diag(k).transpose() * x.segment(pa.offset, pa.width);
    }
    return y;
  }

 private:
  friend void JtJInto(const BlockSparseJacobian&, BlockNormalSystem*, int);
  friend void ApplyDampingInPlace(BlockNormalSystem*, double);

  std::shared_ptr<const BlockLayout> layout_;
  std::vector<std::size_t> diag_offset_;
  std::vector<int> row_begin_;
  std::vector<int> off_row_;
  std::vector<int> off_col_;
  std::vector<std::size_t> off_offset_;
  std::vector<int> neighbor_begin_;
  std::vector<Neighbor> neighbors_;
  std::vector<double> values_;
  VecX gradient_;
  VecX undamped_diagonal_;
  double lambda_ = 0.0;
};

// ---------------------------------------------------------------------------
// Kernels. Each parameter block owns its row of the output and accumulates
// contributions in residual order, so results are bit-identical for any
// worker count.

/// Overwrites sys (which must have been built from jac's pattern) with
/// J^T J. Gradient is zeroed and lambda reset to 0.
inline void JtJInto(const BlockSparseJacobian& jac, BlockNormalSystem* sys,
                    int num_threads = DefaultNumThreads()) {
  SPARSESFM_CHECK(sys->layout_ == jac.shared_layout(),
                  ErrorCode::kLayoutMismatch,
                  "normal system was built for a different layout");
  sys->SetZero();
  const BlockLayout& layout = jac.layout();
  ParallelFor(0, layout.num_parameter_blocks(), num_threads, [&](int a) {
    BlockRef diag_block = sys->diag(a);
    for (int ea : jac.column(a)) {
      const ConstBlockRef ba = jac.block(ea);
      const auto [begin, end] = jac.row_range(jac.entry(ea).residual_block);
      for (int eb = begin; eb < end; ++eb) {
        const int b = jac.entry(eb).param_block;
        if (b < a) {
          continue;
        }
        if (b == a) {
          diag_block.noalias() += ba.transpose() * ba;
        } else {
          sys->off_diag(*sys->find(a, b)).noalias() +=
              ba.transpose() * jac.block(eb);
        }
      }
    }
    const auto& pa = layout.parameter_block(a);
    sys->undamped_diagonal_.segment(pa.offset, pa.width) = diag_block.diagonal();
  });
}

inline BlockNormalSystem JtJ(const BlockSparseJacobian& jac,
                             int num_threads = DefaultNumThreads()) {
  BlockNormalSystem sys(jac);
  JtJInto(jac, &sys, num_threads);
  return sys;
}

/// out = J^T r.
inline void JtRInto(const BlockSparseJacobian& jac, const VecX& residuals,
                    VecX* out, int num_threads = DefaultNumThreads()) {
  const BlockLayout& layout = jac.layout();
  SPARSESFM_CHECK(residuals.size() == layout.total_residuals(),
                  ErrorCode::kDimensionMismatch,
                  "residual vector has length " + std::to_string(residuals.size()) +
                      ", layout expects " + std::to_string(layout.total_residuals()));
  out->setZero(layout.total_params());
  ParallelFor(0, layout.num_parameter_blocks(), num_threads, [&](int a) {
    const auto& pa = layout.parameter_block(a);
    auto segment = out->segment(pa.offset, pa.width);
    for (int e : jac.column(a)) {
      const auto& rb = layout.residual_block(jac.entry(e).residual_block);
      segment.noalias() +=
          jac.block(e).transpose() * residuals.segment(rb.offset, rb.height);
    }
  });
}

inline VecX JtR(const BlockSparseJacobian& jac, const VecX& residuals,
                int num_threads = DefaultNumThreads()) {
  VecX out;
  JtRInto(jac, residuals, &out, num_threads);
  return out;
}

/// Sets every diagonal scalar to a_kk * (1 + lambda), where a_kk is the
/// undamped J^T J diagonal. Re-damping replaces the previous lambda.
inline void ApplyDampingInPlace(BlockNormalSystem* sys, double lambda) {
  SPARSESFM_CHECK(lambda >= 0.0, ErrorCode::kInvalidArgument,
                  "damping must be non-negative");
  const BlockLayout& layout = sys->layout();
  for (int a = 0; a < sys->num_blocks(); ++a) {
    const auto& pa = layout.parameter_block(a);
    BlockRef d = sys->diag(a);
    for (int i = 0; i < pa.width; ++i) {
      d(i, i) = sys->undamped_diagonal_[pa.offset + i] * (1.0 + lambda);
    }
  }
  sys->lambda_ = lambda;
}

inline BlockNormalSystem ApplyDamping(BlockNormalSystem sys, double lambda) {
  ApplyDampingInPlace(&sys, lambda);
  return sys;
}

}  // namespace sparsesfm
