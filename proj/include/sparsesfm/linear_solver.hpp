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
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "sparsesfm/common.hpp"
#include "sparsesfm/parallel.hpp"
#include "sparsesfm/sparse_block.hpp"

namespace sparsesfm {

enum class LinearSolverType { kSchurPcg, kDense };

inline std::string_view LinearSolverName(LinearSolverType type) {
  return type == LinearSolverType::kSchurPcg ? "schur_pcg" : "dense";
}

inline LinearSolverType ParseLinearSolver(std::string_view name) {
  if (name == "schur_pcg") return LinearSolverType::kSchurPcg;
  if (name == "dense") return LinearSolverType::kDense;
  throw Error(ErrorCode::kInvalidArgument,
              "unknown solver '" + std::string(name) + "'");
}

struct LinearSolverOptions {
  LinearSolverType type = LinearSolverType::kSchurPcg;
  int cg_max_iters = 500;
  double cg_tol = 1e-8;
  // The dense path refuses systems larger than this (n^2 doubles).
  int dense_max_params = 6000;
  int num_threads = DefaultNumThreads();
};

struct LinearSolveInfo {
  int cg_iterations = 0;
};

namespace internal {

// Parameter blocks are at most 7 wide, so block math stays off the heap.
using SmallMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                               Eigen::RowMajor, 7, 7>;
using SmallVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 7, 1>;
using Neighbor = BlockNormalSystem::Neighbor;

/// Copy of a diagonal block with masked scalars (zero undamped diagonal,
/// hence an all-zero row and column) replaced by 1 so the parameter keeps a
/// zero update.
inline SmallMat MaskedDiagonal(const BlockNormalSystem& sys, int block) {
  SmallMat d = sys.diag(block);
  const auto& pb = sys.layout().parameter_block(block);
  for (int i = 0; i < pb.width; ++i) {
    if (sys.undamped_diagonal()[pb.offset + i] == 0.0) {
      d(i, i) = 1.0;
    }
  }
  return d;
}

/// Inverse of a small symmetric positive definite block.
inline bool InvertSpd(const SmallMat& m, SmallMat* inverse) {
  Eigen::LLT<SmallMat> llt(m);
  if (llt.info() != Eigen::Success) {
    return false;
  }
  *inverse = llt.solve(SmallMat::Identity(m.rows(), m.cols()));
  return inverse->allFinite();
}

/// A block (a, b) stored in either orientation, read from a's side.
inline SmallMat Coupling(ConstBlockRef stored, bool stored_as_row) {
  if (stored_as_row) return stored;
  return stored.transpose();
}

inline SmallMat Coupling(const BlockNormalSystem& sys, const Neighbor& nb) {
  return Coupling(sys.off_diag(nb.off_index), nb.stored_as_row);
}

/// out += kSign * op(m) * in for a small row-major block, op = transpose
/// when kTranspose. Plain loops beat Eigen's dynamic-size product dispatch at
/// these sizes.
template <int kSign, typename In, typename Out>
inline void SmallGemv(const double* m, int rows, int cols, bool transpose,
                      const In& in, Out& out) {
  if (!transpose) {
    for (int i = 0; i < rows; ++i) {
      const double* row = m + i * cols;
      double acc = 0.0;
      for (int j = 0; j < cols; ++j) acc += row[j] * in(j);
      out(i) += kSign * acc;
    }
  } else {
    for (int i = 0; i < rows; ++i) {
      const double* row = m + i * cols;
      const double v = kSign * in(i);
      for (int j = 0; j < cols; ++j) out(j) += row[j] * v;
    }
  }
}

/// out -= A_{from,nb} * in.
template <typename In, typename Out>
void SubtractCouplingTimes(ConstBlockRef stored, bool stored_as_row,
                           const In& in, Out&& out) {
  SmallGemv<-1>(stored.data(), static_cast<int>(stored.rows()),
                static_cast<int>(stored.cols()), !stored_as_row, in, out);
}

template <typename In, typename Out>
void AddCouplingTimes(ConstBlockRef stored, bool stored_as_row, const In& in,
                      Out&& out) {
  SmallGemv<1>(stored.data(), static_cast<int>(stored.rows()),
               static_cast<int>(stored.cols()), !stored_as_row, in, out);
}

/// out = m * in for a small square row-major block.
template <typename M, typename In, typename Out>
void SetProduct(const M& m, const In& in, Out&& out) {
  out.setZero();
  SmallGemv<1>(m.data(), static_cast<int>(m.rows()), static_cast<int>(m.cols()),
               false, in, out);
}

}  // namespace internal

/// Solves the damped normal equations A x = g (g = -J^T r) by eliminating
/// point-like blocks and running block-Jacobi preconditioned conjugate
/// gradients on the implicit reduced system
///
///   S = A_rr - A_re A_ee^-1 A_er.
///
/// Eliminable blocks may form stars: one head (a point) plus leaves that
/// couple only to the head and to retained blocks the head also couples to
/// (per-observation scales). Leaves are folded into their head first, so S
/// is applied without fill storage. Scratch buffers are kept between calls.
class SchurPcgSolver {
 public:
  VecX Solve(const BlockNormalSystem& sys, const LinearSolverOptions& options,
             LinearSolveInfo* info = nullptr) {
    Analyze(sys);
    Factorize(sys, options.num_threads);

    const VecX& g = sys.gradient();
    VecX b(num_reduced_);
    ReduceRhs(sys, g, &b, options.num_threads);

    VecX x_reduced = VecX::Zero(num_reduced_);
    const int iterations = Pcg(sys, b, g.norm(), options, &x_reduced);
    if (info != nullptr) {
      info->cg_iterations = iterations;
    }

    VecX x(sys.layout().total_params());
    BackSubstitute(sys, g, x_reduced, &x, options.num_threads);
    return x;
  }

  /// Bytes held by scratch buffers.
  std::size_t capacity_bytes() const {
    return sizeof(double) * (inverse_.capacity() + effective_values_.capacity() +
                             preconditioner_.capacity() +
                             static_cast<std::size_t>(work_.size()) +
                             static_cast<std::size_t>(expanded_.size())) +
           sizeof(int) * (role_.capacity() + reduced_offset_.capacity() +
                          retained_.capacity() + heads_.capacity() +
                          leaves_.capacity() + inverse_offset_.capacity() +
                          precond_offset_.capacity()) +
           sizeof(std::int64_t) * effective_offset_.capacity();
  }

 private:
  using Neighbor = BlockNormalSystem::Neighbor;
  using SmallMat = internal::SmallMat;
  using SmallVec = internal::SmallVec;
  enum Role : int { kRetained = 0, kHead = 1, kLeaf = 2 };

  void Analyze(const BlockNormalSystem& sys) {
    const BlockLayout& layout = sys.layout();
    const int n = layout.num_parameter_blocks();
    role_.assign(n, kRetained);
    reduced_offset_.assign(n, -1);
    retained_.clear();
    heads_.clear();
    leaves_.clear();
    num_reduced_ = 0;

    auto eliminable = [&](int a) {
      return IsEliminable(layout.parameter_block(a).kind);
    };

    for (int a = 0; a < n; ++a) {
      const auto& pa = layout.parameter_block(a);
      if (!eliminable(a)) {
        retained_.push_back(a);
        reduced_offset_[a] = num_reduced_;
        num_reduced_ += pa.width;
        continue;
      }
      // Heads: point blocks, or eliminable blocks with no eliminable
      // neighbor.
      bool isolated = true;
      for (const auto& nb : sys.neighbors(a)) {
        if (eliminable(nb.block)) isolated = false;
      }
      if (pa.kind != BlockKind::kGpScale || isolated) {
        role_[a] = kHead;
        heads_.push_back(a);
      }
    }
    for (int a = 0; a < n; ++a) {
      if (!eliminable(a) || role_[a] == kHead) continue;
      int head = -1;
      for (const auto& nb : sys.neighbors(a)) {
        if (!eliminable(nb.block)) continue;
        SPARSESFM_CHECK(head == -1 && role_[nb.block] == kHead,
                        ErrorCode::kLayoutMismatch,
                        "eliminable block " + std::to_string(a) +
                            " couples to more than one eliminable block");
        head = nb.block;
      }
      role_[a] = kLeaf;
      leaves_.push_back(a);
      // Every retained coupling of a leaf must also be a coupling of its
      // head, where the effective block is stored.
      for (const auto& nb : sys.neighbors(a)) {
        if (role_[nb.block] != kRetained) continue;
        SPARSESFM_CHECK(
            sys.find(std::min(head, nb.block), std::max(head, nb.block)).has_value(),
            ErrorCode::kLayoutMismatch,
            "eliminable block " + std::to_string(a) +
                " couples to a retained block its head does not");
      }
    }
    for (int h : heads_) {
      for (const auto& nb : sys.neighbors(h)) {
        SPARSESFM_CHECK(role_[nb.block] != kHead, ErrorCode::kLayoutMismatch,
                        "two eliminated point blocks are coupled");
      }
    }

    inverse_offset_.assign(n, -1);
    std::size_t inv_size = 0;
    precond_offset_.assign(n, -1);
    std::size_t pre_size = 0;
    for (int a = 0; a < n; ++a) {
      const int w = layout.parameter_block(a).width;
      if (role_[a] == kRetained) {
        precond_offset_[a] = static_cast<int>(pre_size);
        pre_size += static_cast<std::size_t>(w) * w;
      } else {
        inverse_offset_[a] = static_cast<int>(inv_size);
        inv_size += static_cast<std::size_t>(w) * w;
      }
    }
    inverse_.assign(inv_size, 0.0);
    preconditioner_.assign(pre_size, 0.0);

    // Effective head/retained couplings get their own storage only when the
    // head has leaves; otherwise the system block is used directly.
    std::vector<char> has_leaves(n, 0);
    for (int l : leaves_) {
      for (const auto& nb : sys.neighbors(l)) {
        if (role_[nb.block] == kHead) has_leaves[nb.block] = 1;
      }
    }
    effective_offset_.assign(sys.num_off_diagonal(), -1);
    std::size_t eff_size = 0;
    for (int k = 0; k < sys.num_off_diagonal(); ++k) {
      const int a = sys.off_row(k);
      const int b = sys.off_col(k);
      int head = -1;
      if (role_[a] == kHead && role_[b] == kRetained) head = a;
      if (role_[b] == kHead && role_[a] == kRetained) head = b;
      if (head < 0 || !has_leaves[head]) continue;
      effective_offset_[k] = static_cast<std::int64_t>(eff_size);
      eff_size += static_cast<std::size_t>(layout.parameter_block(a).width) *
                  layout.parameter_block(b).width;
    }
    effective_values_.assign(eff_size, 0.0);
    work_.setZero(layout.total_params());
    expanded_.setZero(layout.total_params());
  }

  Eigen::Map<RowMajorMatX> Inverse(const BlockNormalSystem& sys, int block) {
    const int w = sys.layout().parameter_block(block).width;
    return Eigen::Map<RowMajorMatX>(inverse_.data() + inverse_offset_[block], w, w);
  }
  ConstBlockRef Inverse(const BlockNormalSystem& sys, int block) const {
    const int w = sys.layout().parameter_block(block).width;
    return ConstBlockRef(inverse_.data() + inverse_offset_[block], w, w);
  }

  /// Head/retained coupling after folding the head's leaves in, as stored.
  ConstBlockRef EffectiveStored(const BlockNormalSystem& sys, int k) const {
    const std::int64_t off = effective_offset_[k];
    if (off < 0) {
      return sys.off_diag(k);
    }
    const int rows = sys.layout().parameter_block(sys.off_row(k)).width;
    const int cols = sys.layout().parameter_block(sys.off_col(k)).width;
    return ConstBlockRef(effective_values_.data() + off, rows, cols);
  }

  void Factorize(const BlockNormalSystem& sys, int num_threads) {
    const BlockLayout& layout = sys.layout();

    ParallelFor(0, static_cast<int>(leaves_.size()), num_threads, [&](int i) {
      const int leaf = leaves_[i];
      SmallMat inv;
      if (!internal::InvertSpd(internal::MaskedDiagonal(sys, leaf), &inv)) {
        throw Error(ErrorCode::kSingularBlock,
                    "eliminated block " + std::to_string(leaf) + " is singular");
      }
      Inverse(sys, leaf) = inv;
    });

    ParallelFor(0, static_cast<int>(heads_.size()), num_threads, [&](int i) {
      const int h = heads_[i];
      SmallMat reduced = internal::MaskedDiagonal(sys, h);
      for (const auto& nb : sys.neighbors(h)) {
        if (role_[nb.block] != kLeaf) continue;
        const SmallMat a_hl = internal::Coupling(sys, nb);
        reduced.noalias() -= a_hl * Inverse(sys, nb.block) * a_hl.transpose();
      }
      SmallMat inv;
      if (!internal::InvertSpd(reduced, &inv)) {
        throw Error(ErrorCode::kSingularBlock,
                    "eliminated block " + std::to_string(h) + " is singular");
      }
      Inverse(sys, h) = inv;

      // A~_hc = A_hc - sum_l A_hl D_l^-1 A_lc.
      for (const auto& nb : sys.neighbors(h)) {
        if (role_[nb.block] != kRetained) continue;
        const std::int64_t off = effective_offset_[nb.off_index];
        if (off < 0) continue;
        SmallMat eff = internal::Coupling(sys, nb);
        for (const auto& leaf_nb : sys.neighbors(h)) {
          if (role_[leaf_nb.block] != kLeaf) continue;
          for (const auto& lc : sys.neighbors(leaf_nb.block)) {
            if (lc.block != nb.block) continue;
            eff.noalias() -= internal::Coupling(sys, leaf_nb) *
                             Inverse(sys, leaf_nb.block) *
                             internal::Coupling(sys, lc);
          }
        }
        const int rows = layout.parameter_block(sys.off_row(nb.off_index)).width;
        const int cols = layout.parameter_block(sys.off_col(nb.off_index)).width;
        Eigen::Map<RowMajorMatX> stored(effective_values_.data() + off, rows, cols);
        if (nb.stored_as_row) {
          stored = eff;
        } else {
          stored = eff.transpose();
        }
      }
    });

    // Block-Jacobi preconditioner: inverses of the diagonal blocks of S.
    ParallelFor(0, static_cast<int>(retained_.size()), num_threads, [&](int i) {
      const int c = retained_[i];
      SmallMat s_cc = internal::MaskedDiagonal(sys, c);
      for (const auto& nb : sys.neighbors(c)) {
        if (role_[nb.block] == kLeaf) {
          const SmallMat a_cl = internal::Coupling(sys, nb);
          s_cc.noalias() -= a_cl * Inverse(sys, nb.block) * a_cl.transpose();
        } else if (role_[nb.block] == kHead) {
          const SmallMat a_ch = internal::Coupling(
              EffectiveStored(sys, nb.off_index), nb.stored_as_row);
          s_cc.noalias() -= a_ch * Inverse(sys, nb.block) * a_ch.transpose();
        }
      }
      const int w = static_cast<int>(s_cc.rows());
      Eigen::Map<RowMajorMatX> pre(preconditioner_.data() + precond_offset_[c], w, w);
      SmallMat inv;
      if (internal::InvertSpd(s_cc, &inv)) {
        pre = inv;
      } else {
        // Scalar Jacobi for a block that lost definiteness to round-off.
        pre.setZero();
        for (int k = 0; k < w; ++k) {
          pre(k, k) = s_cc(k, k) > 0.0 ? 1.0 / s_cc(k, k) : 1.0;
        }
      }
    });
  }

  /// Star solve on every eliminated group. Reads `in` at eliminated offsets;
  /// writes t_l = D_l^-1 in_l at leaf offsets and
  /// z_h = M_h (in_h - sum_l A_hl t_l) at head offsets of work_.
  void EliminatedSolve(const BlockNormalSystem& sys, const VecX& in,
                       int num_threads) {
    const BlockLayout& layout = sys.layout();
    ParallelFor(0, static_cast<int>(heads_.size()), num_threads, [&](int i) {
      const int h = heads_[i];
      const auto& ph = layout.parameter_block(h);
      SmallVec rhs = in.segment(ph.offset, ph.width);
      for (const auto& nb : sys.neighbors(h)) {
        if (role_[nb.block] != kLeaf) continue;
        const auto& pl = layout.parameter_block(nb.block);
        internal::SetProduct(Inverse(sys, nb.block), in.segment(pl.offset, pl.width),
                             work_.segment(pl.offset, pl.width));
        internal::SubtractCouplingTimes(sys.off_diag(nb.off_index),
                                        nb.stored_as_row,
                                        work_.segment(pl.offset, pl.width), rhs);
      }
      internal::SetProduct(Inverse(sys, h), rhs, work_.segment(ph.offset, ph.width));
    });
  }

  /// out_c -= sum_{l ~ c} A_cl t_l + sum_{h ~ c} A~_ch z_h, reading t and z
  /// from work_.
  void ScatterToRetained(const BlockNormalSystem& sys, VecX* out,
                         int num_threads) const {
    const BlockLayout& layout = sys.layout();
    ParallelFor(0, static_cast<int>(retained_.size()), num_threads, [&](int i) {
      const int c = retained_[i];
      const auto& pc = layout.parameter_block(c);
      auto seg = out->segment(reduced_offset_[c], pc.width);
      for (const auto& nb : sys.neighbors(c)) {
        const auto& pn = layout.parameter_block(nb.block);
        if (role_[nb.block] == kLeaf) {
          internal::SubtractCouplingTimes(sys.off_diag(nb.off_index),
                                          nb.stored_as_row,
                                          work_.segment(pn.offset, pn.width), seg);
        } else if (role_[nb.block] == kHead) {
          internal::SubtractCouplingTimes(EffectiveStored(sys, nb.off_index),
                                          nb.stored_as_row,
                                          work_.segment(pn.offset, pn.width), seg);
        }
      }
    });
  }

  void ReduceRhs(const BlockNormalSystem& sys, const VecX& g, VecX* b,
                 int num_threads) {
    const BlockLayout& layout = sys.layout();
    EliminatedSolve(sys, g, num_threads);
    for (int c : retained_) {
      const auto& pc = layout.parameter_block(c);
      b->segment(reduced_offset_[c], pc.width) = g.segment(pc.offset, pc.width);
    }
    ScatterToRetained(sys, b, num_threads);
  }

  /// expanded_e = A_er x for every eliminated block e (raw couplings).
  template <typename Sign>
  void ExpandToEliminated(const BlockNormalSystem& sys, const VecX& x,
                          Sign sign, int num_threads) {
    const BlockLayout& layout = sys.layout();
    ParallelFor(0, static_cast<int>(heads_.size()), num_threads, [&](int i) {
      const int h = heads_[i];
      auto expand = [&](int e) {
        const auto& pe = layout.parameter_block(e);
        auto seg = expanded_.segment(pe.offset, pe.width);
        for (const auto& nb : sys.neighbors(e)) {
          if (role_[nb.block] != kRetained) continue;
          const auto& pc = layout.parameter_block(nb.block);
          sign(sys.off_diag(nb.off_index), nb.stored_as_row,
               x.segment(reduced_offset_[nb.block], pc.width), seg);
        }
      };
      expand(h);
      for (const auto& nb : sys.neighbors(h)) {
        if (role_[nb.block] == kLeaf) expand(nb.block);
      }
    });
  }

  /// y = S x for reduced vectors.
  void MultiplyReduced(const BlockNormalSystem& sys, const VecX& x, VecX* y,
                       int num_threads) {
    const BlockLayout& layout = sys.layout();
    expanded_.setZero();
    ExpandToEliminated(
        sys, x,
        [](ConstBlockRef m, bool row, const auto& in, auto& out) {
          internal::AddCouplingTimes(m, row, in, out);
        },
        num_threads);
    // The star solve of the raw expansion yields t_l = D_l^-1 A_lr x and
    // z_h = M_h A~_hr x, which is what ScatterToRetained consumes.
    EliminatedSolve(sys, expanded_, num_threads);

    ParallelFor(0, static_cast<int>(retained_.size()), num_threads, [&](int i) {
      const int c = retained_[i];
      const auto& pc = layout.parameter_block(c);
      auto seg = y->segment(reduced_offset_[c], pc.width);
      seg.noalias() = internal::MaskedDiagonal(sys, c) *
                      x.segment(reduced_offset_[c], pc.width);
      for (const auto& nb : sys.neighbors(c)) {
        if (role_[nb.block] != kRetained) continue;
        const auto& pn = layout.parameter_block(nb.block);
        internal::AddCouplingTimes(sys.off_diag(nb.off_index), nb.stored_as_row,
                                   x.segment(reduced_offset_[nb.block], pn.width),
                                   seg);
      }
    });
    ScatterToRetained(sys, y, num_threads);
  }

  void ApplyPreconditioner(const BlockNormalSystem& sys, const VecX& r,
                           VecX* z) const {
    const BlockLayout& layout = sys.layout();
    for (int c : retained_) {
      const int w = layout.parameter_block(c).width;
      const ConstBlockRef pre(preconditioner_.data() + precond_offset_[c], w, w);
      z->segment(reduced_offset_[c], w).noalias() =
          pre * r.segment(reduced_offset_[c], w);
    }
  }

  int Pcg(const BlockNormalSystem& sys, const VecX& b, double full_rhs_norm,
          const LinearSolverOptions& options, VecX* x) {
    x->setZero(num_reduced_);
    const double b_norm = b.norm();
    if (num_reduced_ == 0 || b_norm == 0.0) {
      return 0;
    }
    // Tight enough for both the reduced and the full system residual.
    const double target =
        options.cg_tol *
        std::min(b_norm, full_rhs_norm > 0.0 ? full_rhs_norm : b_norm);
    const int threads = options.num_threads;

    VecX r = b;
    VecX z(num_reduced_);
    VecX p(num_reduced_);
    VecX q(num_reduced_);
    ApplyPreconditioner(sys, r, &z);
    p = z;
    double rz = r.dot(z);
    for (int it = 1; it <= options.cg_max_iters; ++it) {
      MultiplyReduced(sys, p, &q, threads);
      const double pq = p.dot(q);
      if (!(pq > 0.0)) {
        throw Error(ErrorCode::kCGStall,
                    "reduced system lost positive definiteness");
      }
      const double alpha = rz / pq;
      x->noalias() += alpha * p;
      r.noalias() -= alpha * q;
      if (r.norm() <= target) {
        // Recursive residuals drift; confirm with the true one.
        MultiplyReduced(sys, *x, &q, threads);
        r = b - q;
        if (r.norm() <= target) {
          return it;
        }
        ApplyPreconditioner(sys, r, &z);
        p = z;
        rz = r.dot(z);
        continue;
      }
      ApplyPreconditioner(sys, r, &z);
      const double rz_next = r.dot(z);
      p = z + (rz_next / rz) * p;
      rz = rz_next;
    }
    throw Error(ErrorCode::kCGStall,
                "conjugate gradient did not reach tolerance in " +
                    std::to_string(options.cg_max_iters) + " iterations");
  }

  void BackSubstitute(const BlockNormalSystem& sys, const VecX& g,
                      const VecX& x_reduced, VecX* x, int num_threads) {
    const BlockLayout& layout = sys.layout();
    for (int c : retained_) {
      const auto& pc = layout.parameter_block(c);
      x->segment(pc.offset, pc.width) =
          x_reduced.segment(reduced_offset_[c], pc.width);
    }
    // rhs_e = g_e - A_er x_r, then the star solve.
    expanded_ = g;
    ExpandToEliminated(
        sys, x_reduced,
        [](ConstBlockRef m, bool row, const auto& in, auto& out) {
          internal::SubtractCouplingTimes(m, row, in, out);
        },
        num_threads);
    EliminatedSolve(sys, expanded_, num_threads);

    // Heads come straight out of the star solve; leaves need the head:
    //   x_l = D_l^-1 (rhs_l - A_lh x_h).
    ParallelFor(0, static_cast<int>(heads_.size()), num_threads, [&](int i) {
      const int h = heads_[i];
      const auto& ph = layout.parameter_block(h);
      const SmallVec xh = work_.segment(ph.offset, ph.width);
      x->segment(ph.offset, ph.width) = xh;
      for (const auto& nb : sys.neighbors(h)) {
        if (role_[nb.block] != kLeaf) continue;
        const auto& pl = layout.parameter_block(nb.block);
        // Coupling from the leaf's side is the transpose of the head's view.
        SmallVec rhs = expanded_.segment(pl.offset, pl.width);
        internal::SubtractCouplingTimes(sys.off_diag(nb.off_index),
                                        !nb.stored_as_row, xh, rhs);
        internal::SetProduct(Inverse(sys, nb.block), rhs, x->segment(pl.offset, pl.width));
      }
    });
  }

  std::vector<int> role_;
  std::vector<int> reduced_offset_;
  std::vector<int> retained_;
  std::vector<int> heads_;
  std::vector<int> leaves_;
  std::vector<int> inverse_offset_;
  std::vector<int> precond_offset_;
  std::vector<std::int64_t> effective_offset_;
  std::vector<double> inverse_;
  std::vector<double> effective_values_;
  std::vector<double> preconditioner_;
  VecX work_;
  VecX expanded_;
  int num_reduced_ = 0;
};

/// Materializes the damped system and solves it with a Jacobi-scaled LDL^T.
class DenseSolver {
 public:
  VecX Solve(const BlockNormalSystem& sys, const LinearSolverOptions& options) {
    const int n = sys.layout().total_params();
    SPARSESFM_CHECK(n <= options.dense_max_params, ErrorCode::kSolverFailure,
                    "dense system with " + std::to_string(n) +
                        " parameters exceeds the limit of " +
                        std::to_string(options.dense_max_params));
    dense_ = sys.ToDense();
    const VecX& diag0 = sys.undamped_diagonal();
    scale_.resize(n);
    for (int i = 0; i < n; ++i) {
      if (diag0[i] == 0.0) {
        dense_(i, i) = 1.0;
      }
      scale_[i] = 1.0 / std::sqrt(dense_(i, i));
    }
    dense_ = scale_.asDiagonal() * dense_ * scale_.asDiagonal();
    ldlt_.compute(dense_);
    SPARSESFM_CHECK(ldlt_.info() == Eigen::Success && ldlt_.isPositive(),
                    ErrorCode::kSolverFailure,
                    "dense factorization failed");
    VecX x = scale_.asDiagonal() *
             ldlt_.solve(scale_.asDiagonal() * sys.gradient());
    SPARSESFM_CHECK(x.allFinite(), ErrorCode::kSolverFailure,
                    "dense solve produced non-finite values");
    return x;
  }

  std::size_t capacity_bytes() const {
    return sizeof(double) * (dense_.size() + scale_.size());
  }

 private:
  MatX dense_;
  VecX scale_;
  Eigen::LDLT<MatX> ldlt_;
};

/// Reusable linear-solver state; one instance per concurrent solve.
class LinearSolver {
 public:
  VecX Solve(const BlockNormalSystem& sys, const LinearSolverOptions& options,
             LinearSolveInfo* info = nullptr) {
    if (info != nullptr) {
      *info = {};
    }
    if (options.type == LinearSolverType::kDense) {
      return dense_.Solve(sys, options);
    }
    return schur_.Solve(sys, options, info);
  }

  std::size_t capacity_bytes() const {
    return schur_.capacity_bytes() + dense_.capacity_bytes();
  }

 private:
  SchurPcgSolver schur_;
  DenseSolver dense_;
};

/// Convenience wrapper: solves the damped system held in sys.
inline VecX SolveNormal(const BlockNormalSystem& sys,
                        const LinearSolverOptions& options,
                        LinearSolveInfo* info = nullptr) {
  LinearSolver solver;
  return solver.Solve(sys, options, info);
}

}  // namespace sparsesfm
