/*
 * Copyright 2026 The nomad-mf Authors. All Rights Reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef NOMAD_KERNELS_HPP
#define NOMAD_KERNELS_HPP

#include <span>
#include <vector>

#include "nomad/core.hpp"

namespace nomad {

class SingularSystemError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// One SGD step on the term for a single rating. The residual is taken from
/// the incoming vectors and both rows move using their old values:
///   e  = a - <w, h>
///   w' = w + s (e h - lambda w)
///   h' = h + s (e w - lambda h)
void sgd_update_pair(std::span<Real> w, std::span<Real> h, double a,
                     double lambda, double s);

/// (column index, rating) for one row of the ratings matrix.
struct IndexedRating {
  std::uint32_t index;
  double value;
};

/// Normal equation of one row's least-squares subproblem against the rows of
/// `other` selected by `ratings`: M = sum h h^T + lambda c I, b = sum a h.
/// c is the rating count under RegMode::weighted (floored at 1 so an empty row
/// still gets lambda I) and 1 under RegMode::plain.
NormalEquation build_normal_equation(const FactorMatrix& other,
                                     std::span<const IndexedRating> ratings,
                                     double lambda, RegMode reg_mode);

/// Solves M x = b by Cholesky factorization. Throws SingularSystemError when
/// M is not numerically positive definite.
std::vector<double> als_solve_row(const NormalEquation& eq);

/// Exact minimizer of the row quadratic along coordinate l, all other
/// coordinates of w held fixed.
double ccd_coordinate_update(std::span<const Real> w, int l, const NormalEquation& eq);

/// R_ij = A_ij - <w_i, h_j>, stored in the row (user-major) order of a
/// RatingIndex.
struct ResidualMatrix {
  std::vector<double> values;

  static ResidualMatrix compute(const FactorMatrix& W, const FactorMatrix& H,
                                const RatingIndex& index);
  /// Largest |R_ij - fresh_ij| against a from-scratch recompute.
  double max_drift(const FactorMatrix& W, const FactorMatrix& H,
                   const RatingIndex& index) const;
};

/// One CCD++ epoch: for each rank l, fold w_il h_jl back into the residual,
/// run `inner_iters` rounds of single-coordinate minimization over all w_il
/// then all h_jl, and subtract the new rank-one term again.
/// Returns the number of coordinate updates performed.
std::size_t ccdpp_epoch(FactorMatrix& W, FactorMatrix& H, const ShardedRatings& data,
                        ResidualMatrix& residual, const HyperParams& params,
                        int inner_iters = 1, bool check_residual = false);

}  // namespace nomad

#endif  // NOMAD_KERNELS_HPP
