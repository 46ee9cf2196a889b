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

#include "nomad/kernels.hpp"

#include <cmath>
#include <string>

namespace nomad {

void sgd_update_pair(std::span<Real> w, std::span<Real> h, double a,
                     double lambda, double s) {
  const std::size_t k = w.size();
  if (h.size() != k) throw DimensionError("sgd_update_pair: vector length mismatch");
  Real dot{0};
  for (std::size_t l = 0; l < k; ++l) dot += w[l] * h[l];
  const Real e = static_cast<Real>(a) - dot;
  if (!std::isfinite(e) || !std::isfinite(s))
    throw NonFiniteError("sgd_update_pair: non-finite residual or step");
  const auto step = static_cast<Real>(s);
  const auto shrink = static_cast<Real>(lambda);
  for (std::size_t l = 0; l < k; ++l) {
    const Real wl = w[l];
    const Real hl = h[l];
    w[l] = wl + step * (e * hl - shrink * wl);
    h[l] = hl + step * (e * wl - shrink * hl);
  }
}

NormalEquation build_normal_equation(const FactorMatrix& other,
                                     std::span<const IndexedRating> ratings,
                                     double lambda, RegMode reg_mode) {
  const int k = other.k();
  NormalEquation eq{k, std::vector<double>(static_cast<std::size_t>(k * k), 0.0),
                    std::vector<double>(static_cast<std::size_t>(k), 0.0)};
  for (const auto& r : ratings) {
    const auto h = other.row(r.index);
    for (int a = 0; a < k; ++a) {
      const double ha = h[a];
      eq.b[static_cast<std::size_t>(a)] += r.value * ha;
      for (int c = 0; c <= a; ++c) eq.M[static_cast<std::size_t>(a * k + c)] += ha * h[c];
    }
  }
  for (int a = 0; a < k; ++a)
    for (int c = 0; c < a; ++c)
      eq.M[static_cast<std::size_t>(c * k + a)] = eq.M[static_cast<std::size_t>(a * k + c)];

  if (lambda == 0.0 && ratings.empty())
    throw SingularSystemError("normal equation of an empty row with lambda = 0 is singular");
  const double count = static_cast<double>(ratings.size());
  const double c = reg_mode == RegMode::weighted ? (count > 0 ? count : 1.0) : 1.0;
  for (int a = 0; a < k; ++a) eq.M[static_cast<std::size_t>(a * k + a)] += lambda * c;
  return eq;
}

std::vector<double> als_solve_row(const NormalEquation& eq) {
  const int k = eq.k;
  // Lower-triangular Cholesky factor, L L^T = M.
  std::vector<double> L(static_cast<std::size_t>(k * k), 0.0);
  auto at = [k](std::vector<double>& v, int r, int c) -> double& {
    return v[static_cast<std::size_t>(r * k + c)];
  };
  double scale = 0.0;
  for (int a = 0; a < k; ++a) scale = std::max(scale, std::abs(eq.m(a, a)));
  for (int j = 0; j < k; ++j) {
    double d = eq.m(j, j);
    for (int l = 0; l < j; ++l) d -= at(L, j, l) * at(L, j, l);
    if (!(d > scale * 1e-14) || !std::isfinite(d))
      throw SingularSystemError("matrix is not positive definite (pivot " +
                                std::to_string(j) + " = " + std::to_string(d) + ")");
    const double djj = std::sqrt(d);
    at(L, j, j) = djj;
    for (int i = j + 1; i < k; ++i) {
      double s = eq.m(i, j);
      for (int l = 0; l < j; ++l) s -= at(L, i, l) * at(L, j, l);
      at(L, i, j) = s / djj;
    }
  }
  std::vector<double> x(eq.b);
  for (int i = 0; i < k; ++i) {
    for (int l = 0; l < i; ++l) x[static_cast<std::size_t>(i)] -= at(L, i, l) * x[static_cast<std::size_t>(l)];
    x[static_cast<std::size_t>(i)] /= at(L, i, i);
  }
  for (int i = k - 1; i >= 0; --i) {
    for (int l = i + 1; l < k; ++l) x[static_cast<std::size_t>(i)] -= at(L, l, i) * x[static_cast<std::size_t>(l)];
    x[static_cast<std::size_t>(i)] /= at(L, i, i);
  }
  return x;
}

double ccd_coordinate_update(std::span<const Real> w, int l, const NormalEquation& eq) {
  const double mll = eq.m(l, l);
  if (!(mll > 0.0)) throw SingularSystemError("coordinate curvature m_ll must be positive");
  double g = -eq.b[static_cast<std::size_t>(l)];
  for (int c = 0; c < eq.k; ++c) g += eq.m(l, c) * w[static_cast<std::size_t>(c)];
  return static_cast<double>(w[static_cast<std::size_t>(l)]) - g / mll;
}

ResidualMatrix ResidualMatrix::compute(const FactorMatrix& W, const FactorMatrix& H,
                                       const RatingIndex& index) {
  ResidualMatrix R;
  R.values.resize(index.row_item.size());
  const std::size_t m = index.row_ptr.size() - 1;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t r = index.row_ptr[i]; r < index.row_ptr[i + 1]; ++r)
      R.values[r] = index.row_value[r] -
                    static_cast<double>(predict(W.row(i), H.row(index.row_item[r])));
  return R;
}

double ResidualMatrix::max_drift(const FactorMatrix& W, const FactorMatrix& H,
                                 const RatingIndex& index) const {
  const auto fresh = compute(W, H, index);
  double worst = 0.0;
  for (std::size_t r = 0; r < values.size(); ++r)
    worst = std::max(worst, std::abs(values[r] - fresh.values[r]));
  return worst;
}

std::size_t ccdpp_epoch(FactorMatrix& W, FactorMatrix& H, const ShardedRatings& data,
                        ResidualMatrix& residual, const HyperParams& params,
                        int inner_iters, bool check_residual) {
  const auto& idx = data.index;
  const int k = W.k();
  auto& R = residual.values;
  if (R.size() != data.nnz())
    throw DimensionError("residual has " + std::to_string(R.size()) + " entries, data has " +
                         std::to_string(data.nnz()));
  if (check_residual && residual.max_drift(W, H, idx) > 1e-6)
    throw Error("residual matrix is inconsistent with the factors");

  const double lambda = params.lambda;
  auto reg = [&](std::size_t degree) {
    if (params.reg_mode == RegMode::plain) return lambda;
    return lambda * static_cast<double>(degree > 0 ? degree : 1);
  };

  std::size_t updates = 0;
  for (int l = 0; l < k; ++l) {
    // R-hat = R + w_l h_l^T on the observed pattern.
    for (std::size_t i = 0; i < data.m; ++i) {
      const double wil = W(i, l);
      for (std::size_t r = idx.row_ptr[i]; r < idx.row_ptr[i + 1]; ++r)
        R[r] += wil * static_cast<double>(H(idx.row_item[r], l));
    }
    for (int it = 0; it < inner_iters; ++it) {
      for (std::size_t i = 0; i < data.m; ++i) {
        double num = 0.0, den = reg(idx.user_degree(i));
        for (std::size_t r = idx.row_ptr[i]; r < idx.row_ptr[i + 1]; ++r) {
          const double hjl = H(idx.row_item[r], l);
          num += R[r] * hjl;
          den += hjl * hjl;
        }
        W(i, l) = den > 0.0 ? static_cast<Real>(num / den) : Real{0};
        ++updates;
      }
      for (std::size_t j = 0; j < data.n; ++j) {
        double num = 0.0, den = reg(idx.item_degree(j));
        for (std::size_t c = idx.col_ptr[j]; c < idx.col_ptr[j + 1]; ++c) {
          const double wil = W(idx.col_user[c], l);
          num += R[idx.col_to_row[c]] * wil;
          den += wil * wil;
        }
        H(j, l) = den > 0.0 ? static_cast<Real>(num / den) : Real{0};
        ++updates;
      }
    }
    for (std::size_t i = 0; i < data.m; ++i) {
      const double wil = W(i, l);
      for (std::size_t r = idx.row_ptr[i]; r < idx.row_ptr[i + 1]; ++r)
        R[r] -= wil * static_cast<double>(H(idx.row_item[r], l));
    }
  }
  return updates;
}

}  // namespace nomad
