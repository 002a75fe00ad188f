#pragma once

#include "flatcell/common.hpp"

#include <memory>

namespace flatcell {

/// Sparse Cholesky (CHOLMOD simplicial LLT) of a symmetric matrix, read from its
/// lower triangle. The symbolic analysis is reused while the pattern is unchanged.
class SparseCholesky {
public:
    SparseCholesky();
    ~SparseCholesky();
    SparseCholesky(SparseCholesky &&) noexcept;
    SparseCholesky &operator=(SparseCholesky &&) noexcept;

    /// Factors H + shift I. Returns false when it is not positive definite.
    bool factorize(const SparseMat &H, double shift = 0);
    Eigen::VectorXd solve(const Eigen::VectorXd &rhs) const;
    int num_analyses() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Smallest beta in {0} U {beta_start 2^k} for which H + beta I factors;
/// leaves the factorization in chol. Throws SolverFailure when beta exceeds
/// 1e8 max(||H||_inf, 1).
double force_spd(const SparseMat &H, SparseCholesky &chol, double beta_start = 1e-8);

/// H + beta I with beta chosen as above.
SparseMat force_spd(const SparseMat &H, double *beta = nullptr);

} // namespace flatcell
