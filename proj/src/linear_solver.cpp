#include "flatcell/linear_solver.hpp"

#include <Eigen/CholmodSupport>

#include <algorithm>
#include <cmath>
#include <vector>

namespace flatcell {

struct SparseCholesky::Impl {
    // Simplicial: the supernodal path goes through BLAS, whose autodetected kernels are not trusted here.
    Eigen::CholmodSimplicialLLT<SparseMat, Eigen::Lower> llt;
    std::vector<int> outer, inner;
    bool analyzed = false;
    int analyses = 0;

    Impl() { llt.cholmod().print = 0; }

    bool same_pattern(const SparseMat &H) const {
        if (!analyzed || int(outer.size()) != H.outerSize() + 1 || int(inner.size()) != H.nonZeros()) return false;
        return std::equal(outer.begin(), outer.end(), H.outerIndexPtr()) &&
               std::equal(inner.begin(), inner.end(), H.innerIndexPtr());
    }
};

SparseCholesky::SparseCholesky() : impl_(std::make_unique<Impl>()) {}
SparseCholesky::~SparseCholesky() = default;
SparseCholesky::SparseCholesky(SparseCholesky &&) noexcept = default;
SparseCholesky &SparseCholesky::operator=(SparseCholesky &&) noexcept = default;

bool SparseCholesky::factorize(const SparseMat &H, double shift) {
    if (!H.isCompressed()) throw InvalidInput("sparse Cholesky expects a compressed matrix");
    if (!impl_->same_pattern(H)) {
        impl_->llt.analyzePattern(H);
        impl_->outer.assign(H.outerIndexPtr(), H.outerIndexPtr() + H.outerSize() + 1);
        impl_->inner.assign(H.innerIndexPtr(), H.innerIndexPtr() + H.nonZeros());
        impl_->analyzed = true;
        ++impl_->analyses;
    }
    impl_->llt.setShift(shift);
    impl_->llt.factorize(H);
    return impl_->llt.info() == Eigen::Success;
}

Eigen::VectorXd SparseCholesky::solve(const Eigen::VectorXd &rhs) const {
    Eigen::VectorXd x = impl_->llt.solve(rhs);
    if (impl_->llt.info() != Eigen::Success) throw SolverFailure("sparse Cholesky solve failed");
    return x;
}

int SparseCholesky::num_analyses() const { return impl_->analyses; }

namespace {
double inf_norm(const SparseMat &H) {
    Eigen::VectorXd rows = Eigen::VectorXd::Zero(H.rows());
    for (int k = 0; k < H.outerSize(); ++k)
        for (SparseMat::InnerIterator it(H, k); it; ++it) rows[it.row()] += std::abs(it.value());
    return rows.size() ? rows.maxCoeff() : 0.0;
}
} // namespace

double force_spd(const SparseMat &H, SparseCholesky &chol, double beta_start) {
    if (H.rows() != H.cols()) throw InvalidInput("force_spd: matrix is not square");
    if (!(beta_start > 0)) throw InvalidInput("force_spd: beta_start must be positive");
    for (int k = 0; k < H.outerSize(); ++k)
        for (SparseMat::InnerIterator it(H, k); it; ++it)
            if (!std::isfinite(it.value())) throw SolverFailure("force_spd: Hessian has non-finite entries");
    if (chol.factorize(H)) return 0;
    const double limit = 1e8 * std::max(inf_norm(H), 1.0);
    for (double beta = beta_start; beta <= limit; beta *= 2)
        if (chol.factorize(H, beta)) return beta;
    throw SolverFailure("force_spd: Hessian is too ill-conditioned to regularize");
}

SparseMat force_spd(const SparseMat &H, double *beta) {
    SparseCholesky chol;
    SparseMat Hc = H;
    Hc.makeCompressed();
    const double b = force_spd(Hc, chol);
    if (beta) *beta = b;
    SparseMat I(H.rows(), H.cols());
    I.setIdentity();
    return SparseMat(H + b * I);
}

} // namespace flatcell
