#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <stdexcept>
#include <string>

namespace flatcell {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;
using Vec2i = Eigen::Vector2i;
using SparseMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input: bad files, parameter dimension mismatches, invalid configs.
class InvalidInput : public Error {
public:
    using Error::Error;
};

/// The implicit field or the marching-squares extraction could not produce a mesh.
class MeshingError : public Error {
public:
    using Error::Error;
};

/// A state with an inverted element or an interpenetrating contact pair.
class InadmissibleState : public Error {
public:
    using Error::Error;
};

/// Newton / penalty / optimizer loops that did not converge.
class SolverFailure : public Error {
public:
    using Error::Error;
};

} // namespace flatcell
