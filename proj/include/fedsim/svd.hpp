#pragma once

#include <vector>

#include "fedsim/matrix.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

// Singular values of w, sorted descending, via one-sided Jacobi rotations on
// the side with the smaller Gram matrix. Converged when every off-diagonal
// normalized column product falls below 1e-12; throws after 100 sweeps.
std::vector<double> svd_values(const Matrix& w);

// Gram-Schmidt orthonormalization of the rows of w (rows <= cols). A row
// whose residual degenerates below norm 1e-10 is replaced by a fresh Gaussian
// draw from rng before normalization.
Matrix orthonormalize_rows(const Matrix& w, RngStream& rng);

}  // namespace fedsim
