#pragma once

#include <cstddef>
#include <vector>

namespace reve::linalg {

/// Small dense row-major matrix used by the SVD routines. Decoder matrices
/// here have at most ~100 rows, so O(k^2 d) algorithms are fine.
struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}
  Mat(std::size_t r, std::size_t c, std::vector<double> values);

  double& at(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
  std::size_t size() const { return a.size(); }
};

Mat matmul(const Mat& x, const Mat& y);
Mat transpose(const Mat& x);
double max_abs(const Mat& x);

/// W = U diag(sigma) V^T with only the singular values above
/// rank_tolerance * sigma_max retained. U is k x r, V is d x r, both with
/// orthonormal columns; sigma is descending.
struct CompactSvd {
  Mat u;
  std::vector<double> sigma;
  Mat v;
  std::size_t rank = 0;
  double rank_tolerance = 0.0;
};

/// P = V V^T, the orthogonal projection onto the complement of ker(W).
struct ProjectionMatrix {
  Mat p;  // d x d, symmetric, idempotent
};

/// Compact SVD of a k x d matrix via the k x k Gram matrix W W^T:
/// cyclic Jacobi eigendecomposition, sigma = sqrt(eigenvalues),
/// V = W^T U diag(1/sigma) re-orthonormalized by modified Gram-Schmidt.
/// Columns of U are signed so their largest-magnitude entry is non-negative.
CompactSvd compact_svd(const Mat& w, double rank_tolerance = 1e-7);

ProjectionMatrix kernel_complement_projection(const CompactSvd& svd, std::size_t dim);

/// Symmetric eigendecomposition by cyclic Jacobi rotations; returns
/// eigenvalues (unsorted) and fills `vectors` with eigenvectors as columns.
/// Converged when the largest off-diagonal entry is <= 1e-12 * trace.
std::vector<double> jacobi_eigen_symmetric(Mat a, Mat& vectors);

}  // namespace reve::linalg
