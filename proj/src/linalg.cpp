#include "reve/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace reve::linalg {

Mat::Mat(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), a(std::move(values)) {
  if (a.size() != r * c) {
    throw std::invalid_argument("Mat: buffer size " + std::to_string(a.size()) +
                                " does not match " + std::to_string(r) + "x" + std::to_string(c));
  }
}

Mat matmul(const Mat& x, const Mat& y) {
  if (x.cols != y.rows) throw std::invalid_argument("Mat::matmul: inner extent mismatch");
  Mat out(x.rows, y.cols);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t p = 0; p < x.cols; ++p) {
      const double v = x.at(i, p);
      if (v == 0.0) continue;
      for (std::size_t j = 0; j < y.cols; ++j) out.at(i, j) += v * y.at(p, j);
    }
  return out;
}

Mat transpose(const Mat& x) {
  Mat out(x.cols, x.rows);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < x.cols; ++j) out.at(j, i) = x.at(i, j);
  return out;
}

double max_abs(const Mat& x) {
  double m = 0.0;
  for (double v : x.a) m = std::max(m, std::fabs(v));
  return m;
}

std::vector<double> jacobi_eigen_symmetric(Mat a, Mat& vectors) {
  if (a.rows != a.cols) throw std::invalid_argument("jacobi: matrix not square");
  const std::size_t n = a.rows;
  vectors = Mat(n, n);
  for (std::size_t i = 0; i < n; ++i) vectors.at(i, i) = 1.0;

  double trace = 0.0;
  for (std::size_t i = 0; i < n; ++i) trace += std::fabs(a.at(i, i));
  const double stop = 1e-12 * std::max(trace, 1e-300);

  const int max_sweeps = 64;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off = std::max(off, std::fabs(a.at(p, q)));
    if (off <= stop) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a.at(p, q);
        if (std::fabs(apq) <= stop * 1e-3) continue;
        const double app = a.at(p, p);
        const double aqq = a.at(q, q);
        // rotation angle zeroing a[p][q]
        const double theta = 0.5 * (aqq - app) / apq;
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(1.0 + theta * theta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;

        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a.at(k, p);
          const double akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a.at(p, k);
          const double aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = vectors.at(k, p);
          const double vkq = vectors.at(k, q);
          vectors.at(k, p) = c * vkp - s * vkq;
          vectors.at(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<double> eigenvalues(n);
  for (std::size_t i = 0; i < n; ++i) eigenvalues[i] = a.at(i, i);
  return eigenvalues;
}

CompactSvd compact_svd(const Mat& w, double rank_tolerance) {
  for (double v : w.a) {
    if (!std::isfinite(v)) throw std::invalid_argument("compact_svd: non-finite entry in matrix");
  }
  const std::size_t k = w.rows;
  const std::size_t d = w.cols;
  if (k == 0 || d == 0) throw std::invalid_argument("compact_svd: empty matrix");

  CompactSvd out;
  out.rank_tolerance = rank_tolerance;

  // Gram matrix W W^T is k x k; k = |C| stays small.
  Mat gram(k, k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i; j < k; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < d; ++p) acc += w.at(i, p) * w.at(j, p);
      gram.at(i, j) = acc;
      gram.at(j, i) = acc;
    }

  Mat eigvecs;
  std::vector<double> eigvals = jacobi_eigen_symmetric(gram, eigvecs);

  // descending by eigenvalue; round-off can leave tiny negatives
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return eigvals[x] > eigvals[y]; });

  const double sigma_max = eigvals[order[0]] > 0.0 ? std::sqrt(eigvals[order[0]]) : 0.0;
  const double cutoff = rank_tolerance * sigma_max;

  std::vector<std::size_t> kept;
  for (std::size_t idx : order) {
    const double lam = eigvals[idx];
    if (lam <= 0.0) continue;
    const double sv = std::sqrt(lam);
    if (sv <= cutoff) continue;
    kept.push_back(idx);
  }
  const std::size_t r = kept.size();
  out.rank = r;
  out.u = Mat(k, r);
  out.v = Mat(d, r);
  out.sigma.resize(r);
  if (r == 0) return out;

  for (std::size_t j = 0; j < r; ++j) {
    out.sigma[j] = std::sqrt(eigvals[kept[j]]);
    for (std::size_t i = 0; i < k; ++i) out.u.at(i, j) = eigvecs.at(i, kept[j]);
  }

  // sign convention: largest-magnitude entry of each U column non-negative
  for (std::size_t j = 0; j < r; ++j) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < k; ++i)
      if (std::fabs(out.u.at(i, j)) > std::fabs(out.u.at(arg, j))) arg = i;
    if (out.u.at(arg, j) < 0.0)
      for (std::size_t i = 0; i < k; ++i) out.u.at(i, j) = -out.u.at(i, j);
  }

  // V = W^T U diag(1/sigma)
  for (std::size_t p = 0; p < d; ++p)
    for (std::size_t j = 0; j < r; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < k; ++i) acc += w.at(i, p) * out.u.at(i, j);
      out.v.at(p, j) = acc / out.sigma[j];
    }

  // modified Gram-Schmidt pass keeps V orthonormal when singular values
  // are close or small
  for (std::size_t j = 0; j < r; ++j) {
    for (std::size_t prev = 0; prev < j; ++prev) {
      double dot = 0.0;
      for (std::size_t p = 0; p < d; ++p) dot += out.v.at(p, prev) * out.v.at(p, j);
      for (std::size_t p = 0; p < d; ++p) out.v.at(p, j) -= dot * out.v.at(p, prev);
    }
    double norm = 0.0;
    for (std::size_t p = 0; p < d; ++p) norm += out.v.at(p, j) * out.v.at(p, j);
    norm = std::sqrt(norm);
    if (norm > 0.0)
      for (std::size_t p = 0; p < d; ++p) out.v.at(p, j) /= norm;
  }

  return out;
}

ProjectionMatrix kernel_complement_projection(const CompactSvd& svd, std::size_t dim) {
  ProjectionMatrix proj;
  proj.p = Mat(dim, dim);
  const std::size_t r = svd.rank;
  if (r == 0) return proj;  // everything is kernel
  if (svd.v.rows != dim) {
    throw std::invalid_argument("kernel_complement_projection: dimension mismatch");
  }
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = i; j < dim; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < r; ++c) acc += svd.v.at(i, c) * svd.v.at(j, c);
      proj.p.at(i, j) = acc;
      proj.p.at(j, i) = acc;
    }
  return proj;
}

}  // namespace reve::linalg
