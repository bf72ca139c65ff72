#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "todi/errors.hpp"
#include "todi/metrics.hpp"
#include "todi/molecule.hpp"

namespace todi {
namespace detail {

// Dense symmetric eigendecomposition via cyclic Jacobi rotations. Matrices
// are row-major d x d doubles. Returns eigenvalues and the orthogonal V with
// A = V diag(values) V^T (eigenvector k in column k of V).
struct SymEigen {
  std::vector<double> values;
  std::vector<double> vectors;
};

inline SymEigen jacobi_eigen(std::vector<double> a, int d) {
  SymEigen out;
  out.vectors.assign(static_cast<std::size_t>(d) * static_cast<std::size_t>(d), 0.0);
  for (int i = 0; i < d; ++i) out.vectors[static_cast<std::size_t>(i * d + i)] = 1.0;
  auto at = [&](std::vector<double>& m, int r, int c) -> double& {
    return m[static_cast<std::size_t>(r * d + c)];
  };
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < d; ++p)
      for (int q = p + 1; q < d; ++q) off += at(a, p, q) * at(a, p, q);
    if (off < 1e-24) break;
    for (int p = 0; p < d; ++p) {
      for (int q = p + 1; q < d; ++q) {
        const double apq = at(a, p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (at(a, q, q) - at(a, p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < d; ++k) {
          const double akp = at(a, k, p), akq = at(a, k, q);
          at(a, k, p) = c * akp - s * akq;
          at(a, k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < d; ++k) {
          const double apk = at(a, p, k), aqk = at(a, q, k);
          at(a, p, k) = c * apk - s * aqk;
          at(a, q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < d; ++k) {
          const double vkp = at(out.vectors, k, p), vkq = at(out.vectors, k, q);
          at(out.vectors, k, p) = c * vkp - s * vkq;
          at(out.vectors, k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  out.values.resize(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) out.values[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i * d + i)];
  return out;
}

inline std::vector<double> matmul_square(const std::vector<double>& a,
                                         const std::vector<double>& b, int d) {
  std::vector<double> c(static_cast<std::size_t>(d) * static_cast<std::size_t>(d), 0.0);
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < d; ++k) {
      const double aik = a[static_cast<std::size_t>(i * d + k)];
      if (aik == 0.0) continue;
      for (int j = 0; j < d; ++j)
        c[static_cast<std::size_t>(i * d + j)] += aik * b[static_cast<std::size_t>(k * d + j)];
    }
  return c;
}

// V f(lambda) V^T for a decomposition produced above.
inline std::vector<double> rebuild_from_eigen(const SymEigen& e, int d,
                                              const std::function<double(double)>& f) {
  std::vector<double> out(static_cast<std::size_t>(d) * static_cast<std::size_t>(d), 0.0);
  for (int k = 0; k < d; ++k) {
    const double fl = f(e.values[static_cast<std::size_t>(k)]);
    if (fl == 0.0) continue;
    for (int i = 0; i < d; ++i) {
      const double vik = e.vectors[static_cast<std::size_t>(i * d + k)] * fl;
      if (vik == 0.0) continue;
      for (int j = 0; j < d; ++j)
        out[static_cast<std::size_t>(i * d + j)] +=
            vik * e.vectors[static_cast<std::size_t>(j * d + k)];
    }
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Frechet distance between embedding distributions
// ---------------------------------------------------------------------------

struct GaussianStats {
  int dim = 0;
  std::vector<double> mean;   // dim
  std::vector<double> cov;    // dim x dim, row-major, unbiased estimate
};

inline GaussianStats gaussian_stats(const std::vector<std::vector<double>>& rows) {
  if (rows.size() < 2) throw ContractError("need at least two samples for covariance");
  const int n = static_cast<int>(rows.size());
  const int d = static_cast<int>(rows[0].size());
  GaussianStats s;
  s.dim = d;
  s.mean.assign(static_cast<std::size_t>(d), 0.0);
  for (const auto& r : rows) {
    if (static_cast<int>(r.size()) != d) throw ContractError("ragged embedding rows");
    for (int j = 0; j < d; ++j) s.mean[static_cast<std::size_t>(j)] += r[static_cast<std::size_t>(j)];
  }
  for (auto& m : s.mean) m /= n;
  s.cov.assign(static_cast<std::size_t>(d) * static_cast<std::size_t>(d), 0.0);
  for (const auto& r : rows)
    for (int i = 0; i < d; ++i) {
      const double di = r[static_cast<std::size_t>(i)] - s.mean[static_cast<std::size_t>(i)];
      for (int j = 0; j < d; ++j)
        s.cov[static_cast<std::size_t>(i * d + j)] +=
            di * (r[static_cast<std::size_t>(j)] - s.mean[static_cast<std::size_t>(j)]);
    }
  for (auto& c : s.cov) c /= (n - 1);
  return s;
}

// ||mu_g - mu_r||^2 + Tr(S_g + S_r - 2 (S_r^{1/2} S_g S_r^{1/2})^{1/2}), with
// both covariances nudged by 1e-6 I so identical inputs cancel exactly.
inline double frechet_distance(const GaussianStats& g, const GaussianStats& r) {
  if (g.dim != r.dim) throw ContractError("Frechet distance dimension mismatch");
  const int d = g.dim;
  constexpr double kEps = 1e-6;
  std::vector<double> sg = g.cov, sr = r.cov;
  for (int i = 0; i < d; ++i) {
    sg[static_cast<std::size_t>(i * d + i)] += kEps;
    sr[static_cast<std::size_t>(i * d + i)] += kEps;
  }
  double dist = 0.0;
  for (int i = 0; i < d; ++i) {
    const double dm = g.mean[static_cast<std::size_t>(i)] - r.mean[static_cast<std::size_t>(i)];
    dist += dm * dm;
    dist += sg[static_cast<std::size_t>(i * d + i)] + sr[static_cast<std::size_t>(i * d + i)];
  }
  const auto er = detail::jacobi_eigen(sr, d);
  const auto sqrt_r = detail::rebuild_from_eigen(
      er, d, [](double l) { return l > 0.0 ? std::sqrt(l) : 0.0; });
  auto m = detail::matmul_square(detail::matmul_square(sqrt_r, sg, d), sqrt_r, d);
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      const double avg = 0.5 * (m[static_cast<std::size_t>(i * d + j)] +
                                m[static_cast<std::size_t>(j * d + i)]);
      m[static_cast<std::size_t>(i * d + j)] = avg;
      m[static_cast<std::size_t>(j * d + i)] = avg;
    }
  const auto em = detail::jacobi_eigen(m, d);
  for (const double l : em.values)
    if (l > 0.0) dist -= 2.0 * std::sqrt(l);
  return dist;
}

// ---------------------------------------------------------------------------
// FCD over molecule sets
// ---------------------------------------------------------------------------

struct FcdEmbedder {
  int dim = 0;
  std::function<std::vector<double>(const MoleculeGraph&)> embed;
};

// Default embedding: circular fingerprint folded from 2048 to 64 bits by OR,
// shifted to +-0.5 so the embedding cloud is centered.
inline FcdEmbedder default_fcd_embedder() {
  FcdEmbedder e;
  e.dim = 64;
  e.embed = [](const MoleculeGraph& g) {
    const Fingerprint fp = morgan_fingerprint(g);
    std::vector<double> row(64, -0.5);
    for (int bit = 0; bit < fp.width; ++bit)
      if (fp.test(bit)) row[static_cast<std::size_t>(bit % 64)] = 0.5;
    return row;
  };
  return e;
}

inline double fcd(const std::vector<MoleculeGraph>& generated,
                  const std::vector<MoleculeGraph>& reference,
                  const FcdEmbedder& embedder = default_fcd_embedder()) {
  const std::size_t need = static_cast<std::size_t>(embedder.dim) + 2;
  if (generated.size() < need || reference.size() < need)
    throw ContractError("FCD needs at least dim + 2 molecules per set");
  auto embed_all = [&](const std::vector<MoleculeGraph>& mols) {
    std::vector<std::vector<double>> rows;
    rows.reserve(mols.size());
    for (const auto& m : mols) rows.push_back(embedder.embed(m));
    return rows;
  };
  return frechet_distance(gaussian_stats(embed_all(generated)),
                          gaussian_stats(embed_all(reference)));
}

}  // namespace todi
