#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <string>
#include <vector>

#include "todi/errors.hpp"
#include "todi/rng.hpp"

namespace todi {

// Principal components by orthogonal iteration on the sample covariance.
// Works matrix-free (covariance-vector products through the data matrix), so
// wide inputs such as expression profiles stay cheap.
struct PcaModel {
  int dim = 0;
  int n_components = 0;
  std::vector<double> mean;                 // dim
  std::vector<std::vector<double>> components;  // n_components rows of dim
  std::vector<double> explained_variance;   // descending
};

namespace detail {

inline void orthonormalize(std::vector<std::vector<double>>& basis) {
  for (std::size_t i = 0; i < basis.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < basis[i].size(); ++k) dot += basis[i][k] * basis[j][k];
      for (std::size_t k = 0; k < basis[i].size(); ++k) basis[i][k] -= dot * basis[j][k];
    }
    double norm = 0.0;
    for (const double v : basis[i]) norm += v * v;
    norm = std::sqrt(norm);
    if (norm < 1e-12) norm = 1.0;  // degenerate direction, keep deterministic
    for (double& v : basis[i]) v /= norm;
  }
}

}  // namespace detail

inline PcaModel pca_fit(const std::vector<std::vector<double>>& rows, int n_components,
                        int iterations = 300) {
  if (rows.empty()) throw ContractError("PCA fit on an empty sample");
  const int n = static_cast<int>(rows.size());
  const int d = static_cast<int>(rows[0].size());
  if (n_components < 1 || n_components > d)
    throw ContractError("PCA component count out of range");
  if (n < n_components) throw ContractError("PCA needs at least as many samples as components");
  PcaModel model;
  model.dim = d;
  model.n_components = n_components;
  model.mean.assign(static_cast<std::size_t>(d), 0.0);
  for (const auto& r : rows) {
    if (static_cast<int>(r.size()) != d) throw ContractError("ragged PCA rows");
    for (int j = 0; j < d; ++j) model.mean[static_cast<std::size_t>(j)] += r[static_cast<std::size_t>(j)];
  }
  for (auto& m : model.mean) m /= n;

  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  // cov * v computed as X^T (X v) / (n - 1) over centered rows.
  auto cov_apply = [&](const std::vector<double>& v) {
    std::vector<double> out(static_cast<std::size_t>(d), 0.0);
    for (const auto& r : rows) {
      double proj = 0.0;
      for (int j = 0; j < d; ++j)
        proj += (r[static_cast<std::size_t>(j)] - model.mean[static_cast<std::size_t>(j)]) *
                v[static_cast<std::size_t>(j)];
      for (int j = 0; j < d; ++j)
        out[static_cast<std::size_t>(j)] +=
            proj * (r[static_cast<std::size_t>(j)] - model.mean[static_cast<std::size_t>(j)]);
    }
    for (auto& o : out) o /= denom;
    return out;
  };

  Rng rng(7);
  std::vector<std::vector<double>> basis(static_cast<std::size_t>(n_components),
                                         std::vector<double>(static_cast<std::size_t>(d)));
  for (auto& b : basis)
    for (auto& v : b) v = rng.gauss();
  detail::orthonormalize(basis);
  for (int it = 0; it < iterations; ++it) {
    for (auto& b : basis) b = cov_apply(b);
    detail::orthonormalize(basis);
  }
  model.components = basis;
  model.explained_variance.clear();
  for (const auto& b : basis) {
    const auto cb = cov_apply(b);
    double rayleigh = 0.0;
    for (int j = 0; j < d; ++j) rayleigh += b[static_cast<std::size_t>(j)] * cb[static_cast<std::size_t>(j)];
    model.explained_variance.push_back(rayleigh);
  }
  // Orthogonal iteration converges with leading directions first; enforce the
  // ordering anyway so ties settle deterministically.
  for (std::size_t i = 0; i + 1 < model.explained_variance.size(); ++i)
    for (std::size_t j = i + 1; j < model.explained_variance.size(); ++j)
      if (model.explained_variance[j] > model.explained_variance[i]) {
        std::swap(model.explained_variance[i], model.explained_variance[j]);
        std::swap(model.components[i], model.components[j]);
      }
  return model;
}

inline std::vector<double> pca_project(const PcaModel& model, const std::vector<double>& row) {
  if (static_cast<int>(row.size()) != model.dim)
    throw ContractError("PCA projection dimension mismatch");
  std::vector<double> out(static_cast<std::size_t>(model.n_components), 0.0);
  for (int k = 0; k < model.n_components; ++k)
    for (int j = 0; j < model.dim; ++j)
      out[static_cast<std::size_t>(k)] +=
          model.components[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] *
          (row[static_cast<std::size_t>(j)] - model.mean[static_cast<std::size_t>(j)]);
  return out;
}

// Fits on the union of both clouds and writes one labelled row per sample,
// e.g. "pc1,pc2,pc3,kind" with kind in {original, reconstructed}.
inline PcaModel pca_export_csv(const std::string& path,
                               const std::vector<std::vector<double>>& original,
                               const std::vector<std::vector<double>>& reconstructed,
                               int n_components = 3) {
  std::vector<std::vector<double>> all = original;
  all.insert(all.end(), reconstructed.begin(), reconstructed.end());
  const PcaModel model = pca_fit(all, n_components);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (int k = 0; k < n_components; ++k) out << "pc" << (k + 1) << ",";
  out << "kind\n";
  auto emit = [&](const std::vector<std::vector<double>>& rows, const char* kind) {
    for (const auto& r : rows) {
      const auto p = pca_project(model, r);
      for (const double v : p) out << v << ",";
      out << kind << "\n";
    }
  };
  emit(original, "original");
  emit(reconstructed, "reconstructed");
  if (!out) throw IoError("failed writing " + path);
  return model;
}

}  // namespace todi
