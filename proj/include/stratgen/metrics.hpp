#pragma once

#include <vector>

#include "stratgen/tensor.hpp"

namespace stratgen {

// Peak signal-to-noise ratio in dB for images in [0,1].
double psnr(const Tensor& a, const Tensor& b);

// Gaussian statistics of a set of feature vectors.
struct GaussianStats {
  std::vector<double> mean;          // [dim]
  std::vector<double> cov;           // [dim*dim], row-major symmetric
  int dim = 0;
};

GaussianStats fit_gaussian(const std::vector<std::vector<float>>& features);

// Frechet distance^2 between two Gaussians; the cross-term matrix square
// root goes through a symmetric eigendecomposition with eigenvalues clamped
// at zero.
double frechet_from_stats(const GaussianStats& a, const GaussianStats& b);

// Fixed seed-pinned feature map: 64-dim random projection of the image
// followed by tanh. The projection seed is a constant of the metric.
std::vector<float> frechet_features(const Tensor& image);

// Frechet distance between feature Gaussians of two image sets.
double toy_frechet(const std::vector<Tensor>& real, const std::vector<Tensor>& generated);

// Jacobi eigendecomposition of a symmetric matrix (row-major n*n).
// Fills eigenvalues[n] and eigenvectors[n*n] (columns are eigenvectors).
void jacobi_eigen(std::vector<double> matrix, int n, std::vector<double>& eigenvalues,
                  std::vector<double>& eigenvectors);

}  // namespace stratgen
