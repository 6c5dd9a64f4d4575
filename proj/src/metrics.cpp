#include "stratgen/metrics.hpp"

#include <cmath>

namespace stratgen {

double psnr(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) throw DimensionError("psnr: shape mismatch");
  double mse = 0.0;
  const float* pa = a.ptr();
  const float* pb = b.ptr();
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pa[i]) - pb[i];
    mse += d * d;
  }
  mse /= static_cast<double>(n);
  if (mse <= 0.0) return 99.0;  // identical images; cap instead of infinity
  return 10.0 * std::log10(1.0 / mse);
}

GaussianStats fit_gaussian(const std::vector<std::vector<float>>& features) {
  if (features.size() < 2) throw ContractError("fit_gaussian: need at least 2 samples");
  const int dim = static_cast<int>(features[0].size());
  const double n = static_cast<double>(features.size());
  GaussianStats st;
  st.dim = dim;
  st.mean.assign(dim, 0.0);
  st.cov.assign(static_cast<size_t>(dim) * dim, 0.0);
  for (const auto& f : features) {
    if (static_cast<int>(f.size()) != dim) throw DimensionError("fit_gaussian: ragged features");
    for (int i = 0; i < dim; ++i) st.mean[i] += f[i];
  }
  for (int i = 0; i < dim; ++i) st.mean[i] /= n;
  for (const auto& f : features)
    for (int i = 0; i < dim; ++i) {
      const double di = f[i] - st.mean[i];
      for (int j = 0; j < dim; ++j) st.cov[static_cast<size_t>(i) * dim + j] +=
          di * (f[j] - st.mean[j]);
    }
  for (double& v : st.cov) v /= (n - 1.0);
  return st;
}

void jacobi_eigen(std::vector<double> a, int n, std::vector<double>& w,
                  std::vector<double>& v) {
  v.assign(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[static_cast<size_t>(i) * n + i] = 1.0;
  auto at = [&](int i, int j) -> double& { return a[static_cast<size_t>(i) * n + j]; };
  auto vt = [&](int i, int j) -> double& { return v[static_cast<size_t>(i) * n + j]; };

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
    if (off < 1e-22) break;
    for (int p = 0; p < n - 1; ++p)
      for (int q = p + 1; q < n; ++q) {
        if (std::fabs(at(p, q)) < 1e-300) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * at(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = vt(k, p), vkq = vt(k, q);
          vt(k, p) = c * vkp - s * vkq;
          vt(k, q) = s * vkp + c * vkq;
        }
      }
  }
  w.assign(n, 0.0);
  for (int i = 0; i < n; ++i) w[i] = at(i, i);
}

namespace {

// B = M * M' for symmetric psd M given by its eigen pair, eigenvalues clamped.
std::vector<double> psd_sqrt(const std::vector<double>& cov, int n) {
  std::vector<double> w, v;
  jacobi_eigen(cov, n, w, v);
  for (double& x : w) x = x < 0.0 ? 0.0 : std::sqrt(x);
  std::vector<double> out(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k < n; ++k)
        s += v[static_cast<size_t>(i) * n + k] * w[k] * v[static_cast<size_t>(j) * n + k];
      out[static_cast<size_t>(i) * n + j] = s;
    }
  return out;
}

std::vector<double> matmul_sq(const std::vector<double>& a, const std::vector<double>& b,
                              int n) {
  std::vector<double> c(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) {
      const double aik = a[static_cast<size_t>(i) * n + k];
      for (int j = 0; j < n; ++j)
        c[static_cast<size_t>(i) * n + j] += aik * b[static_cast<size_t>(k) * n + j];
    }
  return c;
}

}  // namespace

double frechet_from_stats(const GaussianStats& a, const GaussianStats& b) {
  if (a.dim != b.dim) throw DimensionError("frechet_from_stats: dim mismatch");
  const int n = a.dim;
  double mean_term = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = a.mean[i] - b.mean[i];
    mean_term += d * d;
  }
  double tr_a = 0.0, tr_b = 0.0;
  for (int i = 0; i < n; ++i) {
    tr_a += a.cov[static_cast<size_t>(i) * n + i];
    tr_b += b.cov[static_cast<size_t>(i) * n + i];
  }
  // tr((Sa Sb)^1/2) = tr((sqrt(Sa) Sb sqrt(Sa))^1/2), symmetric psd-safe
  std::vector<double> ra = psd_sqrt(a.cov, n);
  std::vector<double> inner = matmul_sq(matmul_sq(ra, b.cov, n), ra, n);
  // symmetrize against roundoff before the second eigen pass
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double m = 0.5 * (inner[static_cast<size_t>(i) * n + j] +
                              inner[static_cast<size_t>(j) * n + i]);
      inner[static_cast<size_t>(i) * n + j] = m;
      inner[static_cast<size_t>(j) * n + i] = m;
    }
  std::vector<double> w, v;
  jacobi_eigen(inner, n, w, v);
  double tr_cross = 0.0;
  for (double x : w) tr_cross += std::sqrt(x < 0.0 ? 0.0 : x);
  double d2 = mean_term + tr_a + tr_b - 2.0 * tr_cross;
  return d2 < 0.0 ? 0.0 : d2;
}

namespace {
constexpr int kFeatureDim = 64;
constexpr uint64_t kFeatureSeed = 0x7f31u;  // pinned: the metric's identity
}  // namespace

namespace {
// Projection matrix for one input size, derived from the pinned seed.
const std::vector<float>& projection_for(int64_t n) {
  static std::vector<std::pair<int64_t, std::vector<float>>> cache;
  for (const auto& entry : cache)
    if (entry.first == n) return entry.second;
  Rng rng(splitmix64(kFeatureSeed ^ static_cast<uint64_t>(n)));
  const float scl = 1.0f / std::sqrt(static_cast<float>(n));
  std::vector<float> w(static_cast<size_t>(kFeatureDim) * n);
  for (float& v : w) v = static_cast<float>(rng.normal()) * scl;
  cache.emplace_back(n, std::move(w));
  return cache.back().second;
}
}  // namespace

std::vector<float> frechet_features(const Tensor& image) {
  if (image.ndim() != 3 || image.shape[2] != 3)
    throw DimensionError("frechet_features: expected [H,W,3]");
  const int64_t n = image.size();
  const std::vector<float>& w = projection_for(n);
  std::vector<float> out(kFeatureDim, 0.0f);
  const float* px = image.ptr();
  for (int f = 0; f < kFeatureDim; ++f) {
    double acc = 0.0;
    const float* wf = w.data() + static_cast<int64_t>(f) * n;
    for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(px[i]) * wf[i];
    out[f] = std::tanh(static_cast<float>(4.0 * acc));
  }
  return out;
}

double toy_frechet(const std::vector<Tensor>& real, const std::vector<Tensor>& generated) {
  if (real.size() < 2 || generated.size() < 2)
    throw ContractError("toy_frechet: need at least 2 images per side");
  std::vector<std::vector<float>> fa, fb;
  fa.reserve(real.size());
  fb.reserve(generated.size());
  for (const Tensor& t : real) fa.push_back(frechet_features(t));
  for (const Tensor& t : generated) fb.push_back(frechet_features(t));
  return frechet_from_stats(fit_gaussian(fa), fit_gaussian(fb));
}

}  // namespace stratgen
