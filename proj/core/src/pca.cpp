#include "calf/pca.hpp"

#include <algorithm>
#include <cmath>

#include "calf/log.hpp"
#include "calf/symmetric_eigen.hpp"

namespace calf {

template <std::floating_point T>
std::optional<std::size_t> WordEmbeddingDict<T>::find(const std::string& token) const {
  auto it = std::find(tokens.begin(), tokens.end(), token);
  if (it == tokens.end()) return std::nullopt;
  return static_cast<std::size_t>(it - tokens.begin());
}

double PcaSpectrum::total_variance() const {
  double t = 0.0;
  for (double v : variances) t += std::max(v, 0.0);
  return t;
}

double PcaSpectrum::explained_variance_ratio(std::size_t d) const {
  const double total = total_variance();
  if (total <= 0.0) return 0.0;
  double kept = 0.0;
  for (std::size_t i = 0; i < std::min(d, variances.size()); ++i) kept += std::max(variances[i], 0.0);
  return std::min(kept / total, 1.0);
}

template <std::floating_point T>
PcaSpectrum principal_spectrum(const Tensor<T>& dictionary) {
  if (dictionary.rank() != 2) {
    throw DimensionError("PCA needs a |A| x M dictionary, got " + shape_string(dictionary.shape()));
  }
  const std::size_t rows = dictionary.rows();
  const std::size_t m = dictionary.cols();
  if (rows < 2 || m == 0) throw UsageError("PCA needs at least two dictionary rows");
  auto x = dictionary.data();

  PcaSpectrum s;
  s.samples = rows;
  s.mean.assign(m, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < m; ++c) s.mean[c] += static_cast<double>(x[r * m + c]);
  for (auto& v : s.mean) v /= static_cast<double>(rows);

  // Upper triangle of the centered scatter matrix, then mirror.
  std::vector<double> cov(m * m, 0.0);
  std::vector<double> centered(m);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < m; ++c) centered[c] = static_cast<double>(x[r * m + c]) - s.mean[c];
    for (std::size_t i = 0; i < m; ++i) {
      const double ci = centered[i];
      if (ci == 0.0) continue;
      double* row = cov.data() + i * m;
      for (std::size_t j = i; j < m; ++j) row[j] += ci * centered[j];
    }
  }
  const double denom = static_cast<double>(rows - 1);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i; j < m; ++j) {
      cov[i * m + j] /= denom;
      cov[j * m + i] = cov[i * m + j];
    }
  }

  auto eig = symmetric_eigen(cov, m);
  s.variances = eig.values;
  s.directions.assign(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    // Column i of the eigenvector matrix becomes row i, sign-normalized.
    std::size_t arg = 0;
    for (std::size_t r = 1; r < m; ++r) {
      if (std::abs(eig.vectors[r * m + i]) > std::abs(eig.vectors[arg * m + i])) arg = r;
    }
    const double sign = eig.vectors[arg * m + i] < 0.0 ? -1.0 : 1.0;
    for (std::size_t r = 0; r < m; ++r) s.directions[i * m + r] = sign * eig.vectors[r * m + i];
  }
  const double top = s.variances.empty() ? 0.0 : std::max(s.variances.front(), 0.0);
  const double threshold = top * 1e-10;
  s.rank = 0;
  for (double v : s.variances) {
    if (v > threshold && top > 0.0) ++s.rank;
  }
  return s;
}

template <std::floating_point T>
PrincipalEmbeddings<T> principal_from_spectrum(const PcaSpectrum& spectrum, std::size_t d,
                                               const PcaOptions& options) {
  const std::size_t m = spectrum.mean.size();
  if (d == 0 || d > std::min(spectrum.samples, m)) {
    throw UsageError("principal component count " + std::to_string(d) + " outside [1, " +
                     std::to_string(std::min(spectrum.samples, m)) + "]");
  }
  std::size_t kept = d;
  if (spectrum.rank < d) {
    kept = std::max<std::size_t>(spectrum.rank, 1);
    warn("dictionary has rank " + std::to_string(spectrum.rank) + "; returning " +
         std::to_string(kept) + " of the " + std::to_string(d) + " requested components");
  }
  PrincipalEmbeddings<T> p;
  std::vector<T> comps(kept * m);
  std::vector<T> vars(kept);
  for (std::size_t i = 0; i < kept; ++i) {
    const double var = std::max(spectrum.variances[i], 0.0);
    vars[i] = static_cast<T>(var);
    const double factor = options.variance_scaled ? std::sqrt(var) : 1.0;
    for (std::size_t c = 0; c < m; ++c)
      comps[i * m + c] = static_cast<T>(factor * spectrum.directions[i * m + c]);
  }
  p.components = Tensor<T>({kept, m}, std::move(comps));
  p.variances = Tensor<T>({kept}, std::move(vars));
  p.mean = Tensor<T>({m}, std::vector<T>(spectrum.mean.begin(), spectrum.mean.end()));
  p.explained_variance_ratio = spectrum.explained_variance_ratio(kept);
  return p;
}

template <std::floating_point T>
PrincipalEmbeddings<T> extract_principal_embeddings(const Tensor<T>& dictionary, std::size_t d,
                                                    const PcaOptions& options) {
  if (dictionary.rank() == 2) {
    const std::size_t limit = std::min(dictionary.rows(), dictionary.cols());
    if (d == 0 || d > limit) {
      throw UsageError("principal component count " + std::to_string(d) + " outside [1, " +
                       std::to_string(limit) + "]");
    }
  }
  return principal_from_spectrum<T>(principal_spectrum(dictionary), d, options);
}

template <std::floating_point T>
Container to_container(const PrincipalEmbeddings<T>& principal) {
  Container c;
  c.add(std::string(principal_names::components), principal.components);
  c.add(std::string(principal_names::mean), principal.mean);
  c.add(std::string(principal_names::variances), principal.variances);
  c.add(std::string(principal_names::evr),
        Tensor<T>::scalar(static_cast<T>(principal.explained_variance_ratio)));
  return c;
}

template <std::floating_point T>
PrincipalEmbeddings<T> principal_from_container(const Container& container) {
  PrincipalEmbeddings<T> p;
  p.components = container.at(principal_names::components).template to_tensor<T>();
  p.mean = container.at(principal_names::mean).template to_tensor<T>();
  p.variances = container.at(principal_names::variances).template to_tensor<T>();
  const auto evr = container.at(principal_names::evr).template to_tensor<double>();
  if (p.components.rank() != 2 || p.mean.numel() != p.components.cols() ||
      p.variances.numel() != p.components.rows() || evr.numel() != 1) {
    throw ConfigError("inconsistent principal-embedding shapes: components " +
                      shape_string(p.components.shape()) + ", mean " +
                      shape_string(p.mean.shape()) + ", variances " +
                      shape_string(p.variances.shape()));
  }
  p.explained_variance_ratio = evr.item();
  return p;
}

template <std::floating_point T>
void save_principal(const std::filesystem::path& path, const PrincipalEmbeddings<T>& principal) {
  to_container(principal).save(path);
}

template <std::floating_point T>
PrincipalEmbeddings<T> load_principal(const std::filesystem::path& path) {
  return principal_from_container<T>(Container::load(path));
}

template struct WordEmbeddingDict<float>;
template struct WordEmbeddingDict<double>;

#define CALF_INSTANTIATE_PCA(T)                                                                 \
  template PcaSpectrum principal_spectrum<T>(const Tensor<T>&);                                 \
  template PrincipalEmbeddings<T> principal_from_spectrum<T>(const PcaSpectrum&, std::size_t,   \
                                                             const PcaOptions&);                \
  template PrincipalEmbeddings<T> extract_principal_embeddings<T>(const Tensor<T>&,             \
                                                                  std::size_t,                  \
                                                                  const PcaOptions&);           \
  template Container to_container<T>(const PrincipalEmbeddings<T>&);                            \
  template PrincipalEmbeddings<T> principal_from_container<T>(const Container&);                \
  template void save_principal<T>(const std::filesystem::path&, const PrincipalEmbeddings<T>&); \
  template PrincipalEmbeddings<T> load_principal<T>(const std::filesystem::path&);

CALF_INSTANTIATE_PCA(float)
CALF_INSTANTIATE_PCA(double)

#undef CALF_INSTANTIATE_PCA

}  // namespace calf
