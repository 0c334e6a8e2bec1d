#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "calf/container.hpp"
#include "calf/tensor.hpp"

namespace calf {

/// Token-embedding dictionary D (|A| x M) of the source language model.
template <std::floating_point T>
struct WordEmbeddingDict {
  Tensor<T> matrix;
  std::vector<std::string> tokens;  // optional, row-aligned

  std::size_t vocab_size() const { return matrix.rows(); }
  /// Row index of `token`, if the token list is present and contains it.
  std::optional<std::size_t> find(const std::string& token) const;
};

/// Full eigen-spectrum of the dictionary's row covariance.
struct PcaSpectrum {
  std::vector<double> variances;  // descending, length M
  std::vector<double> mean;       // column mean, length M
  std::vector<double> directions; // M x M row-major; row i is principal direction i
  std::size_t rank = 0;           // components above the numerical threshold
  std::size_t samples = 0;

  double total_variance() const;
  /// Retained-variance fraction of the leading `d` components.
  double explained_variance_ratio(std::size_t d) const;
};

template <std::floating_point T>
PcaSpectrum principal_spectrum(const Tensor<T>& dictionary);

struct PcaOptions {
  /// Scale each direction by its standard deviation (sigma / sqrt(|A| - 1)).
  bool variance_scaled = true;
};

/// The d x M principal word embeddings plus metadata.
template <std::floating_point T>
struct PrincipalEmbeddings {
  Tensor<T> components;  // d x M
  Tensor<T> mean;        // M
  Tensor<T> variances;   // d
  double explained_variance_ratio = 0.0;

  std::size_t count() const { return components.rows(); }
  std::size_t width() const { return components.cols(); }
};

/// Centers D, takes the top-d principal directions of its rows and returns
/// them (variance-scaled by default). Requires 1 <= d <= min(|A|, M); if the
/// centered dictionary has rank < d only the available components are
/// returned and a warning is issued. Each direction's sign is fixed so that
/// its largest-magnitude entry is positive.
template <std::floating_point T>
PrincipalEmbeddings<T> extract_principal_embeddings(const Tensor<T>& dictionary, std::size_t d,
                                                    const PcaOptions& options = {});

template <std::floating_point T>
PrincipalEmbeddings<T> principal_from_spectrum(const PcaSpectrum& spectrum, std::size_t d,
                                               const PcaOptions& options = {});

namespace principal_names {
inline constexpr std::string_view components = "principal.components";
inline constexpr std::string_view mean = "principal.mean";
inline constexpr std::string_view variances = "principal.variances";
inline constexpr std::string_view evr = "principal.evr";
}  // namespace principal_names

template <std::floating_point T>
Container to_container(const PrincipalEmbeddings<T>& principal);

template <std::floating_point T>
PrincipalEmbeddings<T> principal_from_container(const Container& container);

template <std::floating_point T>
void save_principal(const std::filesystem::path& path, const PrincipalEmbeddings<T>& principal);

template <std::floating_point T>
PrincipalEmbeddings<T> load_principal(const std::filesystem::path& path);

}  // namespace calf
