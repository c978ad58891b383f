#pragma once

// Data-parallel inner loops. Each kernel has a plain serial reference and an
// OpenMP variant that must produce bit-identical output; the serial versions
// stay in the library so tests and the benchmark can compare the two.

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "metaspatial/geometry.hpp"

namespace metaspatial::kernels {

using IndexPair = std::pair<std::size_t, std::size_t>;

// All (i, j), i < j, whose boxes overlap with positive volume, sorted.
std::vector<IndexPair> overlap_pairs_serial(std::span<const Aabb> boxes);
std::vector<IndexPair> overlap_pairs_omp(std::span<const Aabb> boxes);

// One result per scene, in scene order.
std::vector<std::vector<IndexPair>> overlap_pairs_batch_serial(
    std::span<const std::vector<Aabb>> scenes);
std::vector<std::vector<IndexPair>> overlap_pairs_batch_omp(
    std::span<const std::vector<Aabb>> scenes);

// out[k] = (adjusted[k] - mean) / std, or 0 everywhere when std < floor.
void normalize_serial(std::span<const double> adjusted, double mean, double std,
                      double floor, std::span<double> out);
void normalize_omp(std::span<const double> adjusted, double mean, double std,
                   double floor, std::span<double> out);

// Per-token pieces of the clipped surrogate with a k3 KL estimate.
struct SurrogateInputs {
  std::span<const double> logprob_new;
  std::span<const double> logprob_old;
  std::span<const double> logprob_ref;
  std::span<const double> advantage;
};

struct SurrogateOutputs {
  std::span<double> ratio;
  std::span<double> policy_term;  // min(r*A, clip(r)*A)
  std::span<double> kl_term;      // exp(d) - d - 1, d = ref - new
};

void surrogate_terms_serial(const SurrogateInputs& in, double epsilon,
                            const SurrogateOutputs& out);
void surrogate_terms_omp(const SurrogateInputs& in, double epsilon,
                         const SurrogateOutputs& out);

}  // namespace metaspatial::kernels
