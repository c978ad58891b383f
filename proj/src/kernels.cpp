#include "metaspatial/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace metaspatial::kernels {

namespace {

inline double policy_term(double ratio, double advantage, double epsilon) {
  const double clipped = std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon);
  return std::min(ratio * advantage, clipped * advantage);
}

inline double kl_estimate(double logprob_new, double logprob_ref) {
  const double d = logprob_ref - logprob_new;
  return std::exp(d) - d - 1.0;
}

}  // namespace

std::vector<IndexPair> overlap_pairs_serial(std::span<const Aabb> boxes) {
  std::vector<IndexPair> pairs;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    for (std::size_t j = i + 1; j < boxes.size(); ++j) {
      if (boxes[i].overlaps(boxes[j])) pairs.emplace_back(i, j);
    }
  }
  return pairs;
}

std::vector<IndexPair> overlap_pairs_omp(std::span<const Aabb> boxes) {
  const auto n = static_cast<std::int64_t>(boxes.size());
  std::vector<std::vector<IndexPair>> rows(boxes.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    for (std::size_t j = ui + 1; j < boxes.size(); ++j) {
      if (boxes[ui].overlaps(boxes[j])) rows[ui].emplace_back(ui, j);
    }
  }
  std::vector<IndexPair> pairs;
  for (auto& row : rows) pairs.insert(pairs.end(), row.begin(), row.end());
  return pairs;
}

std::vector<std::vector<IndexPair>> overlap_pairs_batch_serial(
    std::span<const std::vector<Aabb>> scenes) {
  std::vector<std::vector<IndexPair>> out;
  out.reserve(scenes.size());
  for (const auto& scene : scenes) out.push_back(overlap_pairs_serial(scene));
  return out;
}

std::vector<std::vector<IndexPair>> overlap_pairs_batch_omp(
    std::span<const std::vector<Aabb>> scenes) {
  const auto n = static_cast<std::int64_t>(scenes.size());
  std::vector<std::vector<IndexPair>> out(scenes.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t s = 0; s < n; ++s) {
    out[static_cast<std::size_t>(s)] = overlap_pairs_serial(scenes[static_cast<std::size_t>(s)]);
  }
  return out;
}

void normalize_serial(std::span<const double> adjusted, double mean, double std,
                      double floor, std::span<double> out) {
  const bool degenerate = !(std >= floor);
  for (std::size_t k = 0; k < adjusted.size(); ++k) {
    out[k] = degenerate ? 0.0 : (adjusted[k] - mean) / std;
  }
}

void normalize_omp(std::span<const double> adjusted, double mean, double std, double floor,
                   std::span<double> out) {
  const bool degenerate = !(std >= floor);
  const auto n = static_cast<std::int64_t>(adjusted.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t k = 0; k < n; ++k) {
    const auto u = static_cast<std::size_t>(k);
    out[u] = degenerate ? 0.0 : (adjusted[u] - mean) / std;
  }
}

void surrogate_terms_serial(const SurrogateInputs& in, double epsilon,
                            const SurrogateOutputs& out) {
  for (std::size_t k = 0; k < in.advantage.size(); ++k) {
    const double r = std::exp(in.logprob_new[k] - in.logprob_old[k]);
    out.ratio[k] = r;
    out.policy_term[k] = policy_term(r, in.advantage[k], epsilon);
    out.kl_term[k] = kl_estimate(in.logprob_new[k], in.logprob_ref[k]);
  }
}

void surrogate_terms_omp(const SurrogateInputs& in, double epsilon, const SurrogateOutputs& out) {
  const auto n = static_cast<std::int64_t>(in.advantage.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t k = 0; k < n; ++k) {
    const auto u = static_cast<std::size_t>(k);
    const double r = std::exp(in.logprob_new[u] - in.logprob_old[u]);
    out.ratio[u] = r;
    out.policy_term[u] = policy_term(r, in.advantage[u], epsilon);
    out.kl_term[u] = kl_estimate(in.logprob_new[u], in.logprob_ref[u]);
  }
}

}  // namespace metaspatial::kernels
