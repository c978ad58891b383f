#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "metaspatial/layout.hpp"

namespace metaspatial {

// Categorical choice behind a token, for policies whose log-probabilities can
// be recomputed from parameters: which logit row (slot) was sampled, which
// entry was chosen, and which entries were masked out at sampling time.
struct TokenAction {
  std::size_t slot = 0;
  std::size_t choice = 0;
  std::vector<std::size_t> masked;

  friend bool operator==(const TokenAction&, const TokenAction&) = default;
};

struct TokenRecord {
  std::size_t index = 0;
  ByteSpan span;  // into the owning text (turn text or trajectory text)
  std::optional<double> logprob_new;
  std::optional<double> logprob_old;
  std::optional<double> logprob_ref;
  std::optional<TokenAction> action;

  friend bool operator==(const TokenRecord&, const TokenRecord&) = default;
};

}  // namespace metaspatial
