#include "covshift/folds.hpp"

#include <string>
#include <utility>

#include "covshift/error.hpp"
#include "covshift/random.hpp"

namespace covshift {

std::vector<std::size_t> FoldAssignment::rows_in(int fold) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < fold_of.size(); ++i) {
    if (fold_of[i] == fold) rows.push_back(i);
  }
  return rows;
}

std::vector<std::size_t> FoldAssignment::rows_not_in(int fold) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < fold_of.size(); ++i) {
    if (fold_of[i] != fold) rows.push_back(i);
  }
  return rows;
}

std::vector<std::size_t> FoldAssignment::fold_sizes() const {
  std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
  for (int f : fold_of) ++sizes[static_cast<std::size_t>(f)];
  return sizes;
}

FoldAssignment make_folds(std::size_t n, int k, std::uint64_t seed) {
  if (k < 2 || static_cast<std::size_t>(k) > n) {
    throw ConfigError("InvalidFoldCount", "need 2 <= k <= n, got k=" + std::to_string(k) +
                                              " n=" + std::to_string(n));
  }
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  auto rng = make_rng(seed, 0x666f6c64);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(perm[i - 1], perm[j]);
  }
  FoldAssignment folds;
  folds.k = k;
  folds.seed = seed;
  folds.fold_of.assign(n, 0);
  for (std::size_t r = 0; r < n; ++r) {
    folds.fold_of[perm[r]] = static_cast<int>(r % static_cast<std::size_t>(k));
  }
  return folds;
}

}  // namespace covshift
