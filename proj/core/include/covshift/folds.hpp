#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace covshift {

// Partition of rows 0..n-1 into k folds of near-equal size.
struct FoldAssignment {
  std::vector<int> fold_of;
  int k = 0;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return fold_of.size(); }
  std::vector<std::size_t> rows_in(int fold) const;
  std::vector<std::size_t> rows_not_in(int fold) const;
  std::vector<std::size_t> fold_sizes() const;
};

// Seeded shuffle of 0..n-1 dealt round-robin into k folds, so sizes differ
// by at most one. Requires 2 <= k <= n (InvalidFoldCount otherwise).
FoldAssignment make_folds(std::size_t n, int k, std::uint64_t seed);

}  // namespace covshift
