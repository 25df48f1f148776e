#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace siamtl {

// Indices refer to whatever sample container the batch was drawn from.
struct pair_item {
  std::size_t first = 0;
  std::size_t second = 0;
  bool same_class = false;
};

struct pair_batch {
  std::vector<pair_item> pairs;

  std::size_t same_count() const {
    return static_cast<std::size_t>(
        std::count_if(pairs.begin(), pairs.end(), [](const pair_item& p) { return p.same_class; }));
  }
  std::size_t diff_count() const { return pairs.size() - same_count(); }
};

}  // namespace siamtl
