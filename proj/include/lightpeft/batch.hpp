#pragma once

#include <cstddef>
#include <vector>

namespace lightpeft {

// Row-major [batch, seq] token ids with one label per row.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<int> tokens;
  std::vector<int> labels;
};

}  // namespace lightpeft
