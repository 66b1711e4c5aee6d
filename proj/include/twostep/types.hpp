#pragma once

#include <cstddef>
#include <vector>

namespace twostep {

using Index = std::size_t;
using IndexSet = std::vector<Index>;

}  // namespace twostep
