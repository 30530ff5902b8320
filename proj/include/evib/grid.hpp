#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace evib {

// Row-major 2D array. Shared container for speckle intensity fields, event
// accumulation frames, and flow fields.
template <typename T>
struct Grid {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  T& at(int x, int y) {
    assert(x >= 0 && x < width && y >= 0 && y < height);
    return data[static_cast<std::size_t>(y) * width + x];
  }
  const T& at(int x, int y) const {
    assert(x >= 0 && x < width && y >= 0 && y < height);
    return data[static_cast<std::size_t>(y) * width + x];
  }
  const T* row(int y) const { return data.data() + static_cast<std::size_t>(y) * width; }
  T* row(int y) { return data.data() + static_cast<std::size_t>(y) * width; }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Grid& o) const { return width == o.width && height == o.height; }
};

}  // namespace evib
