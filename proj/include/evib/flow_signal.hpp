#pragma once

#include <stdexcept>
#include <vector>

namespace evib {

// Uniformly binned two-channel global velocity signal in pixels/us. Bins with
// no contributing estimates hold 0 on both channels; `weight` is the number of
// flow estimates that landed in each bin, so downstream stages can discount
// empty or sparse bins.
struct GlobalFlowSignal {
  double sample_rate = 0.0;
  std::vector<double> vx;
  std::vector<double> vy;
  std::vector<double> weight;

  std::size_t size() const { return vx.size(); }

  void validate() const {
    if (sample_rate <= 0) throw std::invalid_argument("GlobalFlowSignal: bad sample rate");
    if (vx.size() != vy.size() || vx.size() != weight.size())
      throw std::invalid_argument("GlobalFlowSignal: channel length mismatch");
    for (std::size_t i = 0; i < weight.size(); ++i) {
      if (weight[i] < 0) throw std::invalid_argument("GlobalFlowSignal: negative weight");
      if (weight[i] == 0 && (vx[i] != 0.0 || vy[i] != 0.0))
        throw std::invalid_argument("GlobalFlowSignal: nonzero velocity in empty bin");
    }
  }
};

}  // namespace evib
