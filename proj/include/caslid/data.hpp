#pragma once

// The unit every training and evaluation loop consumes.

#include <cstdint>
#include <string>
#include <vector>

#include "caslid/tensor.hpp"

namespace caslid {

template <typename S>
struct Utterance {
  Tensor<S> features;           // [T_raw x d_feat]
  std::vector<int64_t> tokens;  // y_1..y_U, never blank
  int64_t label = 0;            // locale index
  uint64_t id = 0;              // seed provenance (generator stream index)
};

}  // namespace caslid
