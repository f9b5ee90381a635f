// SPDX-License-Identifier: Apache-2.0
#pragma once

// Small simulated inputs shared by several test files. Frames are cached
// because the same phantom is needed by many tests.

#include <map>

#include "patchbf/config.hpp"

namespace fixture {

using namespace patchbf;

/// The toy preset's four-cyst evaluation frame.
inline const RFFrame& toy_frame() {
  static const RFFrame f = simulate_frame(toy_config(), toy_config().phantom, 4);
  return f;
}

/// Training frame `index` of the toy preset's random phantom family.
inline const RFFrame& toy_dataset_frame(std::size_t index) {
  static std::map<std::size_t, RFFrame> cache;
  auto it = cache.find(index);
  if (it == cache.end()) {
    const auto c = toy_config();
    it = cache.emplace(index, simulate_frame(c, dataset_phantom(c, index), 4)).first;
  }
  return it->second;
}

inline std::vector<RFFrame> toy_frames(std::size_t n) {
  std::vector<RFFrame> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(toy_dataset_frame(i));
  return out;
}

}  // namespace fixture
