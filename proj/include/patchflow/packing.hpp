// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

namespace patchflow {

// One bin produced by packing: indices into the caller's sample list plus
// the number of token rows the members occupy together.
struct Pack {
  std::vector<int> members;
  int used_tokens = 0;
};

// Greedy first-fit-decreasing binning of token lengths into packs of
// capacity token_budget. Ties sort by original index, so the result is a
// deterministic function of the input order. A length above the budget is a
// configuration error.
std::vector<Pack> pack_batch(const std::vector<int>& token_lens, int token_budget);

}  // namespace patchflow
