// SPDX-License-Identifier: Apache-2.0
#include "patchflow/packing.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "patchflow/errors.hpp"

namespace patchflow {

std::vector<Pack> pack_batch(const std::vector<int>& token_lens, int token_budget) {
  require(token_budget > 0, ErrorKind::Config, "pack_batch: token budget must be positive");
  for (std::size_t i = 0; i < token_lens.size(); ++i)
    require(token_lens[i] > 0 && token_lens[i] <= token_budget, ErrorKind::Config,
            "pack_batch: sample " + std::to_string(i) + " has " +
                std::to_string(token_lens[i]) + " tokens, budget is " +
                std::to_string(token_budget));

  std::vector<int> order(token_lens.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return token_lens[static_cast<std::size_t>(a)] > token_lens[static_cast<std::size_t>(b)];
  });

  std::vector<Pack> packs;
  for (int idx : order) {
    int len = token_lens[static_cast<std::size_t>(idx)];
    Pack* fit = nullptr;
    for (Pack& p : packs) {
      if (p.used_tokens + len <= token_budget) {
        fit = &p;
        break;
      }
    }
    if (!fit) {
      packs.push_back(Pack{});
      fit = &packs.back();
    }
    fit->members.push_back(idx);
    fit->used_tokens += len;
  }
  return packs;
}

}  // namespace patchflow
