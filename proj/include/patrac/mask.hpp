#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

#include "patrac/network.hpp"

namespace patrac {

// Marks which coordinates of a ParamSet are Bayesian.  `flags` aligns with
// the flat enumeration order of ParamSet.  `perms[l]` (l = 1..L-1) is the
// node relabelling applied to hidden layer l when the mask was built:
// perms[l][orig-1] is the 1-based rank the original node was moved to.
// Input and output layers are never relabelled.
struct BayesMask {
  std::vector<std::uint8_t> flags;
  std::vector<std::vector<int>> perms;  // perms[0] unused; perms[l] for hidden l
  int bayes_count = 0;

  static BayesMask none(const NetworkShape& shape) {
    BayesMask m;
    m.flags.assign(param_count(shape), 0);
    m.perms.resize(std::size_t(shape.depth()));
    for (int l = 1; l <= shape.depth() - 1; ++l) {
      m.perms[std::size_t(l)].resize(std::size_t(shape.nodes(l)));
      std::iota(m.perms[std::size_t(l)].begin(), m.perms[std::size_t(l)].end(), 1);
    }
    return m;
  }

  static BayesMask full(const NetworkShape& shape) {
    BayesMask m = none(shape);
    m.flags.assign(m.flags.size(), 1);
    m.bayes_count = int(m.flags.size());
    return m;
  }

  bool is_bayes(std::size_t flat) const { return flags[flat] != 0; }

  void recount() {
    bayes_count = 0;
    for (auto f : flags) bayes_count += f != 0;
  }

  // Flat indices of the Bayesian coordinates, ascending (the fixed
  // enumeration order used for inner products and archive columns).
  std::vector<std::size_t> bayes_indices() const {
    std::vector<std::size_t> idx;
    idx.reserve(std::size_t(bayes_count));
    for (std::size_t k = 0; k < flags.size(); ++k)
      if (flags[k]) idx.push_back(k);
    return idx;
  }

  void require_matches(const NetworkShape& shape, const char* who) const {
    if (flags.size() != param_count(shape))
      throw ShapeError(std::string(who) + ": mask does not match shape");
  }
};

}  // namespace patrac
