#pragma once

#include <vector>

#include "pplr/core.hpp"

namespace pplr {

inline constexpr std::size_t kDefaultAgreementK = 20;

/// Per-sample Jaccard similarity |A_i ∩ B_i| / |A_i ∪ B_i| of two top-k neighbour sets.
/// Works for any pair of spaces, so part-to-part scores use the same call.
std::vector<double> cross_agreement(const RankedLists& a, const RankedLists& b);

/// Column n holds cross_agreement(global, parts[n]).
CrossAgreement agreement_matrix(const RankedLists& global, const std::vector<RankedLists>& parts);

}  // namespace pplr
