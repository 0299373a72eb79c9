#include "pplr/agreement.hpp"

#include <algorithm>
#include <stdexcept>

namespace pplr {

std::vector<double> cross_agreement(const RankedLists& a, const RankedLists& b) {
  if (a.k != b.k) throw std::invalid_argument("cross_agreement: mismatched k");
  if (a.n_samples() != b.n_samples()) throw std::invalid_argument("cross_agreement: mismatched N");
  const std::size_t n = a.n_samples();
  const std::size_t k = a.k;
  std::vector<double> out(n, 0.0);
  parallel_for(n, [&](std::size_t lo, std::size_t hi) {
    std::vector<std::uint32_t> ra(k), rb(k);
    for (std::size_t i = lo; i < hi; ++i) {
      std::copy(a.row(i).begin(), a.row(i).end(), ra.begin());
      std::copy(b.row(i).begin(), b.row(i).end(), rb.begin());
      std::sort(ra.begin(), ra.end());
      std::sort(rb.begin(), rb.end());
      std::size_t inter = 0;
      for (std::size_t x = 0, y = 0; x < k && y < k;) {
        if (ra[x] < rb[y]) {
          ++x;
        } else if (rb[y] < ra[x]) {
          ++y;
        } else {
          ++inter;
          ++x;
          ++y;
        }
      }
      const std::size_t uni = 2 * k - inter;
      out[i] = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    }
  });
  return out;
}

CrossAgreement agreement_matrix(const RankedLists& global, const std::vector<RankedLists>& parts) {
  CrossAgreement out;
  out.scores = Matrix(global.n_samples(), parts.size());
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto col = cross_agreement(global, parts[p]);
    for (std::size_t i = 0; i < col.size(); ++i) out.scores(i, p) = col[i];
  }
  return out;
}

}  // namespace pplr
