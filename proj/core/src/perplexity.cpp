#include <cmath>

#include "capkit/errors.hpp"
#include "capkit/metrics.hpp"

namespace capkit {

double perplexity(const CaptionLogProb& logprob_fn, std::span<const Tokens> corpus) {
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& caption : corpus) {
    auto [lp, n] = logprob_fn(caption);
    if (!std::isfinite(lp)) {
      throw Error(Errc::NonFiniteLogProb, "non-finite log-probability for '" + join(caption) + "'");
    }
    total += lp;
    tokens += n;
  }
  if (tokens == 0) throw Error(Errc::InvalidArgument, "perplexity over zero tokens");
  return std::exp(-total / static_cast<double>(tokens));
}

}  // namespace capkit
