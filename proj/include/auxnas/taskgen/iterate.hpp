#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "auxnas/errors.hpp"
#include "auxnas/util/rng.hpp"

namespace auxnas {

using IndexBatch = std::vector<std::size_t>;

/// Two batches for one alternating step: `w` trains the weights, `alpha`
/// the architecture weights. `alpha` is empty for plain iteration.
struct BatchPair {
  IndexBatch w;
  IndexBatch alpha;
};

/// Seeded per-epoch batches over a pool of sample indices. Each epoch
/// draws a fresh permutation from the same generator, so the sequence of
/// epochs is fixed by the seed. With `disjoint_pairs`, every step takes
/// 2 * batch_size consecutive permuted indices and splits them in half;
/// a tail shorter than a full pair is dropped. Without it, a final short
/// batch is kept when it has at least two rows.
class BatchStream {
 public:
  BatchStream(std::vector<std::size_t> pool, std::size_t batch_size, std::uint64_t seed, bool disjoint_pairs)
      : pool_(std::move(pool)), batch_(batch_size), rng_(substream(seed, "batching")), pairs_(disjoint_pairs) {
    if (batch_ == 0) throw ConfigError("batch_size must be >= 1");
    if (pairs_ && batch_ > pool_.size() / 2) {
      throw ConfigError("batch_size " + std::to_string(batch_) + " exceeds half the split (" +
                        std::to_string(pool_.size()) + " samples) with disjoint pairs");
    }
    if (!pairs_ && batch_ > pool_.size()) {
      throw ConfigError("batch_size " + std::to_string(batch_) + " exceeds the split (" +
                        std::to_string(pool_.size()) + " samples)");
    }
  }

  std::size_t steps_per_epoch() const {
    if (pairs_) return pool_.size() / (2 * batch_);
    const std::size_t full = pool_.size() / batch_, tail = pool_.size() % batch_;
    return full + (tail >= 2 ? 1 : 0);
  }

  std::vector<BatchPair> next_epoch() {
    const auto perm = permutation(pool_.size(), rng_);
    std::vector<BatchPair> out;
    auto take = [&](std::size_t from, std::size_t n) {
      IndexBatch b(n);
      for (std::size_t i = 0; i < n; ++i) b[i] = pool_[perm[from + i]];
      return b;
    };
    if (pairs_) {
      for (std::size_t s = 0; s + 2 * batch_ <= pool_.size(); s += 2 * batch_) {
        out.push_back({take(s, batch_), take(s + batch_, batch_)});
      }
    } else {
      for (std::size_t s = 0; s < pool_.size(); s += batch_) {
        const std::size_t n = std::min(batch_, pool_.size() - s);
        if (n < 2 && s > 0) break;
        out.push_back({take(s, n), {}});
      }
    }
    return out;
  }

  bool disjoint_pairs() const { return pairs_; }

 private:
  std::vector<std::size_t> pool_;
  std::size_t batch_;
  Rng rng_;
  bool pairs_;
};

inline BatchStream iterate(std::vector<std::size_t> pool, std::size_t batch_size, std::uint64_t seed,
                           bool disjoint_pairs) {
  return BatchStream(std::move(pool), batch_size, seed, disjoint_pairs);
}

}  // namespace auxnas
