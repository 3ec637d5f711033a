#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <memory>
#include <optional>
#include <string_view>
#include <thread>
#include <vector>

#include "kge/bounded_queue.hpp"
#include "kge/kg_store.hpp"
#include "kge/rng.hpp"

namespace kge {

enum class SamplingStrategy { uniform, bern };

std::string_view to_string(SamplingStrategy s);
std::optional<SamplingStrategy> parse_sampling_strategy(std::string_view s);

struct SamplerConfig {
  SamplingStrategy strategy = SamplingStrategy::bern;
  std::size_t batch_size = 128;
  bool reject_train_positives = false;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::size_t queue_capacity = 8;

  // Throws ConfigError when a count is zero.
  void validate() const;
};

// Positives with one aligned corrupted negative each.
struct Batch {
  std::vector<Triple> positives;
  std::vector<Triple> negatives;
  std::size_t epoch = 0;
  std::size_t batch_index = 0;
};

// Replaces the head or the tail of a positive triple with a different
// uniformly drawn entity. Safe to share between threads.
class Corruptor {
 public:
  static constexpr int kMaxAttempts = 100;

  Corruptor(const KgDataset& d, SamplingStrategy strategy, bool reject_train_positives);

  // Probability of replacing the head of a triple with this relation:
  // 0.5 under uniform sampling or when the relation has no statistics,
  // tph / (tph + hpt) under bern.
  double head_probability(RelationId r) const;

  Triple corrupt(const Triple& t, Rng& rng) const;

  // Number of corruptions that exhausted kMaxAttempts and returned a train fact.
  std::size_t saturations() const { return saturations_.load(std::memory_order_relaxed); }

 private:
  Triple corrupt_once(const Triple& t, Rng& rng) const;

  const KgDataset* data_;
  SamplingStrategy strategy_;
  bool reject_;
  mutable std::atomic<std::size_t> saturations_{0};
};

inline std::size_t batches_per_epoch(std::size_t train_size, std::size_t batch_size) {
  return (train_size + batch_size - 1) / batch_size;
}

// Seeded permutation of [0, n) for one epoch.
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::size_t epoch);

// Produces batches for `epochs` epochs on `workers` producer threads. Worker w
// owns batches b with b % workers == w of every epoch and draws from its own
// (seed, w, epoch) stream. Epochs are fenced: no batch of epoch e + 1 is
// enqueued before every batch of epoch e. With one worker the sequence is
// fully deterministic.
class BatchStream {
 public:
  BatchStream(const KgDataset& d, SamplerConfig cfg, std::size_t epochs);
  ~BatchStream();

  BatchStream(const BatchStream&) = delete;
  BatchStream& operator=(const BatchStream&) = delete;

  // Next batch; nullopt after the final epoch or after cancel().
  std::optional<Batch> next();

  // Stops producers; pending batches are discarded.
  void cancel();

  std::size_t batches_per_epoch() const { return per_epoch_; }
  std::size_t saturations() const { return corruptor_.saturations(); }

 private:
  struct Shared;

  const KgDataset& data_;
  SamplerConfig cfg_;
  std::size_t epochs_;
  std::size_t per_epoch_;
  Corruptor corruptor_;
  std::unique_ptr<Shared> shared_;
  std::vector<std::thread> workers_;
};

}  // namespace kge
