#include "kge/sampler.hpp"

#include <algorithm>
#include <barrier>
#include <mutex>
#include <numeric>

#include "kge/error.hpp"

namespace kge {

std::string_view to_string(SamplingStrategy s) {
  return s == SamplingStrategy::uniform ? "uniform" : "bern";
}

std::optional<SamplingStrategy> parse_sampling_strategy(std::string_view s) {
  if (s == "uniform" || s == "unif") return SamplingStrategy::uniform;
  if (s == "bern") return SamplingStrategy::bern;
  return std::nullopt;
}

void SamplerConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (workers == 0) throw ConfigError("workers must be >= 1");
  if (queue_capacity == 0) throw ConfigError("queue_capacity must be >= 1");
}

Corruptor::Corruptor(const KgDataset& d, SamplingStrategy strategy, bool reject_train_positives)
    : data_(&d), strategy_(strategy), reject_(reject_train_positives) {}

double Corruptor::head_probability(RelationId r) const {
  if (strategy_ == SamplingStrategy::uniform) return 0.5;
  const auto& stats = data_->bern();
  const auto idx = static_cast<std::size_t>(r);
  if (idx >= stats.size() || !stats[idx]) return 0.5;
  return stats[idx]->tph / (stats[idx]->tph + stats[idx]->hpt);
}

Triple Corruptor::corrupt_once(const Triple& t, Rng& rng) const {
  const auto n = static_cast<std::uint64_t>(data_->num_entities());
  const bool replace_head = uniform01(rng) < head_probability(t.relation);
  Triple out = t;
  EntityId& slot = replace_head ? out.head : out.tail;
  if (n > 1) {
    // uniform over the n - 1 entities other than the current one
    auto e = static_cast<EntityId>(uniform_below(rng, n - 1));
    if (e >= slot) ++e;
    slot = e;
  }
  return out;
}

Triple Corruptor::corrupt(const Triple& t, Rng& rng) const {
  Triple out = corrupt_once(t, rng);
  if (!reject_) return out;
  for (int attempt = 1; attempt < kMaxAttempts && data_->in_train(out); ++attempt)
    out = corrupt_once(t, rng);
  if (data_->in_train(out)) saturations_.fetch_add(1, std::memory_order_relaxed);
  return out;
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng = make_rng(seed, 0x5045524dULL, epoch);  // own stream, disjoint from workers
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[uniform_below(rng, i)]);
  return perm;
}

struct BatchStream::Shared {
  Shared(std::size_t capacity, std::size_t workers)
      : queue(capacity), fence(static_cast<std::ptrdiff_t>(workers)), active(workers) {}

  BoundedQueue<Batch> queue;
  std::barrier<> fence;
  std::atomic<bool> cancelled{false};
  std::atomic<std::size_t> active;
  std::mutex error_mutex;
  std::exception_ptr error;
};

BatchStream::BatchStream(const KgDataset& d, SamplerConfig cfg, std::size_t epochs)
    : data_(d),
      cfg_(cfg),
      epochs_(epochs),
      per_epoch_(kge::batches_per_epoch(d.train().size(), cfg.batch_size == 0 ? 1 : cfg.batch_size)),
      corruptor_(d, cfg.strategy, cfg.reject_train_positives) {
  cfg_.validate();
  if (d.train().empty()) throw DatasetError("train split is empty");
  shared_ = std::make_unique<Shared>(cfg_.queue_capacity, cfg_.workers);

  for (std::size_t w = 0; w < cfg_.workers; ++w) {
    workers_.emplace_back([this, w] {
      Shared& s = *shared_;
      const auto& train = data_.train();
      try {
        for (std::size_t epoch = 0; epoch < epochs_ && !s.cancelled; ++epoch) {
          const auto perm = epoch_permutation(train.size(), cfg_.seed, epoch);
          Rng rng = make_rng(cfg_.seed, w + 1, epoch);
          for (std::size_t b = w; b < per_epoch_ && !s.cancelled; b += cfg_.workers) {
            Batch batch;
            batch.epoch = epoch;
            batch.batch_index = b;
            const std::size_t lo = b * cfg_.batch_size;
            const std::size_t hi = std::min(lo + cfg_.batch_size, train.size());
            batch.positives.reserve(hi - lo);
            batch.negatives.reserve(hi - lo);
            for (std::size_t i = lo; i < hi; ++i) {
              const Triple& pos = train[perm[i]];
              batch.positives.push_back(pos);
              batch.negatives.push_back(corruptor_.corrupt(pos, rng));
            }
            if (!s.queue.push(std::move(batch))) s.cancelled = true;
          }
          if (epoch + 1 < epochs_ && !s.cancelled) s.fence.arrive_and_wait();
        }
      } catch (...) {
        std::lock_guard lock(s.error_mutex);
        if (!s.error) s.error = std::current_exception();
        s.cancelled = true;
        s.queue.close();
      }
      s.fence.arrive_and_drop();
      if (s.active.fetch_sub(1) == 1) s.queue.close();
    });
  }
}

BatchStream::~BatchStream() {
  cancel();
  for (auto& t : workers_) t.join();
}

std::optional<Batch> BatchStream::next() {
  auto batch = shared_->queue.pop();
  if (!batch) {
    std::lock_guard lock(shared_->error_mutex);
    if (shared_->error) std::rethrow_exception(shared_->error);
  }
  return batch;
}

void BatchStream::cancel() {
  shared_->cancelled = true;
  shared_->queue.close();
}

}  // namespace kge
