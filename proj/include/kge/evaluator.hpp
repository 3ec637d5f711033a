#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "kge/kg_store.hpp"
#include "kge/models.hpp"

namespace kge {

enum class Split { train, valid, test };

std::string_view to_string(Split s);
std::optional<Split> parse_split(std::string_view s);
const std::vector<Triple>& split_triples(const KgDataset& d, Split s);

struct RankOutcome {
  Triple triple;
  std::size_t head_raw = 1;
  std::size_t head_filtered = 1;
  std::size_t tail_raw = 1;
  std::size_t tail_filtered = 1;

  friend bool operator==(const RankOutcome&, const RankOutcome&) = default;
};

inline constexpr std::array<std::size_t, 4> kHitsAt = {1, 3, 5, 10};

struct MetricsReport {
  std::size_t num_triples = 0;
  double mean_rank_raw = 0;
  double mean_rank_filtered = 0;
  std::array<double, kHitsAt.size()> hits_raw{};
  std::array<double, kHitsAt.size()> hits_filtered{};

  // Hits@k for k in kHitsAt; throws std::out_of_range otherwise.
  double hits(std::size_t k, bool filtered) const;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

// 1 + number of candidates other than `truth` scoring strictly higher, with
// the entities in `exclude` (other than truth) removed from the competition.
// Ties count in favour of the true entity.
std::size_t rank_of(std::span<const double> scores, EntityId truth,
                    std::span<const EntityId> exclude = {});

// Raw and filtered head and tail ranks of t against every entity. The filter
// covers train, valid and test.
RankOutcome rank_triple(const ModelParams& params, const Triple& t, const KgDataset& d);

// Outcomes in input order; the triples are split across `workers` threads.
std::vector<RankOutcome> rank_triples(const ModelParams& params, std::span<const Triple> triples,
                                      const KgDataset& d, std::size_t workers = 1);

// Mean rank and hits@k over both head and tail ranks of every outcome.
MetricsReport summarize(std::span<const RankOutcome> outcomes);

// max_triples = 0 evaluates the whole split, otherwise its first max_triples.
MetricsReport evaluate(const ModelParams& params, const KgDataset& d, Split split,
                       std::size_t workers = 1, std::size_t max_triples = 0);

// metric,raw,filtered
void write_metrics_csv(const MetricsReport& report, const std::filesystem::path& path);
// head,relation,tail,head_raw,head_filtered,tail_raw,tail_filtered (labels)
void write_ranks_csv(std::span<const RankOutcome> outcomes, const Vocab& vocab,
                     const std::filesystem::path& path);

}  // namespace kge
