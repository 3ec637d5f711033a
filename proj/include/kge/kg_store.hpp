#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace kge {

using EntityId = std::int32_t;
using RelationId = std::int32_t;

struct Triple {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;

  friend auto operator<=>(const Triple&, const Triple&) = default;
};

struct TripleHash {
  std::size_t operator()(const Triple& t) const noexcept;
};

// Dense first-seen ordinal encoding of entity and relation labels. The two
// id spaces are independent.
class Vocab {
 public:
  Vocab() = default;

  // Labels e0..e{n-1} and r0..r{m-1}; used by tests and generators.
  static Vocab synthetic(std::size_t num_entities, std::size_t num_relations);

  EntityId add_entity(std::string_view label);
  RelationId add_relation(std::string_view label);

  std::optional<EntityId> find_entity(std::string_view label) const;
  std::optional<RelationId> find_relation(std::string_view label) const;

  const std::string& entity(EntityId id) const { return entities_.at(static_cast<std::size_t>(id)); }
  const std::string& relation(RelationId id) const {
    return relations_.at(static_cast<std::size_t>(id));
  }

  std::size_t num_entities() const { return entities_.size(); }
  std::size_t num_relations() const { return relations_.size(); }
  const std::vector<std::string>& entities() const { return entities_; }
  const std::vector<std::string>& relations() const { return relations_; }

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.entities_ == b.entities_ && a.relations_ == b.relations_;
  }

 private:
  std::vector<std::string> entities_;
  std::vector<std::string> relations_;
  std::unordered_map<std::string, EntityId> entity_ids_;
  std::unordered_map<std::string, RelationId> relation_ids_;
};

// Corruption statistics of one relation, computed over the train split.
struct BernStat {
  double tph = 0;  // mean tails per distinct head
  double hpt = 0;  // mean heads per distinct tail

  friend bool operator==(const BernStat&, const BernStat&) = default;
};

// Indexed by relation id; relations absent from train have no entry.
using BernStats = std::vector<std::optional<BernStat>>;

BernStats bern_stats(std::span<const Triple> train, std::size_t num_relations);

// Deduplicated set of known facts with (h, r) -> tails and (r, t) -> heads lookups.
class FilterIndex {
 public:
  void insert(const Triple& t);
  bool contains(const Triple& t) const { return facts_.contains(t); }
  std::size_t size() const { return facts_.size(); }

  // Known tails for (head, relation); empty when none.
  std::span<const EntityId> tails(EntityId head, RelationId relation) const;
  std::span<const EntityId> heads(RelationId relation, EntityId tail) const;

 private:
  static std::uint64_t key(std::int32_t a, std::int32_t b) {
    return (std::uint64_t{static_cast<std::uint32_t>(a)} << 32) | static_cast<std::uint32_t>(b);
  }

  std::unordered_set<Triple, TripleHash> facts_;
  std::unordered_map<std::uint64_t, std::vector<EntityId>> tails_;
  std::unordered_map<std::uint64_t, std::vector<EntityId>> heads_;
};

struct LoadSummary {
  std::size_t entities_unseen_in_train = 0;
  std::size_t duplicate_lines = 0;
};

// Vocabulary, encoded splits and derived indexes. Immutable once built, so a
// single instance can be shared by any number of concurrent readers.
class KgDataset {
 public:
  // Validates ids against the vocabulary and derives the filter index, the
  // train-only fact set and the Bernoulli statistics.
  static KgDataset build(Vocab vocab, std::vector<Triple> train, std::vector<Triple> valid,
                         std::vector<Triple> test);

  const Vocab& vocab() const { return vocab_; }
  const std::vector<Triple>& train() const { return train_; }
  const std::vector<Triple>& valid() const { return valid_; }
  const std::vector<Triple>& test() const { return test_; }
  const FilterIndex& filter_index() const { return filter_; }
  const BernStats& bern() const { return bern_; }
  bool in_train(const Triple& t) const { return train_set_.contains(t); }
  const LoadSummary& summary() const { return summary_; }

  std::size_t num_entities() const { return vocab_.num_entities(); }
  std::size_t num_relations() const { return vocab_.num_relations(); }

 private:
  KgDataset() = default;
  friend KgDataset load_cache(const std::filesystem::path&);

  Vocab vocab_;
  std::vector<Triple> train_, valid_, test_;
  FilterIndex filter_;
  std::unordered_set<Triple, TripleHash> train_set_;
  BernStats bern_;
  LoadSummary summary_;
};

struct SplitNames {
  std::string train = "train.txt";
  std::string valid = "valid.txt";
  std::string test = "test.txt";
};

// Parses `head<TAB>relation<TAB>tail` lines from the three split files.
// Vocabulary order is first-seen over train, then valid, then test.
KgDataset parse_dataset(const std::filesystem::path& dir, const SplitNames& names = {});

inline constexpr std::string_view kCacheMagic = "KGC1";

void save_cache(const KgDataset& d, const std::filesystem::path& path);
KgDataset load_cache(const std::filesystem::path& path);

// `<dir>/.kgcache/<dir name>.bin`
std::filesystem::path default_cache_path(const std::filesystem::path& dir);

// Loads the cache when it is newer than every split file, otherwise parses
// the directory and refreshes the cache. A stale or corrupt cache is rebuilt.
KgDataset load_dataset(const std::filesystem::path& dir, const SplitNames& names = {});

}  // namespace kge
