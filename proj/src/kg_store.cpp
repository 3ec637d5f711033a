#include "kge/kg_store.hpp"

#include <algorithm>
#include <fstream>
#include <system_error>

#include "kge/binary_io.hpp"
#include "kge/error.hpp"

namespace kge {

std::size_t TripleHash::operator()(const Triple& t) const noexcept {
  std::uint64_t h = static_cast<std::uint32_t>(t.head);
  h = h * 0x9e3779b97f4a7c15ULL + static_cast<std::uint32_t>(t.relation);
  h = h * 0x9e3779b97f4a7c15ULL + static_cast<std::uint32_t>(t.tail);
  return static_cast<std::size_t>(h ^ (h >> 29));
}

Vocab Vocab::synthetic(std::size_t num_entities, std::size_t num_relations) {
  Vocab v;
  for (std::size_t i = 0; i < num_entities; ++i) v.add_entity("e" + std::to_string(i));
  for (std::size_t i = 0; i < num_relations; ++i) v.add_relation("r" + std::to_string(i));
  return v;
}

EntityId Vocab::add_entity(std::string_view label) {
  auto [it, inserted] =
      entity_ids_.try_emplace(std::string(label), static_cast<EntityId>(entities_.size()));
  if (inserted) entities_.emplace_back(label);
  return it->second;
}

RelationId Vocab::add_relation(std::string_view label) {
  auto [it, inserted] =
      relation_ids_.try_emplace(std::string(label), static_cast<RelationId>(relations_.size()));
  if (inserted) relations_.emplace_back(label);
  return it->second;
}

std::optional<EntityId> Vocab::find_entity(std::string_view label) const {
  auto it = entity_ids_.find(std::string(label));
  if (it == entity_ids_.end()) return std::nullopt;
  return it->second;
}

std::optional<RelationId> Vocab::find_relation(std::string_view label) const {
  auto it = relation_ids_.find(std::string(label));
  if (it == relation_ids_.end()) return std::nullopt;
  return it->second;
}

BernStats bern_stats(std::span<const Triple> train, std::size_t num_relations) {
  std::vector<std::size_t> count(num_relations, 0);
  std::vector<std::unordered_set<EntityId>> heads(num_relations), tails(num_relations);
  for (const Triple& t : train) {
    const auto r = static_cast<std::size_t>(t.relation);
    ++count[r];
    heads[r].insert(t.head);
    tails[r].insert(t.tail);
  }
  BernStats stats(num_relations);
  for (std::size_t r = 0; r < num_relations; ++r) {
    if (count[r] == 0) continue;
    const auto n = static_cast<double>(count[r]);
    stats[r] = BernStat{n / static_cast<double>(heads[r].size()),
                        n / static_cast<double>(tails[r].size())};
  }
  return stats;
}

void FilterIndex::insert(const Triple& t) {
  if (!facts_.insert(t).second) return;
  tails_[key(t.head, t.relation)].push_back(t.tail);
  heads_[key(t.relation, t.tail)].push_back(t.head);
}

std::span<const EntityId> FilterIndex::tails(EntityId head, RelationId relation) const {
  auto it = tails_.find(key(head, relation));
  if (it == tails_.end()) return {};
  return it->second;
}

std::span<const EntityId> FilterIndex::heads(RelationId relation, EntityId tail) const {
  auto it = heads_.find(key(relation, tail));
  if (it == heads_.end()) return {};
  return it->second;
}

namespace {

void check_ids(const std::vector<Triple>& split, const Vocab& vocab, std::string_view name) {
  const auto ne = static_cast<EntityId>(vocab.num_entities());
  const auto nr = static_cast<RelationId>(vocab.num_relations());
  for (std::size_t i = 0; i < split.size(); ++i) {
    const Triple& t = split[i];
    if (t.head < 0 || t.head >= ne || t.tail < 0 || t.tail >= ne || t.relation < 0 ||
        t.relation >= nr)
      throw DatasetError(std::string(name) + " triple #" + std::to_string(i) +
                         " has an id outside the vocabulary");
  }
}

}  // namespace

KgDataset KgDataset::build(Vocab vocab, std::vector<Triple> train, std::vector<Triple> valid,
                           std::vector<Triple> test) {
  check_ids(train, vocab, "train");
  check_ids(valid, vocab, "valid");
  check_ids(test, vocab, "test");

  KgDataset d;
  d.vocab_ = std::move(vocab);
  d.train_ = std::move(train);
  d.valid_ = std::move(valid);
  d.test_ = std::move(test);

  std::size_t total = 0;
  for (const auto* split : {&d.train_, &d.valid_, &d.test_}) {
    for (const Triple& t : *split) d.filter_.insert(t);
    total += split->size();
  }
  d.summary_.duplicate_lines = total - d.filter_.size();
  for (const Triple& t : d.train_) d.train_set_.insert(t);
  d.bern_ = bern_stats(d.train_, d.vocab_.num_relations());

  std::vector<bool> seen(d.vocab_.num_entities(), false);
  for (const Triple& t : d.train_) {
    seen[static_cast<std::size_t>(t.head)] = true;
    seen[static_cast<std::size_t>(t.tail)] = true;
  }
  d.summary_.entities_unseen_in_train =
      static_cast<std::size_t>(std::count(seen.begin(), seen.end(), false));
  return d;
}

namespace {

std::vector<Triple> parse_split(const std::filesystem::path& file, Vocab& vocab) {
  std::ifstream in(file);
  if (!in) throw DatasetError("missing dataset file '" + file.string() + "'");
  std::vector<Triple> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto first = line.find('\t');
    const auto second = first == std::string::npos ? first : line.find('\t', first + 1);
    if (second == std::string::npos || line.find('\t', second + 1) != std::string::npos)
      throw DatasetError(file.string() + ":" + std::to_string(line_no) +
                         ": malformed line, expected head<TAB>relation<TAB>tail");
    const std::string_view view(line);
    const auto head = view.substr(0, first);
    const auto rel = view.substr(first + 1, second - first - 1);
    const auto tail = view.substr(second + 1);
    if (head.empty() || rel.empty() || tail.empty())
      throw DatasetError(file.string() + ":" + std::to_string(line_no) +
                         ": malformed line, empty field");
    Triple t;
    t.head = vocab.add_entity(head);
    t.relation = vocab.add_relation(rel);
    t.tail = vocab.add_entity(tail);
    out.push_back(t);
  }
  return out;
}

}  // namespace

KgDataset parse_dataset(const std::filesystem::path& dir, const SplitNames& names) {
  Vocab vocab;
  auto train = parse_split(dir / names.train, vocab);
  auto valid = parse_split(dir / names.valid, vocab);
  auto test = parse_split(dir / names.test, vocab);
  return KgDataset::build(std::move(vocab), std::move(train), std::move(valid), std::move(test));
}

namespace {

void write_split(ByteWriter& w, const std::vector<Triple>& split) {
  w.u64(split.size());
  for (const Triple& t : split) {
    w.i32(t.head);
    w.i32(t.relation);
    w.i32(t.tail);
  }
}

std::vector<Triple> read_split(ByteReader& r) {
  const std::uint64_t n = r.u64();
  if (n > r.remaining() / 12) throw CacheError("cache split length exceeds payload");
  std::vector<Triple> split(n);
  for (Triple& t : split) {
    t.head = r.i32();
    t.relation = r.i32();
    t.tail = r.i32();
  }
  return split;
}

}  // namespace

void save_cache(const KgDataset& d, const std::filesystem::path& path) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(d.vocab().num_entities()));
  for (const auto& s : d.vocab().entities()) w.str(s);
  w.u32(static_cast<std::uint32_t>(d.vocab().num_relations()));
  for (const auto& s : d.vocab().relations()) w.str(s);
  write_split(w, d.train());
  write_split(w, d.valid());
  write_split(w, d.test());
  w.u32(static_cast<std::uint32_t>(d.bern().size()));
  for (const auto& stat : d.bern()) {
    w.u8(stat ? 1 : 0);
    w.f64(stat ? stat->tph : 0.0);
    w.f64(stat ? stat->hpt : 0.0);
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_checked_file(path, kCacheMagic, w.bytes());
}

KgDataset load_cache(const std::filesystem::path& path) {
  const auto payload = read_checked_file(path, kCacheMagic);
  ByteReader r(payload);
  Vocab vocab;
  const std::uint32_t ne = r.u32();
  for (std::uint32_t i = 0; i < ne; ++i) vocab.add_entity(r.str());
  const std::uint32_t nr = r.u32();
  for (std::uint32_t i = 0; i < nr; ++i) vocab.add_relation(r.str());
  if (vocab.num_entities() != ne || vocab.num_relations() != nr)
    throw CacheError("cache vocabulary contains duplicate labels");
  auto train = read_split(r);
  auto valid = read_split(r);
  auto test = read_split(r);
  const std::uint32_t nb = r.u32();
  BernStats stored(nb);
  for (auto& stat : stored) {
    const bool present = r.u8() != 0;
    const double tph = r.f64();
    const double hpt = r.f64();
    if (present) stat = BernStat{tph, hpt};
  }
  if (r.remaining() != 0) throw CacheError("trailing bytes in cache payload");

  KgDataset d;
  try {
    d = KgDataset::build(std::move(vocab), std::move(train), std::move(valid), std::move(test));
  } catch (const DatasetError& e) {
    throw CacheError(std::string("inconsistent cache: ") + e.what());
  }
  if (stored != d.bern_) throw CacheError("cache statistics disagree with cached triples");
  return d;
}

std::filesystem::path default_cache_path(const std::filesystem::path& dir) {
  auto name = std::filesystem::absolute(dir).lexically_normal().filename().string();
  if (name.empty()) name = std::filesystem::absolute(dir).lexically_normal().parent_path().filename().string();
  if (name.empty()) name = "dataset";
  return dir / ".kgcache" / (name + ".bin");
}

KgDataset load_dataset(const std::filesystem::path& dir, const SplitNames& names) {
  namespace fs = std::filesystem;
  const fs::path cache = default_cache_path(dir);
  std::error_code ec;
  if (fs::exists(cache, ec)) {
    const auto cache_time = fs::last_write_time(cache, ec);
    bool fresh = !ec;
    for (const auto& n : {names.train, names.valid, names.test}) {
      const auto t = fs::last_write_time(dir / n, ec);
      if (ec || t > cache_time) fresh = false;
    }
    if (fresh) {
      try {
        return load_cache(cache);
      } catch (const CacheError&) {
        // rebuilt below
      }
    }
  }
  KgDataset d = parse_dataset(dir, names);
  try {
    save_cache(d, cache);
  } catch (const std::exception&) {
    // read-only dataset directories still work, just without a cache
  }
  return d;
}

}  // namespace kge
