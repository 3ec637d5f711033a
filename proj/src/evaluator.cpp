#include "kge/evaluator.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "kge/error.hpp"
#include "kge/text.hpp"

namespace kge {

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  return std::nullopt;
}

const std::vector<Triple>& split_triples(const KgDataset& d, Split s) {
  switch (s) {
    case Split::train: return d.train();
    case Split::valid: return d.valid();
    case Split::test: break;
  }
  return d.test();
}

double MetricsReport::hits(std::size_t k, bool filtered) const {
  for (std::size_t i = 0; i < kHitsAt.size(); ++i)
    if (kHitsAt[i] == k) return filtered ? hits_filtered[i] : hits_raw[i];
  throw std::out_of_range("hits@" + std::to_string(k) + " is not reported");
}

std::size_t rank_of(std::span<const double> scores, EntityId truth,
                    std::span<const EntityId> exclude) {
  const double target = scores[static_cast<std::size_t>(truth)];
  std::size_t better = 0;
  for (double s : scores)
    if (s > target) ++better;
  for (EntityId e : exclude)
    if (e != truth && scores[static_cast<std::size_t>(e)] > target) --better;
  return better + 1;
}

namespace {

RankOutcome rank_with_buffer(const ModelParams& params, const Triple& t, const KgDataset& d,
                             std::vector<double>& buf) {
  buf.resize(d.num_entities());
  RankOutcome out;
  out.triple = t;
  score_tails(params, t.head, t.relation, buf);
  out.tail_raw = rank_of(buf, t.tail);
  out.tail_filtered = rank_of(buf, t.tail, d.filter_index().tails(t.head, t.relation));
  score_heads(params, t.relation, t.tail, buf);
  out.head_raw = rank_of(buf, t.head);
  out.head_filtered = rank_of(buf, t.head, d.filter_index().heads(t.relation, t.tail));
  return out;
}

}  // namespace

RankOutcome rank_triple(const ModelParams& params, const Triple& t, const KgDataset& d) {
  std::vector<double> buf;
  return rank_with_buffer(params, t, d, buf);
}

std::vector<RankOutcome> rank_triples(const ModelParams& params, std::span<const Triple> triples,
                                      const KgDataset& d, std::size_t workers) {
  if (params.num_entities() != d.num_entities() || params.num_relations() != d.num_relations())
    throw UserError("model shape (" + std::to_string(params.num_entities()) + " entities, " +
                    std::to_string(params.num_relations()) +
                    " relations) does not match the dataset");
  std::vector<RankOutcome> out(triples.size());
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(triples.size(), 1));
  auto run = [&](std::size_t w) {
    std::vector<double> buf;
    for (std::size_t i = w; i < triples.size(); i += workers)
      out[i] = rank_with_buffer(params, triples[i], d, buf);
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
  }
  return out;
}

MetricsReport summarize(std::span<const RankOutcome> outcomes) {
  MetricsReport r;
  r.num_triples = outcomes.size();
  if (outcomes.empty()) return r;
  double sum_raw = 0, sum_filtered = 0;
  std::array<std::size_t, kHitsAt.size()> hit_raw{}, hit_filtered{};
  auto add = [&](std::size_t raw, std::size_t filtered) {
    sum_raw += static_cast<double>(raw);
    sum_filtered += static_cast<double>(filtered);
    for (std::size_t i = 0; i < kHitsAt.size(); ++i) {
      hit_raw[i] += raw <= kHitsAt[i];
      hit_filtered[i] += filtered <= kHitsAt[i];
    }
  };
  for (const RankOutcome& o : outcomes) {
    add(o.head_raw, o.head_filtered);
    add(o.tail_raw, o.tail_filtered);
  }
  const double n = 2.0 * static_cast<double>(outcomes.size());
  r.mean_rank_raw = sum_raw / n;
  r.mean_rank_filtered = sum_filtered / n;
  for (std::size_t i = 0; i < kHitsAt.size(); ++i) {
    r.hits_raw[i] = static_cast<double>(hit_raw[i]) / n;
    r.hits_filtered[i] = static_cast<double>(hit_filtered[i]) / n;
  }
  return r;
}

MetricsReport evaluate(const ModelParams& params, const KgDataset& d, Split split,
                       std::size_t workers, std::size_t max_triples) {
  std::span<const Triple> triples = split_triples(d, split);
  if (triples.empty())
    throw UserError("cannot evaluate: " + std::string(to_string(split)) + " split is empty");
  if (max_triples != 0 && max_triples < triples.size()) triples = triples.first(max_triples);
  const auto outcomes = rank_triples(params, triples, d, workers);
  return summarize(outcomes);
}

void write_metrics_csv(const MetricsReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "metric,raw,filtered\n";
  out << "mean_rank," << format_double(report.mean_rank_raw) << ','
      << format_double(report.mean_rank_filtered) << '\n';
  for (std::size_t i = 0; i < kHitsAt.size(); ++i)
    out << "hits@" << kHitsAt[i] << ',' << format_double(report.hits_raw[i]) << ','
        << format_double(report.hits_filtered[i]) << '\n';
  out << "triples," << report.num_triples << ',' << report.num_triples << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void write_ranks_csv(std::span<const RankOutcome> outcomes, const Vocab& vocab,
                     const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "head,relation,tail,head_raw,head_filtered,tail_raw,tail_filtered\n";
  for (const RankOutcome& o : outcomes)
    out << csv_field(vocab.entity(o.triple.head)) << ','
        << csv_field(vocab.relation(o.triple.relation)) << ','
        << csv_field(vocab.entity(o.triple.tail)) << ',' << o.head_raw << ','
        << o.head_filtered << ',' << o.tail_raw << ',' << o.tail_filtered << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace kge
