#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace oracle {

namespace {

std::vector<double> row(const ModelParams& p, std::size_t slot, std::int32_t id) {
  auto r = p.tensor(slot).row(static_cast<std::size_t>(id));
  return {r.begin(), r.end()};
}

double norm(const std::vector<double>& v, bool l1) {
  double s = 0;
  for (double x : v) s += l1 ? std::abs(x) : x * x;
  return l1 ? s : std::sqrt(s);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// y = M x for a row-major d x d matrix.
std::vector<double> matvec(const std::vector<double>& m, const std::vector<double>& x) {
  const std::size_t d = x.size();
  std::vector<double> y(d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) y[i] += m[i * d + j] * x[j];
  return y;
}

}  // namespace

double reference_score(const ModelParams& p, const Triple& t) {
  const bool l1 = p.settings().l1;
  const std::size_t d = p.dim();
  switch (p.kind()) {
    case ModelKind::transe: {
      auto h = row(p, 0, t.head), r = row(p, 1, t.relation), tt = row(p, 0, t.tail);
      std::vector<double> e(d);
      for (std::size_t i = 0; i < d; ++i) e[i] = h[i] + r[i] - tt[i];
      return -norm(e, l1);
    }
    case ModelKind::transh: {
      auto h = row(p, 0, t.head), r = row(p, 1, t.relation), tt = row(p, 0, t.tail);
      auto w = row(p, 2, t.relation);
      const double wh = dot(w, h), wt = dot(w, tt);
      std::vector<double> e(d);
      for (std::size_t i = 0; i < d; ++i) e[i] = (h[i] - wh * w[i]) + r[i] - (tt[i] - wt * w[i]);
      return -norm(e, l1);
    }
    case ModelKind::transr: {
      auto h = row(p, 0, t.head), r = row(p, 1, t.relation), tt = row(p, 0, t.tail);
      auto m = row(p, 2, t.relation);
      auto mh = matvec(m, h), mt = matvec(m, tt);
      std::vector<double> e(d);
      for (std::size_t i = 0; i < d; ++i) e[i] = mh[i] + r[i] - mt[i];
      return -norm(e, l1);
    }
    case ModelKind::transd: {
      auto h = row(p, 0, t.head), r = row(p, 1, t.relation), tt = row(p, 0, t.tail);
      auto hp = row(p, 2, t.head), tp = row(p, 2, t.tail), rp = row(p, 3, t.relation);
      // (r_p h_p^T + I) h
      std::vector<double> mh(d, 0.0), mt(d, 0.0), e(d);
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          mh[i] += (rp[i] * hp[j] + (i == j ? 1.0 : 0.0)) * h[j];
          mt[i] += (rp[i] * tp[j] + (i == j ? 1.0 : 0.0)) * tt[j];
        }
      }
      for (std::size_t i = 0; i < d; ++i) e[i] = mh[i] + r[i] - mt[i];
      return -norm(e, l1);
    }
    case ModelKind::rescal: {
      auto h = row(p, 0, t.head), tt = row(p, 0, t.tail), m = row(p, 1, t.relation);
      return dot(h, matvec(m, tt));
    }
    case ModelKind::distmult: {
      auto h = row(p, 0, t.head), r = row(p, 1, t.relation), tt = row(p, 0, t.tail);
      double s = 0;
      for (std::size_t i = 0; i < d; ++i) s += h[i] * r[i] * tt[i];
      return s;
    }
    case ModelKind::complex: {
      auto hr = row(p, 0, t.head), hi = row(p, 1, t.head);
      auto tr = row(p, 0, t.tail), ti = row(p, 1, t.tail);
      auto rr = row(p, 2, t.relation), ri = row(p, 3, t.relation);
      double s = 0;
      for (std::size_t i = 0; i < d; ++i) {
        const std::complex<double> h(hr[i], hi[i]), r(rr[i], ri[i]), tt(tr[i], ti[i]);
        s += (h * r * std::conj(tt)).real();
      }
      return s;
    }
    case ModelKind::kg2e: {
      auto mh = row(p, 0, t.head), mt = row(p, 0, t.tail), mr = row(p, 1, t.relation);
      auto vh = row(p, 2, t.head), vt = row(p, 2, t.tail), vr = row(p, 3, t.relation);
      // KL(N(mu1, s1) || N(mu2, s2)) for diagonal Gaussians
      double trace = 0, maha = 0, logdet = 0;
      for (std::size_t i = 0; i < d; ++i) {
        const double mu1 = mh[i] - mt[i], s1 = vh[i] + vt[i];
        trace += s1 / vr[i];
        maha += (mr[i] - mu1) * (mr[i] - mu1) / vr[i];
        logdet += std::log(vr[i] / s1);
      }
      return -0.5 * (trace + maha - static_cast<double>(d) + logdet);
    }
  }
  return 0;
}

ModelParams random_params(ModelKind kind, std::size_t num_entities, std::size_t num_relations,
                          std::size_t dim, Rng& rng) {
  ModelParams p(kind, {}, num_entities, num_relations, dim);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> var(p.settings().var_min, p.settings().var_max);
  for (std::size_t s = 0; s < p.tensors().size(); ++s) {
    const bool variance = kind == ModelKind::kg2e && s >= 2;
    for (double& v : p.tensor(s).data) v = variance ? var(rng) : u(rng);
  }
  return p;
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-4});
}

FdReport finite_difference_check(ModelParams params, std::span<const Triple> pos,
                                 std::span<const Triple> neg, const LossSpec& spec) {
  FdReport rep;
  SparseGrad grad(params);
  batch_loss_and_gradient(params, pos, neg, spec, &grad);
  auto loss = [&] { return batch_loss_and_gradient(params, pos, neg, spec, nullptr); };

  const auto& gt = grad.tensors();
  for (std::size_t s = 0; s < gt.size(); ++s) {
    if (gt[s].row_size != params.tensor(s).shape.row_size) rep.shapes_ok = false;
    for (std::uint32_t r : gt[s].rows)
      if (r >= params.tensor(s).shape.rows) rep.shapes_ok = false;
  }

  std::set<std::pair<std::size_t, std::int32_t>> rows;
  for (auto part : {pos, neg})
    for (const Triple& t : part)
      for (std::size_t s = 0; s < params.tensors().size(); ++s) {
        if (params.tensor(s).shape.index == RowIndex::relation) {
          rows.emplace(s, t.relation);
        } else {
          rows.emplace(s, t.head);
          rows.emplace(s, t.tail);
        }
      }

  const double base = loss();
  const ModelSettings& st = params.settings();
  for (const auto& [s, r] : rows) {
    const double* g = gt[s].find(static_cast<std::uint32_t>(r));
    auto values = params.tensor(s).row(static_cast<std::size_t>(r));
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double analytic = g ? g[k] : 0.0;
      const double theta = values[k];
      const bool variance = params.kind() == ModelKind::kg2e && s >= 2;
      const bool at_bound = variance && (theta == st.var_min || theta == st.var_max);
      // the variance terms curve sharply near var_min, so the one-sided stencil steps shorter
      const double h = (at_bound ? 1e-6 : 1e-5) * std::max(1.0, std::abs(theta));
      values[k] = theta + h;
      const double up = loss();
      values[k] = theta + 2 * h;
      const double up2 = loss();
      values[k] = theta - h;
      const double down = loss();
      values[k] = theta - 2 * h;
      const double down2 = loss();
      values[k] = theta;
      ++rep.checked;

      // second-order one-sided stencils, O(h^2) like the central difference
      const double fwd = (-3 * base + 4 * up - up2) / (2 * h);
      const double bwd = (3 * base - 4 * down + down2) / (2 * h);
      double err = 0;
      bool one_sided = false;
      if (variance && theta == st.var_min) {
        err = relative_error(analytic, fwd);
        one_sided = true;
      } else if (variance && theta == st.var_max) {
        err = relative_error(analytic, bwd);
        one_sided = true;
      } else if (std::abs(fwd - bwd) > 1e-3) {
        ++rep.kinks;
        err = std::min(relative_error(analytic, fwd), relative_error(analytic, bwd));
        one_sided = true;
      } else {
        err = relative_error(analytic, (up - down) / (2 * h));
      }
      if (!g && std::abs(analytic - (up - down) / (2 * h)) > 1e-6 && !one_sided)
        rep.absent_rows_zero = false;

      double& worst = one_sided ? rep.max_error_one_sided : rep.max_error;
      if (one_sided) ++rep.one_sided;
      if (err > worst) {
        worst = err;
        std::ostringstream o;
        o << params.tensor(s).shape.name << "[" << r << "][" << k << "] = " << theta << ": analytic "
          << analytic << ", forward " << fwd << ", backward " << bwd;
        (one_sided ? rep.worst_one_sided : rep.worst) = o.str();
      }
    }
  }
  return rep;
}

RankOutcome brute_force_rank(const ModelParams& p, const Triple& t, const KgDataset& d) {
  std::set<Triple> known;
  for (const auto* split : {&d.train(), &d.valid(), &d.test()}) known.insert(split->begin(), split->end());

  const auto n = static_cast<EntityId>(d.num_entities());
  // position of `truth` after sorting best-first, ties broken in its favour
  auto position = [&](bool tail_side, bool filtered) {
    const EntityId truth = tail_side ? t.tail : t.head;
    std::vector<std::pair<double, EntityId>> cand;
    for (EntityId e = 0; e < n; ++e) {
      const Triple c = tail_side ? Triple{t.head, t.relation, e} : Triple{e, t.relation, t.tail};
      if (filtered && e != truth && known.contains(c)) continue;
      cand.emplace_back(score(p, c), e);
    }
    std::sort(cand.begin(), cand.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return (a.second == truth) > (b.second == truth);
    });
    for (std::size_t i = 0; i < cand.size(); ++i)
      if (cand[i].second == truth) return i + 1;
    return cand.size() + 1;
  };
  RankOutcome o;
  o.triple = t;
  o.head_raw = position(false, false);
  o.head_filtered = position(false, true);
  o.tail_raw = position(true, false);
  o.tail_filtered = position(true, true);
  return o;
}

KgDataset random_dataset(std::size_t num_entities, std::size_t num_relations,
                         std::size_t num_triples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<EntityId> ent(0, static_cast<EntityId>(num_entities - 1));
  std::uniform_int_distribution<RelationId> rel(0, static_cast<RelationId>(num_relations - 1));
  std::set<Triple> seen;
  std::vector<Triple> all;
  while (all.size() < num_triples) {
    Triple t{ent(rng), rel(rng), ent(rng)};
    if (seen.insert(t).second) all.push_back(t);
  }
  const std::size_t n_train = num_triples * 8 / 10, n_valid = num_triples / 10;
  std::vector<Triple> train(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<Triple> valid(all.begin() + static_cast<std::ptrdiff_t>(n_train),
                            all.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
  std::vector<Triple> test(all.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), all.end());
  return KgDataset::build(Vocab::synthetic(num_entities, num_relations), train, valid, test);
}

KgDataset modular_dataset(double held_out_fraction, std::uint64_t seed) {
  Vocab v;
  for (int i = 0; i < 100; ++i) v.add_entity((i < 10 ? "e0" : "e") + std::to_string(i));
  v.add_relation("plus1");
  v.add_relation("plus5");
  std::vector<Triple> all;
  for (RelationId r = 0; r < 2; ++r) {
    const int k = r == 0 ? 1 : 5;
    for (int i = 0; i < 100; ++i) all.push_back({i, r, (i + k) % 100});
  }
  std::mt19937_64 rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  const auto held = static_cast<std::size_t>(std::lround(held_out_fraction * static_cast<double>(all.size())));
  std::vector<Triple> valid(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(held / 2));
  std::vector<Triple> test(all.begin() + static_cast<std::ptrdiff_t>(held / 2),
                           all.begin() + static_cast<std::ptrdiff_t>(held));
  std::vector<Triple> train(all.begin() + static_cast<std::ptrdiff_t>(held), all.end());
  return KgDataset::build(v, train, valid, test);
}

void write_dataset(const KgDataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const Vocab& v = d.vocab();
  auto write = [&](const std::vector<Triple>& split, const char* name) {
    std::ofstream out(dir / name);
    for (const Triple& t : split)
      out << v.entity(t.head) << '\t' << v.relation(t.relation) << '\t' << v.entity(t.tail) << '\n';
  };
  write(d.train(), "train.txt");
  write(d.valid(), "valid.txt");
  write(d.test(), "test.txt");
}

double silhouette(const DenseMatrix& coords, std::span<const int> labels) {
  const std::size_t n = coords.rows;
  auto dist = [&](std::size_t i, std::size_t j) {
    const double dx = coords(i, 0) - coords(j, 0), dy = coords(i, 1) - coords(j, 1);
    return std::sqrt(dx * dx + dy * dy);
  };
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::map<int, std::pair<double, int>> by_label;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      auto& acc = by_label[labels[j]];
      acc.first += dist(i, j);
      ++acc.second;
    }
    double a = 0, b = std::numeric_limits<double>::infinity();
    for (const auto& [label, acc] : by_label) {
      const double mean = acc.first / acc.second;
      if (label == labels[i])
        a = mean;
      else
        b = std::min(b, mean);
    }
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

BernStats brute_force_bern(std::span<const Triple> train, std::size_t num_relations) {
  BernStats out(num_relations);
  for (std::size_t r = 0; r < num_relations; ++r) {
    std::size_t count = 0;
    std::set<EntityId> heads, tails;
    for (const Triple& t : train) {
      if (static_cast<std::size_t>(t.relation) != r) continue;
      ++count;
      heads.insert(t.head);
      tails.insert(t.tail);
    }
    if (count == 0) continue;
    out[r] = BernStat{static_cast<double>(count) / static_cast<double>(heads.size()),
                      static_cast<double>(count) / static_cast<double>(tails.size())};
  }
  return out;
}

TempDir::TempDir(const std::string& tag) {
  std::random_device rd;
  path_ = std::filesystem::temp_directory_path() /
          ("kge_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace oracle
