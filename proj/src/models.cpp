#include "kge/models.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include "kge/binary_io.hpp"
#include "kge/error.hpp"
#include "kge/rng.hpp"
#include "kge/sampler.hpp"

namespace kge {

namespace {

constexpr std::array<ModelKind, 8> kAllKinds = {
    ModelKind::transe, ModelKind::transh,   ModelKind::transr,  ModelKind::transd,
    ModelKind::rescal, ModelKind::distmult, ModelKind::complex, ModelKind::kg2e};

// Tensor slots per kind, in param_shapes order.
namespace slot {
constexpr std::size_t ent = 0, rel = 1;
constexpr std::size_t transh_normal = 2;
constexpr std::size_t transr_matrix = 2;
constexpr std::size_t transd_ent_proj = 2, transd_rel_proj = 3;
constexpr std::size_t rescal_matrix = 1;
constexpr std::size_t ent_re = 0, ent_im = 1, rel_re = 2, rel_im = 3;
constexpr std::size_t ent_mean = 0, rel_mean = 1, ent_var = 2, rel_var = 3;
}  // namespace slot

auto urow(std::int32_t id) { return static_cast<std::uint32_t>(id); }
auto zrow(std::int32_t id) { return static_cast<std::size_t>(id); }

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void normalize(std::span<double> v) {
  double n = 0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n > 0)
    for (double& x : v) x /= n;
}

// -||e||_p and, when g is non-empty, coeff * d(-||e||_p)/de into g.
double neg_distance(std::span<const double> e, bool l1, double coeff, std::span<double> g) {
  if (l1) {
    double s = 0;
    for (double x : e) s += std::abs(x);
    if (!g.empty())
      for (std::size_t i = 0; i < e.size(); ++i)
        g[i] = e[i] > 0 ? -coeff : (e[i] < 0 ? coeff : 0.0);
    return -s;
  }
  double s = 0;
  for (double x : e) s += x * x;
  s = std::sqrt(s);
  if (!g.empty())
    for (std::size_t i = 0; i < e.size(); ++i) g[i] = s > 0 ? -coeff * e[i] / s : 0.0;
  return -s;
}

struct Scratch {
  std::vector<double> a, b, c;
  void resize(std::size_t d) {
    a.assign(d, 0.0);
    b.assign(d, 0.0);
    c.assign(d, 0.0);
  }
};

Scratch& scratch(std::size_t d) {
  thread_local Scratch s;
  s.resize(d);
  return s;
}

// Score of t; when grad is non-null also adds coeff * d score / d theta.
double evaluate(const ModelParams& p, const Triple& t, double coeff, SparseGrad* grad) {
  const std::size_t d = p.dim();
  const bool want = grad != nullptr;
  const auto H = zrow(t.head), R = zrow(t.relation), T = zrow(t.tail);

  switch (p.kind()) {
    case ModelKind::transe: {
      const auto h = p.tensor(slot::ent).row(H), r = p.tensor(slot::rel).row(R),
                 tt = p.tensor(slot::ent).row(T);
      auto& s = scratch(d);
      for (std::size_t i = 0; i < d; ++i) s.a[i] = h[i] + r[i] - tt[i];
      const double out = neg_distance(s.a, p.settings().l1, coeff, want ? std::span(s.b) : std::span<double>{});
      if (want) {
        auto gh = grad->row(slot::ent, urow(t.head));
        for (std::size_t i = 0; i < d; ++i) gh[i] += s.b[i];
        auto gr = grad->row(slot::rel, urow(t.relation));
        for (std::size_t i = 0; i < d; ++i) gr[i] += s.b[i];
        auto gt = grad->row(slot::ent, urow(t.tail));
        for (std::size_t i = 0; i < d; ++i) gt[i] -= s.b[i];
      }
      return out;
    }

    case ModelKind::transh: {
      const auto h = p.tensor(slot::ent).row(H), r = p.tensor(slot::rel).row(R),
                 tt = p.tensor(slot::ent).row(T), w = p.tensor(slot::transh_normal).row(R);
      auto& s = scratch(d);
      auto& u = s.c;
      for (std::size_t i = 0; i < d; ++i) u[i] = h[i] - tt[i];
      const double a = dot(w, u);
      for (std::size_t i = 0; i < d; ++i) s.a[i] = u[i] - a * w[i] + r[i];
      const double out = neg_distance(s.a, p.settings().l1, coeff, want ? std::span(s.b) : std::span<double>{});
      if (want) {
        const auto& g = s.b;
        const double wg = dot(w, g);
        auto gh = grad->row(slot::ent, urow(t.head));
        for (std::size_t i = 0; i < d; ++i) gh[i] += g[i] - wg * w[i];
        auto gt = grad->row(slot::ent, urow(t.tail));
        for (std::size_t i = 0; i < d; ++i) gt[i] -= g[i] - wg * w[i];
        auto gr = grad->row(slot::rel, urow(t.relation));
        for (std::size_t i = 0; i < d; ++i) gr[i] += g[i];
        auto gw = grad->row(slot::transh_normal, urow(t.relation));
        for (std::size_t i = 0; i < d; ++i) gw[i] += -wg * u[i] - a * g[i];
      }
      return out;
    }

    case ModelKind::transr: {
      const auto h = p.tensor(slot::ent).row(H), r = p.tensor(slot::rel).row(R),
                 tt = p.tensor(slot::ent).row(T), m = p.tensor(slot::transr_matrix).row(R);
      auto& s = scratch(d);
      auto& u = s.c;
      for (std::size_t i = 0; i < d; ++i) u[i] = h[i] - tt[i];
      // M h + r - M t, in this order so that M = I reproduces TransE bit for bit
      for (std::size_t i = 0; i < d; ++i) {
        double mh = 0, mt = 0;
        for (std::size_t j = 0; j < d; ++j) {
          mh += m[i * d + j] * h[j];
          mt += m[i * d + j] * tt[j];
        }
        s.a[i] = mh + r[i] - mt;
      }
      const double out = neg_distance(s.a, p.settings().l1, coeff, want ? std::span(s.b) : std::span<double>{});
      if (want) {
        const auto& g = s.b;
        auto& mg = s.a;  // M^T g; e is no longer needed
        for (std::size_t j = 0; j < d; ++j) {
          double acc = 0;
          for (std::size_t i = 0; i < d; ++i) acc += m[i * d + j] * g[i];
          mg[j] = acc;
        }
        auto gh = grad->row(slot::ent, urow(t.head));
        for (std::size_t j = 0; j < d; ++j) gh[j] += mg[j];
        auto gt = grad->row(slot::ent, urow(t.tail));
        for (std::size_t j = 0; j < d; ++j) gt[j] -= mg[j];
        auto gr = grad->row(slot::rel, urow(t.relation));
        for (std::size_t i = 0; i < d; ++i) gr[i] += g[i];
        auto gm = grad->row(slot::transr_matrix, urow(t.relation));
        for (std::size_t i = 0; i < d; ++i)
          for (std::size_t j = 0; j < d; ++j) gm[i * d + j] += g[i] * u[j];
      }
      return out;
    }

    case ModelKind::transd: {
      const auto h = p.tensor(slot::ent).row(H), r = p.tensor(slot::rel).row(R),
                 tt = p.tensor(slot::ent).row(T);
      const auto hp = p.tensor(slot::transd_ent_proj).row(H),
                 tp = p.tensor(slot::transd_ent_proj).row(T),
                 rp = p.tensor(slot::transd_rel_proj).row(R);
      const double ah = dot(hp, h), at = dot(tp, tt);
      auto& s = scratch(d);
      for (std::size_t i = 0; i < d; ++i) s.a[i] = h[i] + ah * rp[i] + r[i] - tt[i] - at * rp[i];
      const double out = neg_distance(s.a, p.settings().l1, coeff, want ? std::span(s.b) : std::span<double>{});
      if (want) {
        const auto& g = s.b;
        const double c = dot(rp, g);
        auto gh = grad->row(slot::ent, urow(t.head));
        for (std::size_t i = 0; i < d; ++i) gh[i] += g[i] + c * hp[i];
        auto gt = grad->row(slot::ent, urow(t.tail));
        for (std::size_t i = 0; i < d; ++i) gt[i] -= g[i] + c * tp[i];
        auto ghp = grad->row(slot::transd_ent_proj, urow(t.head));
        for (std::size_t i = 0; i < d; ++i) ghp[i] += c * h[i];
        auto gtp = grad->row(slot::transd_ent_proj, urow(t.tail));
        for (std::size_t i = 0; i < d; ++i) gtp[i] -= c * tt[i];
        auto gr = grad->row(slot::rel, urow(t.relation));
        for (std::size_t i = 0; i < d; ++i) gr[i] += g[i];
        auto grp = grad->row(slot::transd_rel_proj, urow(t.relation));
        for (std::size_t i = 0; i < d; ++i) grp[i] += (ah - at) * g[i];
      }
      return out;
    }

    case ModelKind::rescal: {
      const auto h = p.tensor(slot::ent).row(H), tt = p.tensor(slot::ent).row(T),
                 m = p.tensor(slot::rescal_matrix).row(R);
      auto& s = scratch(d);
      auto& mt = s.a;  // M t
      for (std::size_t i = 0; i < d; ++i) {
        double acc = 0;
        for (std::size_t j = 0; j < d; ++j) acc += m[i * d + j] * tt[j];
        mt[i] = acc;
      }
      const double out = dot(h, mt);
      if (want) {
        auto& mth = s.b;  // M^T h
        for (std::size_t j = 0; j < d; ++j) {
          double acc = 0;
          for (std::size_t i = 0; i < d; ++i) acc += m[i * d + j] * h[i];
          mth[j] = acc;
        }
        auto gm = grad->row(slot::rescal_matrix, urow(t.relation));
        for (std::size_t i = 0; i < d; ++i)
          for (std::size_t j = 0; j < d; ++j) gm[i * d + j] += coeff * h[i] * tt[j];
        auto gh = grad->row(slot::ent, urow(t.head));
        for (std::size_t i = 0; i < d; ++i) gh[i] += coeff * mt[i];
        auto gt = grad->row(slot::ent, urow(t.tail));
        for (std::size_t j = 0; j < d; ++j) gt[j] += coeff * mth[j];
      }
      return out;
    }

    case ModelKind::distmult: {
      const auto h = p.tensor(slot::ent).row(H), r = p.tensor(slot::rel).row(R),
                 tt = p.tensor(slot::ent).row(T);
      double out = 0;
      // r * (h * t) keeps score(h, r, t) == score(t, r, h) exactly
      for (std::size_t i = 0; i < d; ++i) out += r[i] * (h[i] * tt[i]);
      if (want) {
        auto gh = grad->row(slot::ent, urow(t.head));
        for (std::size_t i = 0; i < d; ++i) gh[i] += coeff * r[i] * tt[i];
        auto gt = grad->row(slot::ent, urow(t.tail));
        for (std::size_t i = 0; i < d; ++i) gt[i] += coeff * h[i] * r[i];
        auto gr = grad->row(slot::rel, urow(t.relation));
        for (std::size_t i = 0; i < d; ++i) gr[i] += coeff * h[i] * tt[i];
      }
      return out;
    }

    case ModelKind::complex: {
      const auto a = p.tensor(slot::ent_re).row(H), b = p.tensor(slot::ent_im).row(H);
      const auto c = p.tensor(slot::rel_re).row(R), dd = p.tensor(slot::rel_im).row(R);
      const auto e = p.tensor(slot::ent_re).row(T), f = p.tensor(slot::ent_im).row(T);
      // Re(sum h * r * conj(t))
      double out = 0;
      for (std::size_t i = 0; i < d; ++i)
        out += (a[i] * c[i] - b[i] * dd[i]) * e[i] + (a[i] * dd[i] + b[i] * c[i]) * f[i];
      if (want) {
        auto ga = grad->row(slot::ent_re, urow(t.head));
        for (std::size_t i = 0; i < d; ++i) ga[i] += coeff * (c[i] * e[i] + dd[i] * f[i]);
        auto gb = grad->row(slot::ent_im, urow(t.head));
        for (std::size_t i = 0; i < d; ++i) gb[i] += coeff * (c[i] * f[i] - dd[i] * e[i]);
        auto gc = grad->row(slot::rel_re, urow(t.relation));
        for (std::size_t i = 0; i < d; ++i) gc[i] += coeff * (a[i] * e[i] + b[i] * f[i]);
        auto gd = grad->row(slot::rel_im, urow(t.relation));
        for (std::size_t i = 0; i < d; ++i) gd[i] += coeff * (a[i] * f[i] - b[i] * e[i]);
        auto ge = grad->row(slot::ent_re, urow(t.tail));
        for (std::size_t i = 0; i < d; ++i) ge[i] += coeff * (a[i] * c[i] - b[i] * dd[i]);
        auto gf = grad->row(slot::ent_im, urow(t.tail));
        for (std::size_t i = 0; i < d; ++i) gf[i] += coeff * (a[i] * dd[i] + b[i] * c[i]);
      }
      return out;
    }

    case ModelKind::kg2e: {
      const auto mh = p.tensor(slot::ent_mean).row(H), mt = p.tensor(slot::ent_mean).row(T),
                 mr = p.tensor(slot::rel_mean).row(R);
      const auto vh = p.tensor(slot::ent_var).row(H), vt = p.tensor(slot::ent_var).row(T),
                 vr = p.tensor(slot::rel_var).row(R);
      // -KL(N(mh - mt, vh + vt) || N(mr, vr)), diagonal covariances
      double kl = 0;
      for (std::size_t i = 0; i < d; ++i) {
        const double s1 = vh[i] + vt[i];
        const double diff = mr[i] - (mh[i] - mt[i]);
        kl += s1 / vr[i] + diff * diff / vr[i] - 1.0 + std::log(vr[i]) - std::log(s1);
      }
      kl *= 0.5;
      if (want) {
        auto& s = scratch(d);
        for (std::size_t i = 0; i < d; ++i) {
          const double s1 = vh[i] + vt[i];
          const double diff = mr[i] - (mh[i] - mt[i]);
          s.a[i] = coeff * diff / vr[i];                               // d / d(mh - mt)
          s.b[i] = -0.5 * coeff * (1.0 / vr[i] - 1.0 / s1);            // d / d(vh + vt)
          s.c[i] = 0.5 * coeff * ((s1 + diff * diff) / (vr[i] * vr[i]) - 1.0 / vr[i]);
        }
        // one row at a time: row() may reallocate earlier spans
        auto gmh = grad->row(slot::ent_mean, urow(t.head));
        for (std::size_t i = 0; i < d; ++i) gmh[i] += s.a[i];
        auto gmt = grad->row(slot::ent_mean, urow(t.tail));
        for (std::size_t i = 0; i < d; ++i) gmt[i] -= s.a[i];
        auto gmr = grad->row(slot::rel_mean, urow(t.relation));
        for (std::size_t i = 0; i < d; ++i) gmr[i] -= s.a[i];
        auto gvh = grad->row(slot::ent_var, urow(t.head));
        for (std::size_t i = 0; i < d; ++i) gvh[i] += s.b[i];
        auto gvt = grad->row(slot::ent_var, urow(t.tail));
        for (std::size_t i = 0; i < d; ++i) gvt[i] += s.b[i];
        auto gvr = grad->row(slot::rel_var, urow(t.relation));
        for (std::size_t i = 0; i < d; ++i) gvr[i] += s.c[i];
      }
      return -kl;
    }
  }
  return 0;
}

template <typename F>
void for_each_row(const ModelParams& p, const Triple& t, F&& f) {
  for (std::size_t s = 0; s < p.tensors().size(); ++s) {
    if (p.tensor(s).shape.index == RowIndex::relation) {
      f(s, urow(t.relation));
    } else {
      f(s, urow(t.head));
      if (t.tail != t.head) f(s, urow(t.tail));
    }
  }
}

bool has_unit_entities(ModelKind k) { return k == ModelKind::transe || k == ModelKind::transh; }

void project_row(ModelParams& p, std::size_t s, std::size_t row) {
  const ModelKind k = p.kind();
  if (has_unit_entities(k) && s == slot::ent) {
    normalize(p.tensor(s).row(row));
  } else if (k == ModelKind::transh && s == slot::transh_normal) {
    normalize(p.tensor(s).row(row));
  } else if (k == ModelKind::kg2e && (s == slot::ent_var || s == slot::rel_var)) {
    for (double& v : p.tensor(s).row(row))
      v = std::clamp(v, p.settings().var_min, p.settings().var_max);
  }
}

}  // namespace

std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::transe: return "transe";
    case ModelKind::transh: return "transh";
    case ModelKind::transr: return "transr";
    case ModelKind::transd: return "transd";
    case ModelKind::rescal: return "rescal";
    case ModelKind::distmult: return "distmult";
    case ModelKind::complex: return "complex";
    case ModelKind::kg2e: return "kg2e";
  }
  return "?";
}

std::optional<ModelKind> parse_model_kind(std::string_view name) {
  for (ModelKind k : kAllKinds)
    if (to_string(k) == name) return k;
  return std::nullopt;
}

std::span<const ModelKind> all_model_kinds() { return kAllKinds; }

std::string registered_model_names() {
  std::string out;
  for (ModelKind k : kAllKinds) {
    if (!out.empty()) out += ", ";
    out += to_string(k);
  }
  return out;
}

LossKind default_loss(ModelKind k) {
  return (k == ModelKind::distmult || k == ModelKind::complex) ? LossKind::softplus
                                                               : LossKind::margin;
}

std::vector<TensorShape> param_shapes(ModelKind k, std::size_t ne, std::size_t nr,
                                      std::size_t d) {
  const auto E = RowIndex::entity;
  const auto R = RowIndex::relation;
  switch (k) {
    case ModelKind::transe:
    case ModelKind::distmult:
      return {{"entity", E, ne, d}, {"relation", R, nr, d}};
    case ModelKind::transh:
      return {{"entity", E, ne, d}, {"relation", R, nr, d}, {"normal", R, nr, d}};
    case ModelKind::transr:
      return {{"entity", E, ne, d}, {"relation", R, nr, d}, {"projection", R, nr, d * d, true}};
    case ModelKind::transd:
      return {{"entity", E, ne, d},
              {"relation", R, nr, d},
              {"entity_proj", E, ne, d},
              {"relation_proj", R, nr, d}};
    case ModelKind::rescal:
      return {{"entity", E, ne, d}, {"relation_matrix", R, nr, d * d, true}};
    case ModelKind::complex:
      return {{"entity_re", E, ne, d},
              {"entity_im", E, ne, d},
              {"relation_re", R, nr, d},
              {"relation_im", R, nr, d}};
    case ModelKind::kg2e:
      return {{"entity_mean", E, ne, d},
              {"relation_mean", R, nr, d},
              {"entity_var", E, ne, d},
              {"relation_var", R, nr, d}};
  }
  return {};
}

ModelParams::ModelParams(ModelKind kind, ModelSettings settings, std::size_t num_entities,
                         std::size_t num_relations, std::size_t dim)
    : kind_(kind),
      settings_(settings),
      num_entities_(num_entities),
      num_relations_(num_relations),
      dim_(dim) {
  for (auto& shape : param_shapes(kind, num_entities, num_relations, dim)) {
    const std::size_t n = shape.rows * shape.row_size;
    tensors_.push_back(Tensor{std::move(shape), std::vector<double>(n, 0.0)});
  }
}

bool ModelParams::all_finite() const {
  for (const auto& t : tensors_)
    for (double v : t.data)
      if (!std::isfinite(v)) return false;
  return true;
}

const double* SparseGrad::TensorGrad::find(std::uint32_t row) const {
  auto it = index.find(row);
  return it == index.end() ? nullptr : values.data() + it->second * row_size;
}

SparseGrad::SparseGrad(const ModelParams& params) {
  for (const auto& t : params.tensors()) {
    TensorGrad g;
    g.row_size = t.shape.row_size;
    tensors_.push_back(std::move(g));
  }
}

std::span<double> SparseGrad::row(std::size_t slot, std::uint32_t row_id) {
  TensorGrad& g = tensors_[slot];
  auto [it, inserted] = g.index.try_emplace(row_id, g.rows.size());
  if (inserted) {
    g.rows.push_back(row_id);
    g.values.resize(g.values.size() + g.row_size, 0.0);
  }
  return g.at(it->second);
}

bool SparseGrad::empty() const { return num_rows() == 0; }

std::size_t SparseGrad::num_rows() const {
  std::size_t n = 0;
  for (const auto& g : tensors_) n += g.rows.size();
  return n;
}

void SparseGrad::clear() {
  for (auto& g : tensors_) {
    g.rows.clear();
    g.values.clear();
    g.index.clear();
  }
}

ModelParams init_params(ModelKind kind, std::size_t num_entities, std::size_t num_relations,
                        std::size_t dim, std::uint64_t seed, ModelSettings settings) {
  if (dim == 0) throw ConfigError("hidden_size must be >= 1");
  if (num_entities == 0 || num_relations == 0)
    throw ConfigError("cannot initialize a model over an empty vocabulary");
  if (!(settings.var_min > 0) || !(settings.var_min <= settings.var_max))
    throw ConfigError("variance bounds must satisfy 0 < var_min <= var_max");

  ModelParams p(kind, settings, num_entities, num_relations, dim);
  Rng rng = make_rng(seed, 0x494e4954ULL);
  for (std::size_t s = 0; s < p.tensors().size(); ++s) {
    Tensor& t = p.tensor(s);
    const bool variance = kind == ModelKind::kg2e && (s == slot::ent_var || s == slot::rel_var);
    if (variance) {
      std::fill(t.data.begin(), t.data.end(), 1.0);
      continue;
    }
    const double fan_in = t.shape.square_matrix ? double(dim) : double(t.shape.rows);
    const double fan_out = t.shape.square_matrix ? double(dim) : double(t.shape.row_size);
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : t.data) v = (2.0 * uniform01(rng) - 1.0) * bound;
  }
  apply_constraints(p);
  return p;
}

void apply_constraints(ModelParams& params) {
  for (std::size_t s = 0; s < params.tensors().size(); ++s)
    for (std::size_t r = 0; r < params.tensor(s).shape.rows; ++r) project_row(params, s, r);
}

void apply_constraints(ModelParams& params, const SparseGrad& touched) {
  const auto& grads = touched.tensors();
  for (std::size_t s = 0; s < grads.size(); ++s)
    for (std::uint32_t r : grads[s].rows) project_row(params, s, r);
}

double score(const ModelParams& params, const Triple& t) { return evaluate(params, t, 0.0, nullptr); }

void accumulate_score_gradient(const ModelParams& params, const Triple& t, double coeff,
                               SparseGrad& grad) {
  evaluate(params, t, coeff, &grad);
}

void score_tails(const ModelParams& params, EntityId head, RelationId relation,
                 std::span<double> out) {
  Triple t{head, relation, 0};
  for (std::size_t e = 0; e < out.size(); ++e) {
    t.tail = static_cast<EntityId>(e);
    out[e] = evaluate(params, t, 0.0, nullptr);
  }
}

void score_heads(const ModelParams& params, RelationId relation, EntityId tail,
                 std::span<double> out) {
  Triple t{0, relation, tail};
  for (std::size_t e = 0; e < out.size(); ++e) {
    t.head = static_cast<EntityId>(e);
    out[e] = evaluate(params, t, 0.0, nullptr);
  }
}

double touched_sq_norm(const ModelParams& params, std::span<const Triple> a,
                       std::span<const Triple> b) {
  std::set<std::pair<std::size_t, std::uint32_t>> rows;
  for (auto split : {a, b})
    for (const Triple& t : split)
      for_each_row(params, t, [&](std::size_t s, std::uint32_t r) { rows.emplace(s, r); });
  double total = 0;
  for (const auto& [s, r] : rows)
    for (double v : params.tensor(s).row(r)) total += v * v;
  return total;
}

double batch_loss_and_gradient(const ModelParams& params, std::span<const Triple> positives,
                               std::span<const Triple> negatives, const LossSpec& spec,
                               SparseGrad* grad) {
  if (positives.size() != negatives.size())
    throw Error("batch positives and negatives are not aligned");
  const std::size_t n = positives.size();
  std::vector<double> pos(n), neg(n);
  for (std::size_t i = 0; i < n; ++i) {
    pos[i] = score(params, positives[i]);
    neg[i] = score(params, negatives[i]);
  }
  const bool regularized = spec.kind == LossKind::softplus && spec.lambda != 0.0;
  const double reg = regularized ? touched_sq_norm(params, positives, negatives) : 0.0;
  const double total = loss(spec, pos, neg, reg);
  if (grad == nullptr) return total;

  for (std::size_t i = 0; i < n; ++i) {
    double cpos = 0, cneg = 0;  // dL/dpos, dL/dneg
    if (spec.kind == LossKind::margin) {
      if (spec.margin - pos[i] + neg[i] > 0) {
        cpos = -1.0;
        cneg = 1.0;
      }
    } else {
      cpos = -sigmoid(-pos[i]);
      cneg = sigmoid(neg[i]);
    }
    if (cpos != 0) evaluate(params, positives[i], cpos, grad);
    if (cneg != 0) evaluate(params, negatives[i], cneg, grad);
  }
  if (regularized) {
    std::set<std::pair<std::size_t, std::uint32_t>> rows;
    for (auto split : {positives, negatives})
      for (const Triple& t : split)
        for_each_row(params, t, [&](std::size_t s, std::uint32_t r) { rows.emplace(s, r); });
    for (const auto& [s, r] : rows) {
      const auto v = params.tensor(s).row(r);
      auto g = grad->row(s, r);
      for (std::size_t i = 0; i < v.size(); ++i) g[i] += 2.0 * spec.lambda * v[i];
    }
  }
  return total;
}

double batch_loss_and_gradient(const ModelParams& params, const Batch& batch,
                               const LossSpec& spec, SparseGrad* grad) {
  return batch_loss_and_gradient(params, batch.positives, batch.negatives, spec, grad);
}

void save_params(const ModelParams& params, const std::filesystem::path& path) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(params.kind()));
  w.u8(params.settings().l1 ? 1 : 0);
  w.f64(params.settings().var_min);
  w.f64(params.settings().var_max);
  w.u64(params.num_entities());
  w.u64(params.num_relations());
  w.u64(params.dim());
  w.u32(static_cast<std::uint32_t>(params.tensors().size()));
  for (const Tensor& t : params.tensors()) {
    w.str(t.shape.name);
    w.u64(t.shape.rows);
    w.u64(t.shape.row_size);
    for (double v : t.data) w.f64(v);
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_checked_file(path, kModelMagic, w.bytes());
}

ModelParams load_params(const std::filesystem::path& path) {
  const auto payload = read_checked_file(path, kModelMagic);
  ByteReader r(payload);
  const std::uint8_t kind_tag = r.u8();
  if (kind_tag >= kAllKinds.size()) throw CacheError("unknown model kind tag in checkpoint");
  ModelSettings settings;
  settings.l1 = r.u8() != 0;
  settings.var_min = r.f64();
  settings.var_max = r.f64();
  const std::uint64_t ne = r.u64(), nr = r.u64(), d = r.u64();
  if (d == 0 || d > (1u << 16) || ne > (1ull << 31) || nr > (1ull << 31))
    throw CacheError("implausible checkpoint dimensions");
  const auto kind = static_cast<ModelKind>(kind_tag);
  const auto shapes = param_shapes(kind, ne, nr, d);
  if (r.u32() != shapes.size()) throw CacheError("checkpoint tensor count mismatch");
  std::uint64_t expected = 0;
  for (const auto& s : shapes) expected += s.rows * s.row_size * 8;
  if (expected > r.remaining()) throw CacheError("truncated checkpoint");

  ModelParams p(kind, settings, ne, nr, d);
  for (Tensor& t : p.tensors()) {
    const std::string name = r.str();
    const std::uint64_t rows = r.u64(), row_size = r.u64();
    if (name != t.shape.name || rows != t.shape.rows || row_size != t.shape.row_size)
      throw CacheError("checkpoint tensor '" + name + "' does not match the model layout");
    for (double& v : t.data) v = r.f64();
  }
  if (r.remaining() != 0) throw CacheError("trailing bytes in checkpoint");
  return p;
}

}  // namespace kge
