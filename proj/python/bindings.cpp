#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>
#include <optional>

#include "kge/config.hpp"
#include "kge/error.hpp"
#include "kge/evaluator.hpp"
#include "kge/kg_store.hpp"
#include "kge/models.hpp"
#include "kge/projector.hpp"
#include "kge/trainer.hpp"
#include "kge/tuner.hpp"

namespace py = pybind11;
using namespace kge;

namespace {

// dicts cross the boundary as JSON text
Json to_json(const py::handle& obj) {
  if (obj.is_none()) return Json::object();
  const auto dumps = py::module_::import("json").attr("dumps");
  return Json::parse(dumps(obj).cast<std::string>());
}

py::object from_json(const Json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

py::dict metrics_dict(const MetricsReport& m) {
  py::dict d;
  d["num_triples"] = m.num_triples;
  d["mean_rank_raw"] = m.mean_rank_raw;
  d["mean_rank_filtered"] = m.mean_rank_filtered;
  for (std::size_t i = 0; i < kHitsAt.size(); ++i) {
    const std::string k = std::to_string(kHitsAt[i]);
    d[("hits@" + k + "_raw").c_str()] = m.hits_raw[i];
    d[("hits@" + k + "_filtered").c_str()] = m.hits_filtered[i];
  }
  return d;
}

py::array_t<double> to_array(const DenseMatrix& m) {
  py::array_t<double> a({m.rows, m.cols});
  std::copy(m.data.begin(), m.data.end(), a.mutable_data());
  return a;
}

std::vector<std::tuple<std::string, std::string, std::string>> labelled(const KgDataset& d,
                                                                        Split s) {
  std::vector<std::tuple<std::string, std::string, std::string>> out;
  const Vocab& v = d.vocab();
  for (const Triple& t : split_triples(d, s))
    out.emplace_back(v.entity(t.head), v.relation(t.relation), v.entity(t.tail));
  return out;
}

Split split_arg(const std::string& name) {
  const auto s = parse_split(name);
  if (!s) throw ConfigError("unknown split '" + name + "' (train, valid, test)");
  return *s;
}

struct PyTrainResult {
  ModelParams params;
  TrainRecord record;
  RunConfig config;
};

py::dict trial_dict(std::size_t index, const Trial& t) { return from_json(trial_to_json(index, t)); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Knowledge graph embedding models: training, evaluation, tuning and projection.";

  auto base = py::register_exception<Error>(m, "KgeError", PyExc_RuntimeError);
  py::register_exception<UserError>(m, "UserError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<NoResultError>(m, "NoResultError", base.ptr());

  m.def("model_kinds", [] {
    std::vector<std::string> out;
    for (ModelKind k : all_model_kinds()) out.emplace_back(to_string(k));
    return out;
  });

  py::class_<KgDataset>(m, "Dataset")
      .def_property_readonly("num_entities", &KgDataset::num_entities)
      .def_property_readonly("num_relations", &KgDataset::num_relations)
      .def_property_readonly("entities", [](const KgDataset& d) { return d.vocab().entities(); })
      .def_property_readonly("relations", [](const KgDataset& d) { return d.vocab().relations(); })
      .def("triples", [](const KgDataset& d, const std::string& split) { return labelled(d, split_arg(split)); },
           py::arg("split") = "train")
      .def("__repr__", [](const KgDataset& d) {
        return "<Dataset entities=" + std::to_string(d.num_entities()) + " relations=" +
               std::to_string(d.num_relations()) + " train=" + std::to_string(d.train().size()) + ">";
      });

  m.def("load_dataset", [](const std::filesystem::path& dir) { return load_dataset(dir); }, py::arg("path"),
        "Loads train.txt, valid.txt and test.txt (tab-separated head, relation, tail).");

  py::class_<ModelParams>(m, "Model")
      .def_property_readonly("kind", [](const ModelParams& p) { return std::string(to_string(p.kind())); })
      .def_property_readonly("dim", &ModelParams::dim)
      .def_property_readonly("num_entities", &ModelParams::num_entities)
      .def_property_readonly("num_relations", &ModelParams::num_relations)
      .def("tensors", [](const ModelParams& p) {
        py::dict d;
        for (const Tensor& t : p.tensors()) {
          DenseMatrix m(t.shape.rows, t.shape.row_size);
          m.data = t.data;
          d[t.shape.name.c_str()] = to_array(m);
        }
        return d;
      })
      .def("score",
           [](const ModelParams& p, std::int32_t h, std::int32_t r, std::int32_t t) {
             if (h < 0 || t < 0 || r < 0 || static_cast<std::size_t>(std::max(h, t)) >= p.num_entities() ||
                 static_cast<std::size_t>(r) >= p.num_relations())
               throw py::index_error("triple ids out of range");
             return score(p, Triple{h, r, t});
           },
           py::arg("head"), py::arg("relation"), py::arg("tail"))
      .def("save", [](const ModelParams& p, const std::filesystem::path& path) { save_params(p, path); })
      .def_static("load", [](const std::filesystem::path& path) { return load_params(path); });

  py::class_<PyTrainResult>(m, "TrainResult")
      .def_readonly("model", &PyTrainResult::params)
      .def_property_readonly("epoch_loss", [](const PyTrainResult& r) { return r.record.epoch_loss; })
      .def_property_readonly("epoch_seconds", [](const PyTrainResult& r) { return r.record.epoch_seconds; })
      .def_property_readonly("validation", [](const PyTrainResult& r) {
        py::list out;
        for (const auto& [epoch, report] : r.record.validation) out.append(py::make_tuple(epoch, metrics_dict(report)));
        return out;
      })
      .def_property_readonly("config", [](const PyTrainResult& r) {
        Json j = Json::object();
        for (const auto& k : config_keys()) j[k.name] = k.get(r.config);
        return from_json(j);
      });

  m.def(
      "train",
      [](const KgDataset& d, const py::object& config, const py::object& on_epoch) {
        RunConfig c = load_config(Json::object(), to_json(config));
        TrainOptions opts = c.train_options();
        // shared_ptr copies don't touch the Python refcount while the GIL is released
        auto callback = std::make_shared<py::object>(on_epoch);
        if (!on_epoch.is_none())
          opts.on_epoch = [callback](const EpochSummary& s) {
            py::gil_scoped_acquire gil;
            (*callback)(s.epoch, s.mean_loss);
          };
        std::optional<TrainResult> r;
        {
          py::gil_scoped_release release;
          r = train(d, c.model, c.hp, opts);
        }
        return PyTrainResult{std::move(r->params), std::move(r->record), std::move(c)};
      },
      py::arg("dataset"), py::arg("config") = py::none(), py::arg("on_epoch") = py::none(),
      "Trains a model; config takes the same keys as a JSON config file.");

  m.def(
      "evaluate",
      [](const ModelParams& p, const KgDataset& d, const std::string& split, std::size_t workers,
         std::size_t max_triples) {
        MetricsReport r;
        {
          py::gil_scoped_release release;
          r = evaluate(p, d, split_arg(split), workers, max_triples);
        }
        return metrics_dict(r);
      },
      py::arg("model"), py::arg("dataset"), py::arg("split") = "test", py::arg("workers") = 1,
      py::arg("max_triples") = 0);

  m.def(
      "tune",
      [](const KgDataset& d, const py::object& config, const py::object& space, std::size_t budget,
         std::uint64_t seed, bool random_search) {
        const RunConfig c = load_config(Json::object(), to_json(config));
        const SearchSpace s = space.is_none() ? SearchSpace::default_space() : SearchSpace::from_json(to_json(space));
        TuneOptions opts;
        opts.seed = seed;
        opts.random_search = random_search;
        TuneResult r;
        {
          py::gil_scoped_release release;
          r = tune_model(d, c, s, budget, opts);
        }
        const HyperParams golden = apply_assignment(r.best.assignment, c.hp);
        py::dict out;
        out["best"] = trial_dict(0, r.best);
        out["golden"] = from_json(golden_json(golden));
        out["golden_setting"] = format_golden_setting(golden);
        py::list trials;
        for (std::size_t i = 0; i < r.history.size(); ++i) trials.append(trial_dict(i, r.history[i]));
        out["trials"] = trials;
        return out;
      },
      py::arg("dataset"), py::arg("config") = py::none(), py::arg("space") = py::none(), py::arg("budget") = 20,
      py::arg("seed") = 0, py::arg("random_search") = false);

  m.def(
      "project",
      [](const ModelParams& p, const KgDataset& d, const std::string& method, double perplexity,
         std::size_t iterations, std::size_t max_points, std::uint64_t seed) {
        ProjectionSettings s;
        const auto pm = parse_projection_method(method);
        if (!pm) throw ConfigError("unknown projection method '" + method + "' (pca, tsne)");
        s.method = *pm;
        s.perplexity = perplexity;
        s.iterations = iterations;
        s.max_points = max_points;
        ProjectionResult r;
        {
          py::gil_scoped_release release;
          r = project(embedding_points(p, d.vocab(), max_points, seed), s, seed);
        }
        py::dict out;
        out["labels"] = r.labels;
        out["kinds"] = r.kinds;
        out["coords"] = to_array(r.coords);
        out["objective"] = r.final_objective;
        return out;
      },
      py::arg("model"), py::arg("dataset"), py::arg("method") = "tsne", py::arg("perplexity") = 30.0,
      py::arg("iterations") = 1000, py::arg("max_points") = 2000, py::arg("seed") = 0);

  m.def("golden_preset", [](const std::string& model) { return from_json(golden_json(golden_preset(model))); },
        py::arg("model"));
  m.def("format_golden_setting",
        [](const py::object& setting) { return format_golden_setting(apply_golden_json(to_json(setting))); },
        py::arg("setting"));
}
