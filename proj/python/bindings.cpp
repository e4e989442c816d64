#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>

#include "mdmf/errors.hpp"
#include "mdmf/harness.hpp"

namespace py = pybind11;
using namespace mdmf;

namespace {

RunConfig config_from(const py::dict& overrides) {
  KeyValues kv;
  for (const auto& [k, v] : overrides) kv[py::str(k)] = py::str(v);
  RunConfig cfg = from_key_values(kv);
  apply_env_overrides(cfg);
  return cfg;
}

py::object parse_json(const std::string& line) { return py::module_::import("json").attr("loads")(line); }

py::dict eval_dict(const EvalResult& r) {
  py::dict d;
  d["mean_accuracy"] = r.mean_accuracy;
  d["ci95"] = r.ci95;
  d["episodes"] = r.episodes;
  return d;
}

py::dict forward_dict(Trainer& tr, std::uint64_t index, bool train_split) {
  ag::NoGradGuard guard;
  const Episode ep = train_split ? tr.train_episode(index) : tr.eval_episode(index);
  const auto out = tr.model().forward_episode(ep);
  py::dict d;
  d["class_set"] = ep.class_set;
  d["query_truth"] = ep.query_truth;
  d["probs"] = out.probs.value();
  d["distances"] = out.distances.fused.value();
  d["predictions"] = out.predictions;
  d["accuracy"] = out.accuracy;
  d["loss_main"] = out.main_loss.item();
  d["loss_g2l"] = out.loss_g2l.item();
  d["loss_l2g"] = out.loss_l2g.item();
  d["loss_total"] = out.total_loss.item();
  d["omega_g"] = out.partition.omega_g;
  d["omega_l"] = out.partition.omega_l;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Few-shot video classification core";

  static py::exception<Error> base(m, "MdmfError", PyExc_RuntimeError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<ParamError>(m, "ParamError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<CapacityError>(m, "CapacityError", base.ptr());
  py::register_exception<SplitViolation>(m, "SplitViolation", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);

  m.def("default_config", [] { return to_key_values(RunConfig{}); },
        "All config keys with their default values, as strings.");

  py::class_<Trainer>(m, "Trainer")
      .def(py::init([](const py::dict& config) { return Trainer(config_from(config)); }),
           py::arg("config") = py::dict())
      .def_static("load", [](const std::filesystem::path& p) { return Trainer::load(p); }, py::arg("path"))
      .def("train",
           [](Trainer& tr, std::optional<int> episodes) {
             py::list out;
             const MetricsSink sink = [&](const std::string& l) { out.append(parse_json(l)); };
             if (episodes) {
               tr.train_episodes(*episodes, sink);
             } else {
               tr.train(sink);
             }
             return out;
           },
           py::arg("episodes") = py::none(), "Train and return one metrics dict per episode.")
      .def("evaluate",
           [](Trainer& tr, std::optional<int> episodes) {
             return eval_dict(tr.evaluate(episodes.value_or(tr.config().eval_episodes)));
           },
           py::arg("episodes") = py::none())
      .def("forward", &forward_dict, py::arg("index"), py::arg("train_split") = false,
           "Run one episode without gradients.")
      .def("save", &Trainer::save, py::arg("path"))
      .def("export_embeddings", &Trainer::export_embeddings, py::arg("episodes"), py::arg("path"))
      .def_property_readonly("config", [](const Trainer& tr) { return to_key_values(tr.config()); })
      .def_property_readonly("episodes_done", [](const Trainer& tr) { return tr.state().episodes_done; })
      .def_property_readonly("optimizer_steps", [](const Trainer& tr) { return tr.state().optimizer_steps; })
      .def_property_readonly("parameters", [](Trainer& tr) {
        py::dict d;
        for (const auto& [name, v] : tr.model().parameters()) d[py::str(name)] = v.value();
        return d;
      });

  m.def("ablate",
        [](const py::dict& config, const py::object& grid) {
          std::vector<std::pair<std::string, KeyValues>> rows;
          if (py::isinstance<py::str>(grid)) {
            rows = preset_grid(grid.cast<std::string>());
          } else {
            for (const auto& item : grid) {
              KeyValues kv;
              std::string name;
              for (const auto& [k, v] : item.cast<py::dict>()) {
                const std::string key = py::str(k);
                if (key == "name") {
                  name = py::str(v);
                } else {
                  kv[key] = py::str(v);
                }
              }
              rows.emplace_back(name, kv);
            }
          }
          py::list out;
          for (const auto& r : ablate(config_from(config), rows)) out.append(parse_json(r.to_json()));
          return out;
        },
        py::arg("config"), py::arg("grid"), "Grid is a preset name or a list of config-override dicts.");
  m.def("preset_grid", &preset_grid, py::arg("name"));

  m.def("synth",
        [](const std::filesystem::path& out, int classes, int per_class, int d_raw, int frames, int motif_len,
           double noise, std::uint64_t seed, std::optional<int> signal_dims) {
          SynthOptions o;
          o.num_classes = classes;
          o.per_class = per_class;
          o.d_raw = d_raw;
          o.frames = frames;
          o.motif_len = motif_len;
          o.noise_sigma = noise;
          o.seed = seed;
          o.signal_dims = signal_dims.value_or(std::min(o.signal_dims, d_raw / 2));
          const auto split = synth_generate(o);
          write_manifest(split, out);
          return split.sample_count();
        },
        py::arg("out"), py::arg("classes") = 10, py::arg("per_class") = 20, py::arg("d_raw") = 64,
        py::arg("frames") = 32, py::arg("motif_len") = 8, py::arg("noise") = 0.05, py::arg("seed") = 0,
        py::arg("signal_dims") = py::none(),
        "Write a synthetic dataset manifest and feature files; returns the sample count.");

  m.def("otam",
        [](const ag::Matrix& cost, double gamma, bool bidirectional) {
          return otam_value(cost, {gamma, bidirectional});
        },
        py::arg("cost"), py::arg("gamma") = 0.1, py::arg("bidirectional") = true);
  m.def("prompt_distribution",
        [](const std::vector<double>& sims, double t) { return pps::prompt_distribution(sims, t).probs; },
        py::arg("sims"), py::arg("temperature") = 0.1);
  m.def("sample_frame_indices", &sample_frame_indices, py::arg("length"), py::arg("m") = 8,
        py::arg("deterministic") = true, py::arg("seed") = 0);
}
