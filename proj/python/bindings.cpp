#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "matter/checkpoint.hpp"
#include "matter/config.hpp"
#include "matter/errors.hpp"
#include "matter/parallel.hpp"
#include "matter/tasks.hpp"
#include "matter/tern.hpp"

namespace py = pybind11;
using namespace matter;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
  std::vector<int> shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<float> to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

RunConfig config_from(const std::string& text, const std::map<std::string, std::string>& overrides) {
  RunConfig cfg = parse_config_text(text, "<python>");
  for (const auto& [k, v] : overrides) set_config_value(cfg, k, v);
  cfg.validate();
  return cfg;
}

MultiSpectralImage image_from(const FloatArray& a) {
  MultiSpectralImage img;
  img.pixels = to_tensor(a);
  img.validate();
  return img;
}

}  // namespace

PYBIND11_MODULE(_matter, m) {
  m.doc() = "Self-supervised material and texture representations (native core)";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<DataError>(m, "DataError", PyExc_IOError);

  m.def("set_threads", &set_thread_count, py::arg("n"));

  m.def("default_config", [] { return serialize_config(RunConfig{}); },
        "Serialised default configuration.");
  m.def(
      "normalize_config",
      [](const std::string& text, const std::map<std::string, std::string>& overrides) {
        return serialize_config(config_from(text, overrides));
      },
      py::arg("text") = "", py::arg("overrides") = std::map<std::string, std::string>{},
      "Parse, apply overrides, validate and re-serialise a configuration.");

  m.def("read_raster", [](const std::filesystem::path& p) { return to_array(read_raster(p)); });
  m.def("write_raster", [](const std::filesystem::path& p, const FloatArray& a) {
    write_raster(p, to_tensor(a));
  });

  m.def(
      "synth",
      [](const std::filesystem::path& out, const std::string& text,
         const std::map<std::string, std::string>& overrides) {
        const SynthOutput o = synth_generate(config_from(text, overrides).synth, out);
        py::dict d;
        d["catalog"] = o.manifest;
        d["mosaic"] = o.mosaic;
        d["mosaic_labels"] = o.mosaic_labels;
        py::list pairs;
        for (const HeldoutPair& p : o.pairs) {
          py::dict e;
          e["name"] = p.name;
          e["before"] = p.before;
          e["after"] = p.after;
          e["change"] = p.change;
          e["labels"] = p.labels;
          pairs.append(e);
        }
        d["pairs"] = pairs;
        return d;
      },
      py::arg("out_dir"), py::arg("config") = "",
      py::arg("overrides") = std::map<std::string, std::string>{});

  m.def(
      "tern_kernel",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> window, double epsilon,
         bool normalize) {
        if (window.ndim() != 3 || window.shape(1) != window.shape(2))
          throw ShapeError("window must be [B,k,k]");
        const int bands = static_cast<int>(window.shape(0)), k = static_cast<int>(window.shape(1));
        const TernKernel kern = compute_kernel(
            std::span<const double>(window.data(), static_cast<std::size_t>(window.size())), bands,
            k, epsilon, normalize);
        py::array_t<double> out({k, k});
        std::copy(kern.weights.begin(), kern.weights.end(), out.mutable_data());
        return out;
      },
      py::arg("window"), py::arg("epsilon") = 1e-6, py::arg("normalize") = true);

  m.def(
      "refine",
      [](const FloatArray& features, const FloatArray& guidance, int blocks) {
        TernConfig cfg;
        cfg.blocks = blocks;
        cfg.validate();
        return to_array(tern_forward(to_tensor(features), to_tensor(guidance), cfg));
      },
      py::arg("features"), py::arg("guidance"), py::arg("blocks") = 10,
      "Refinement stack on features [C,H,W] guided by an image [B,H,W].");

  m.def(
      "otsu",
      [](const FloatArray& values) {
        const Tensor t = to_tensor(values);
        const OtsuResult r = otsu_threshold(t.values());
        return py::make_tuple(r.threshold, r.edge, r.degenerate);
      },
      "Returns (threshold, edge, degenerate).");

  m.def("f1_score", &f1_score, py::arg("precision"), py::arg("recall"));
  m.def("prf1", [](const FloatArray& pred, const FloatArray& truth) {
    const PrfReport r = prf1(to_tensor(pred), to_tensor(truth));
    return py::dict(py::arg("precision") = r.precision, py::arg("recall") = r.recall,
                    py::arg("f1") = r.f1, py::arg("tp") = r.tp, py::arg("fp") = r.fp,
                    py::arg("fn") = r.fn);
  });

  m.def("nce_loss", [](const FloatArray& a, const FloatArray& p, const FloatArray& n, double tau) {
    const Tensor ta = to_tensor(a), tp = to_tensor(p);
    return nce_loss(ta.values(), tp.values(), to_tensor(n), tau);
  });

  py::class_<LoadedCheckpoint>(m, "Checkpoint")
      .def_property_readonly("iteration", [](const LoadedCheckpoint& c) { return c.state.iteration; })
      .def_property_readonly("config", [](const LoadedCheckpoint& c) { return serialize_config(c.config); })
      .def_property_readonly("losses", [](const LoadedCheckpoint& c) { return c.state.loss_history; })
      .def("describe",
           [](const LoadedCheckpoint& c, const FloatArray& patches) {
             return to_array(describe(c.state.model, to_tensor(patches)));
           },
           py::arg("patches"), "Contrastive features for patches [N,B,h,w].")
      .def("change",
           [](const LoadedCheckpoint& c, const FloatArray& before, const FloatArray& after, int win) {
             const ChangeMap map = detect_change(image_from(before), image_from(after),
                                                 c.state.model, win > 0 ? win : c.config.infer_window);
             return py::make_tuple(to_array(map.score), to_array(map.mask), map.threshold);
           },
           py::arg("before"), py::arg("after"), py::arg("window") = 0,
           "Returns (score, mask, threshold).")
      .def("word_map",
           [](const LoadedCheckpoint& c, const FloatArray& image, int win) {
             const WordMap w = word_map(image_from(image), c.state.model,
                                        win > 0 ? win : c.config.infer_window);
             py::array_t<int> out({w.height, w.width});
             std::copy(w.words.begin(), w.words.end(), out.mutable_data());
             return out;
           },
           py::arg("image"), py::arg("window") = 0);

  m.def(
      "word_map_purity",
      [](py::array_t<int, py::array::c_style | py::array::forcecast> words, const FloatArray& labels) {
        if (words.ndim() != 2) throw ShapeError("words must be [H,W]");
        WordMap w;
        w.height = static_cast<int>(words.shape(0));
        w.width = static_cast<int>(words.shape(1));
        w.words.assign(words.data(), words.data() + words.size());
        for (int v : w.words) w.clusters = std::max(w.clusters, v + 1);
        return word_purity(w, to_tensor(labels));
      },
      py::arg("words"), py::arg("labels"), "Per-class purity of a word map against labels [H,W].");

  m.def("load_checkpoint", [](const std::filesystem::path& p) { return load_checkpoint(p); });

  m.def(
      "pretrain",
      [](const std::filesystem::path& catalog, const std::filesystem::path& checkpoint,
         const std::string& text, const std::map<std::string, std::string>& overrides,
         const std::function<void(int, double)>& on_step) {
        const RunConfig cfg = config_from(text, overrides);
        const Corpus corpus = Corpus::load(filter_catalog(read_manifest(catalog)));
        TrainState state = initial_state(cfg);
        PretrainHooks hooks;
        hooks.on_checkpoint = [&](const TrainState& s) { save_checkpoint(checkpoint, s, cfg); };
        if (on_step) hooks.on_step = on_step;
        {
          py::gil_scoped_release release;
          pretrain(corpus, cfg.train_config(), state, hooks);
        }
        return state.loss_history;
      },
      py::arg("catalog"), py::arg("checkpoint"), py::arg("config") = "",
      py::arg("overrides") = std::map<std::string, std::string>{},
      py::arg("on_step") = std::function<void(int, double)>{},
      "Pre-train from a catalog and write the checkpoint; returns the loss history.");
}
