#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cmath>

#include "drseg/config.hpp"
#include "drseg/error.hpp"
#include "drseg/gradcheck.hpp"
#include "drseg/manifest.hpp"
#include "drseg/metrics.hpp"
#include "drseg/pdgr.hpp"
#include "drseg/spsd.hpp"
#include "drseg/synthgen.hpp"
#include "drseg/tensor.hpp"
#include "drseg/train.hpp"
#include "drseg/ugaf.hpp"

namespace py = pybind11;
using namespace drseg;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

FeatureMap to_map(const Array& a) {
  if (a.ndim() != 3) throw DimensionError("expected an (h, w, c) array");
  FeatureMap f(a.shape(0), a.shape(1), a.shape(2));
  std::copy(a.data(), a.data() + a.size(), f.data.begin());
  return f;
}

Array from_map(const FeatureMap& f) {
  Array out({f.h, f.w, f.c});
  std::copy(f.data.begin(), f.data.end(), out.mutable_data());
  return out;
}

LabelGrid to_labels(const IntArray& a) {
  if (a.ndim() != 2) throw DimensionError("expected an (h, w) label array");
  LabelGrid g(a.shape(0), a.shape(1));
  std::copy(a.data(), a.data() + a.size(), g.data.begin());
  return g;
}

py::array_t<float> read_npy(const std::filesystem::path& p) {
  const auto t = read_tensor(p);
  py::array_t<float> out(t.shape());
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

void write_npy(const py::array_t<float, py::array::c_style | py::array::forcecast>& a, const std::filesystem::path& p) {
  std::vector<std::size_t> shape(a.shape(), a.shape() + a.ndim());
  write_tensor(Tensor(shape, std::vector<float>(a.data(), a.data() + a.size())), p);
}

PrototypeBank bank_from(const Array& a) {
  if (a.ndim() != 3) throw DimensionError("expected an (n_classes, n_p, c) array");
  PrototypeBank b{static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
                  static_cast<std::size_t>(a.shape(2)), std::vector<double>(a.data(), a.data() + a.size()), {}};
  return b;
}

std::string dump(const nlohmann::json& j) { return j.dump(); }

} // namespace

PYBIND11_MODULE(_drseg, m) {
  auto base = py::register_exception<Error>(m, "Error");
  auto io = py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<MalformedHeaderError>(m, "MalformedHeaderError", io.ptr());
  py::register_exception<UnsupportedDtypeError>(m, "UnsupportedDtypeError", io.ptr());
  py::register_exception<TruncatedPayloadError>(m, "TruncatedPayloadError", io.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<ArgumentError>(m, "ArgumentError", base.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", base.ptr());

  m.attr("manifest_version") = manifest_version;

  m.def("read_npy", &read_npy, py::arg("path"));
  m.def("write_npy", &write_npy, py::arg("array"), py::arg("path"));

  m.def(
      "synth",
      [](const std::filesystem::path& out, std::size_t scenes, std::size_t h, std::size_t w, std::size_t channels,
         std::size_t dino_dim, int classes, double noise, std::uint64_t seed) {
        SceneParams p;
        p.h = h;
        p.w = w;
        p.channels = channels;
        p.dino_dim = dino_dim;
        p.n_classes = classes;
        p.noise = noise;
        const auto d = from_synthetic(generate_dataset(scenes, p, seed));
        save_dataset(d, out);
        return d.semantic_truth;
      },
      py::arg("out"), py::arg("scenes") = 4, py::arg("h") = 12, py::arg("w") = 12, py::arg("channels") = 32,
      py::arg("dino_dim") = 16, py::arg("classes") = 4, py::arg("noise") = 0.0, py::arg("seed") = 0,
      "Write a synthetic dataset directory and return its semantic channel indices.");

  m.def(
      "dataset_info",
      [](const std::filesystem::path& root) {
        const auto d = load_dataset(root);
        py::dict info;
        info["scenes"] = d.scenes.size();
        info["n_classes"] = d.n_classes();
        info["channels"] = d.channels();
        info["class_names"] = d.class_names;
        std::vector<std::string> ids;
        for (const auto& s : d.scenes) ids.push_back(s.id);
        info["ids"] = ids;
        return info;
      },
      py::arg("root"));

  m.def("channel_entropy", [](const Array& bank) { return channel_entropy(bank_from(bank)); }, py::arg("bank"));
  m.def("channel_similarity", [](const Array& bank) { return channel_similarity(bank_from(bank)); }, py::arg("bank"));
  m.def(
      "channel_scores",
      [](const std::vector<double>& h, const std::vector<double>& s, double lambda) {
        return channel_scores(h, s, lambda).score;
      },
      py::arg("entropy"), py::arg("similarity"), py::arg("lambda_") = 0.3);
  m.def(
      "partition",
      [](const std::filesystem::path& root, double rho, double lambda, int n_prototypes, std::uint64_t seed) {
        RunConfig c;
        c.rho = rho;
        c.lambda = lambda;
        c.n_prototypes = n_prototypes;
        c.seed = seed;
        return dump(to_json(compute_partition(load_dataset(root), c)));
      },
      py::arg("root"), py::arg("rho") = 0.5, py::arg("lambda_") = 0.3, py::arg("n_prototypes") = 64,
      py::arg("seed") = 0, "Channel partition of a dataset directory as a JSON string.");
  m.def("semantic_channel_count", &semantic_channel_count, py::arg("rho"), py::arg("c"));

  m.def(
      "build_graph",
      [](const Array& dino, int top_k, double sigma_f, double sigma_s) {
        return dump(to_json(build_graph(to_map(dino), GraphOptions{sigma_f, sigma_s, top_k})));
      },
      py::arg("dino"), py::arg("top_k") = 75, py::arg("sigma_f") = 2.0, py::arg("sigma_s") = 0.05);

  m.def(
      "correlation",
      [](const Array& f, const Array& text) {
        if (text.ndim() != 2) throw DimensionError("expected an (n_classes, c) text array");
        TextEmbeddings t{static_cast<std::size_t>(text.shape(0)), static_cast<std::size_t>(text.shape(1)),
                         std::vector<double>(text.data(), text.data() + text.size())};
        return from_map(correlation(to_map(f), t).values);
      },
      py::arg("features"), py::arg("text"));
  m.def(
      "uncertainty",
      [](const Array& c_ori, double temperature) {
        const auto u = uncertainty({to_map(c_ori), Branch::original}, temperature);
        Array out({u.h, u.w});
        std::copy(u.values.begin(), u.values.end(), out.mutable_data());
        return out;
      },
      py::arg("c_ori"), py::arg("temperature") = 0.07);

  m.def(
      "evaluate_labels",
      [](const std::vector<IntArray>& truth, const std::vector<IntArray>& pred, std::size_t n_classes) {
        if (truth.size() != pred.size()) throw ArgumentError("truth and prediction lists differ in length");
        ConfusionMatrix cm(n_classes);
        for (std::size_t i = 0; i < truth.size(); ++i) cm.add(to_labels(truth[i]), to_labels(pred[i]));
        return dump(to_json(make_report(cm)));
      },
      py::arg("truth"), py::arg("pred"), py::arg("n_classes"), "Metrics report as a JSON string.");

  m.def(
      "gradcheck",
      [](double tolerance) {
        GradcheckOptions opt;
        opt.tolerance = tolerance;
        return dump(to_json(gradcheck(make_gradcheck_instance(RunConfig{}), opt)));
      },
      py::arg("tolerance") = 1e-4);

  m.def("default_config", [] { return dump(to_json(RunConfig{})); });
}
