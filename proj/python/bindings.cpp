#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "snsteg/config.hpp"
#include "snsteg/experiments.hpp"
#include "snsteg/gradcheck.hpp"
#include "snsteg/normalization.hpp"
#include "snsteg/training.hpp"

namespace py = pybind11;
using namespace snsteg;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

template <typename T>
Tensor<T> to_tensor(const py::array_t<T, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 4) throw ShapeError("expected a 4-d (N, C, H, W) array");
    const Shape s{std::size_t(a.shape(0)), std::size_t(a.shape(1)), std::size_t(a.shape(2)),
                  std::size_t(a.shape(3))};
    return Tensor<T>(s, std::vector<T>(a.data(), a.data() + a.size()));
}

template <typename T>
py::array_t<T> to_array(const Tensor<T>& t) {
    const Shape s = t.shape();
    py::array_t<T> out({s.n, s.c, s.h, s.w});
    std::memcpy(out.mutable_data(), t.storage().data(), t.size() * sizeof(T));
    return out;
}

ImageGray to_image(const U8Array& a) {
    if (a.ndim() != 2) throw ShapeError("expected a 2-d grayscale array");
    ImageGray img(std::size_t(a.shape(1)), std::size_t(a.shape(0)));
    std::memcpy(img.pixels.data(), a.data(), img.pixels.size());
    return img;
}

py::array_t<std::uint8_t> from_image(const ImageGray& img) {
    py::array_t<std::uint8_t> out({img.height, img.width});
    std::memcpy(out.mutable_data(), img.pixels.data(), img.pixels.size());
    return out;
}

Tensor<float> images_from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() == 3) {
        const Shape s{std::size_t(a.shape(0)), 1, std::size_t(a.shape(1)), std::size_t(a.shape(2))};
        return Tensor<float>(s, std::vector<float>(a.data(), a.data() + a.size()));
    }
    return to_tensor<float>(a);
}

RunConfig config_from_dict(const std::map<std::string, std::string>& kv) {
    RunConfig c;
    for (const auto& [k, v] : kv) c.set(k, v);
    return c;
}

}  // namespace

PYBIND11_MODULE(_snsteg, m) {
    m.doc() = "CNN steganalysis with shared normalization";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

    m.def("synth_cover", [](std::uint64_t seed, std::size_t size, double smoothing) {
        return from_image(synth_cover(seed, size, smoothing));
    }, py::arg("seed"), py::arg("size") = 64, py::arg("smoothing") = 5.0);
    m.def("embed_pm1", [](const U8Array& cover, double rate, std::uint64_t seed) {
        return from_image(embed_pm1(to_image(cover), rate, seed));
    }, py::arg("cover"), py::arg("rate"), py::arg("seed"));

    m.def("detection_error", [](const std::vector<int>& predictions, const std::vector<int>& labels) {
        const DetectionError e = detection_error(predictions, labels);
        return py::dict(py::arg("pe") = e.pe, py::arg("pmd") = e.pmd, py::arg("pfa") = e.pfa);
    }, py::arg("predictions"), py::arg("labels"));
    m.def("lr_schedule", [](std::size_t epoch, std::size_t total, double hi, double lo) {
        return lr_schedule(epoch, total, hi, lo);
    }, py::arg("epoch"), py::arg("total_epochs"), py::arg("lr_high") = 0.01, py::arg("lr_low") = 0.001);

    m.def("bn_forward", [](const F64Array& x, double eps) {
        const Tensor<double> t = to_tensor<double>(x);
        BNParams<double> p(t.shape().c);
        p.eps = eps;
        return to_array(bn_forward(t, p).output);
    }, py::arg("x"), py::arg("eps") = kNormEpsilon, "Batch normalization with gamma=1, beta=0 and batch statistics.");
    m.def("sn_forward", [](const F64Array& x, std::vector<double> mean, std::vector<double> std, double eps) {
        NormStats<double> s{std::move(mean), std::move(std), eps, true};
        return to_array(sn_forward(to_tensor<double>(x), s));
    }, py::arg("x"), py::arg("mean"), py::arg("std"), py::arg("eps") = kNormEpsilon);
    m.def("sn_update_stats", [](std::vector<double> mean, std::vector<double> std, const std::vector<double>& bm,
                                const std::vector<double>& bs, double alpha) {
        const NormStats<double> s{std::move(mean), std::move(std), kNormEpsilon, true};
        const auto u = sn_update_stats<double>(s, bm, bs, alpha);
        return py::make_tuple(u.mean, u.std);
    }, py::arg("mean"), py::arg("std"), py::arg("batch_mean"), py::arg("batch_std"), py::arg("alpha"));

    m.def("gradcheck", [](std::uint64_t seed) {
        py::list rows;
        for (const auto& r : run_gradcheck_suite(seed))
            rows.append(py::dict(py::arg("name") = r.name, py::arg("max_rel_err") = r.max_rel_err,
                                 py::arg("tolerance") = r.tolerance, py::arg("passed") = r.passed));
        return rows;
    }, py::arg("seed") = 1);

    m.def("experiment_names", &experiment_names);
    m.def("experiment_defaults", [](const std::string& name) { return experiment_defaults(name).values(); });
    m.def("run_experiment", [](const std::string& name, const std::map<std::string, std::string>& overrides,
                               const std::filesystem::path& out_dir) {
        py::gil_scoped_release release;
        return run_experiment(name, config_from_dict(overrides), out_dir);
    }, py::arg("name"), py::arg("overrides"), py::arg("out_dir"));

    py::class_<Network<float>>(m, "Network")
        .def(py::init([](const std::map<std::string, std::string>& config, std::uint64_t seed) {
                 RunConfig c = default_run_config();
                 c.merge(config_from_dict(config));
                 return Network<float>(network_config_from(c), seed);
             }),
             py::arg("config") = std::map<std::string, std::string>{}, py::arg("seed") = 1)
        .def_property_readonly("config", [](const Network<float>& n) { return n.config().to_map(); })
        .def("parameter_count", &Network<float>::parameter_count)
        .def("norm_stats_ready", &Network<float>::norm_stats_ready)
        .def("init_norm_stats", [](Network<float>& n, const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
            n.init_norm_stats(images_from_array(a));
        }, py::arg("images"))
        .def("forward", [](Network<float>& n, const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
            return to_array(n.forward(images_from_array(a), Mode::Eval));
        }, py::arg("images"), "Evaluation-mode logits, shape (N, 2, 1, 1).")
        .def("predict", [](Network<float>& n, const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
            const auto p = n.predict(images_from_array(a));
            return py::make_tuple(p.labels, p.stego_probability);
        }, py::arg("images"));
}
