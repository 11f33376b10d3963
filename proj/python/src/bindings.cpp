#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "crisisfuse/cli.hpp"
#include "crisisfuse/dataset.hpp"
#include "crisisfuse/evaluation.hpp"
#include "crisisfuse/gradcheck_suite.hpp"
#include "crisisfuse/image.hpp"
#include "crisisfuse/text.hpp"

namespace py = pybind11;
using namespace crisisfuse;

namespace {

py::dict averaged(const AveragedMetrics& m)
{
    py::dict d;
    d["precision"] = m.precision;
    d["recall"] = m.recall;
    d["f1"] = m.f1;
    return d;
}

py::dict report_dict(const std::vector<std::vector<std::uint64_t>>& matrix)
{
    const auto rep = classification_report(ConfusionMatrix(matrix));
    py::dict d;
    d["accuracy"] = rep.accuracy;
    d["weighted"] = averaged(rep.weighted);
    d["macro"] = averaged(rep.macro);
    d["total"] = rep.total;
    py::list per_class;
    for (const auto& c : rep.per_class) {
        py::dict row;
        row["precision"] = c.precision;
        row["recall"] = c.recall;
        row["f1"] = c.f1;
        row["support"] = c.support;
        per_class.append(row);
    }
    d["per_class"] = per_class;
    return d;
}

py::dict split_counts(const std::filesystem::path& annotations, const std::string& task, std::uint64_t seed)
{
    const Task t = parse_task(task);
    const auto splits = curate(parse_annotations(annotations, t), t, seed);
    py::dict out;
    for (const auto& [name, c] : splits.manifest.counts) {
        py::dict row;
        row["train_text"] = c.train_text;
        row["train_image"] = c.train_image;
        row["dev"] = c.dev;
        row["test"] = c.test;
        out[py::str(name)] = row;
    }
    return out;
}

// Penultimate (fc2) activations of a full-width VGG16 loaded from a checkpoint.
py::array_t<float> vgg_fc2(const std::filesystem::path& checkpoint,
                           py::array_t<float, py::array::c_style | py::array::forcecast> images)
{
    if (images.ndim() != 4 || images.shape(1) != 3 || images.shape(2) != images.shape(3)) {
        throw DimensionError("images must be [B,3,S,S]");
    }
    const auto batch = static_cast<std::size_t>(images.shape(0));
    VggConfig cfg;
    cfg.image_size = static_cast<std::size_t>(images.shape(2));
    Rng rng(0);
    Vgg16<float> model(cfg, rng);
    load_pretrained_vgg(model, Checkpoint::load(checkpoint));
    Tensor<float> x(Shape{batch, 3, cfg.image_size, cfg.image_size},
                    Buffer<float>(images.data(), images.data() + images.size()));
    Tensor<float> features;
    {
        py::gil_scoped_release release;
        features = model.forward(x, ImageOutput::fc2, false, rng);
    }
    py::array_t<float> out({features.dim(0), features.dim(1)});
    std::copy(features.values().begin(), features.values().end(), out.mutable_data());
    return out;
}

}  // namespace

PYBIND11_MODULE(_crisisfuse, m)
{
    m.doc() = "Bindings for the crisisfuse C++ core";

    auto base = py::register_exception<Error>(m, "CrisisfuseError", PyExc_RuntimeError);
    py::register_exception<InputError>(m, "InputError", base.ptr());
    py::register_exception<LabelError>(m, "LabelError", base.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

    m.def("preprocess_tweet", &preprocess_tweet, py::arg("text"), "Normalize and tokenize one tweet");
    m.def("stopword_count", [] { return stopwords().size(); });
    m.def("task_classes", [](const std::string& task) { return TaskSchema::get(parse_task(task)).classes; },
          py::arg("task"));
    m.def("merge_label", [](const std::string& label) { return merge_label(label); }, py::arg("label"));

    m.def(
        "confusion_matrix",
        [](const std::vector<int>& gold, const std::vector<int>& predicted, std::size_t classes) {
            return confusion_matrix(gold, predicted, classes).counts();
        },
        py::arg("gold"), py::arg("predicted"), py::arg("classes"));
    m.def("classification_report", &report_dict, py::arg("matrix"),
          "Accuracy plus weighted and macro precision/recall/F1 from counts[gold][predicted]");
    m.def(
        "render_confusion_matrix",
        [](const std::vector<std::vector<std::uint64_t>>& matrix, const std::vector<std::string>& names) {
            return render_confusion_matrix(ConfusionMatrix(matrix), names);
        },
        py::arg("matrix"), py::arg("class_names"));

    m.def("split_counts", &split_counts, py::arg("annotations"), py::arg("task"), py::arg("seed") = 42,
          "Curate an annotation file and return per-class split counts");

    m.def("vgg_fc2", &vgg_fc2, py::arg("checkpoint"), py::arg("images"),
          "fc2 activations of a full-width VGG16 restored from a converted checkpoint");

    m.def("gradcheck", [] {
        py::list out;
        for (const auto& c : run_gradcheck_suite()) {
            out.append(py::make_tuple(c.name, c.report.max_rel_error(), c.report.passed()));
        }
        return out;
    });

    m.def(
        "run_cli",
        [](std::vector<std::string> args) {
            args.insert(args.begin(), "crisisfuse");
            std::vector<char*> argv;
            for (auto& a : args) argv.push_back(a.data());
            py::gil_scoped_release release;
            return run_cli(static_cast<int>(argv.size()), argv.data());
        },
        py::arg("args"), "Run the command-line tool in-process; returns its exit code");
}
