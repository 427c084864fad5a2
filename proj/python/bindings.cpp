// Python bindings for the main pipeline operations: synthetic clip
// generation, metrics, model loading and inference/propagation.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "segfuse/experiment.hpp"

namespace py = pybind11;
using namespace segfuse;

namespace {

// Soft masks cross the boundary as nested lists of floats; binary masks as
// nested lists of 0/1 ints. Small and simple beats zero-copy here.
std::vector<std::vector<double>> soft_to_list(const SoftMask& m) {
    std::vector<std::vector<double>> rows(m.height, std::vector<double>(m.width));
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) rows[y][x] = m.at(x, y);
    return rows;
}

std::vector<std::vector<int>> mask_to_list(const BinaryMask& m) {
    std::vector<std::vector<int>> rows(m.height, std::vector<int>(m.width));
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) rows[y][x] = m.at(x, y);
    return rows;
}

BinaryMask mask_from_list(const std::vector<std::vector<int>>& rows) {
    BinaryMask m;
    m.height = static_cast<int>(rows.size());
    m.width = m.height ? static_cast<int>(rows[0].size()) : 0;
    m.pixels.resize(static_cast<size_t>(m.width) * m.height);
    for (int y = 0; y < m.height; ++y) {
        if (static_cast<int>(rows[y].size()) != m.width)
            throw DomainError("ragged mask rows");
        for (int x = 0; x < m.width; ++x) m.at(x, y) = rows[y][x] ? 1 : 0;
    }
    return m;
}

}  // namespace

PYBIND11_MODULE(_segfuse, m) {
    m.doc() = "orchard video segmentation pipeline (C++ core)";

    py::register_exception<ShapeError>(m, "ShapeError");
    py::register_exception<DomainError>(m, "DomainError");
    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<ContractError>(m, "ContractError");
    py::register_exception<MissingArtifactError>(m, "MissingArtifactError");
    py::register_exception<IoError>(m, "IoError");

    py::class_<SceneConfig>(m, "SceneConfig")
        .def(py::init<>())
        .def_readwrite("width", &SceneConfig::width)
        .def_readwrite("height", &SceneConfig::height)
        .def_readwrite("n_fruits", &SceneConfig::n_fruits)
        .def_readwrite("fruit_radius_min", &SceneConfig::fruit_radius_min)
        .def_readwrite("fruit_radius_max", &SceneConfig::fruit_radius_max)
        .def_readwrite("occluder_density", &SceneConfig::occluder_density)
        .def_readwrite("motion_amplitude", &SceneConfig::motion_amplitude)
        .def_readwrite("lighting_drift", &SceneConfig::lighting_drift)
        .def_readwrite("clip_length", &SceneConfig::clip_length)
        .def_readwrite("seed", &SceneConfig::seed)
        .def("validate", &SceneConfig::validate);

    py::class_<VideoClip>(m, "VideoClip")
        .def_property_readonly("n_frames",
                               [](const VideoClip& c) { return c.frames.size(); })
        .def_readonly("frame_rate", &VideoClip::frame_rate)
        .def("gt_mask", [](const VideoClip& c, size_t t) {
            if (t >= c.gt_masks.size()) throw py::index_error();
            return mask_to_list(c.gt_masks[t]);
        });

    m.def("generate_clip", &generate_clip, py::arg("config"));

    m.def(
        "precision",
        [](const std::vector<std::vector<int>>& pred, const std::vector<std::vector<int>>& gt) {
            return precision(mask_from_list(pred), mask_from_list(gt));
        },
        py::arg("pred"), py::arg("gt"));
    m.def(
        "iou",
        [](const std::vector<std::vector<int>>& pred, const std::vector<std::vector<int>>& gt) {
            return iou(mask_from_list(pred), mask_from_list(gt));
        },
        py::arg("pred"), py::arg("gt"));
    m.def(
        "boundary_f",
        [](const std::vector<std::vector<int>>& pred, const std::vector<std::vector<int>>& gt,
           int tol) { return boundary_f(mask_from_list(pred), mask_from_list(gt), tol); },
        py::arg("pred"), py::arg("gt"), py::arg("tolerance_px"));
    m.def("default_boundary_tolerance", &default_boundary_tolerance, py::arg("width"),
          py::arg("height"));

    py::class_<SegModel>(m, "SegModel")
        .def("predict_soft",
             [](const SegModel& model, const Image& frame) {
                 return soft_to_list(predict_soft(model, frame));
             })
        .def("predict_mask", [](const SegModel& model, const Image& frame, double thr) {
            return mask_to_list(predict_mask(model, frame, thr));
        }, py::arg("frame"), py::arg("threshold") = 0.5);
    m.def("load_segnet", &load_segnet, py::arg("path"));

    py::class_<Image>(m, "Image")
        .def_readonly("width", &Image::width)
        .def_readonly("height", &Image::height);
    m.def("read_png_rgb", &read_png_rgb, py::arg("path"));
    m.def("clip_frame", [](const VideoClip& c, size_t t) {
        if (t >= c.frames.size()) throw py::index_error();
        return c.frames[t];
    });

    py::class_<CycleModel>(m, "CycleModel")
        .def("propagate",
             [](const CycleModel& model, const std::vector<std::vector<int>>& first_mask,
                const VideoClip& clip, int top_k) {
                 std::vector<std::vector<std::vector<double>>> out;
                 for (const auto& s :
                      propagate_labels(model, mask_from_list(first_mask), clip, top_k))
                     out.push_back(soft_to_list(s));
                 return out;
             },
             py::arg("first_mask"), py::arg("clip"), py::arg("top_k") = 5);
    m.def("load_cycle_model", &load_cycle_model, py::arg("path"));

    m.def("threshold", [](const std::vector<std::vector<double>>& soft, double thr) {
        SoftMask s;
        s.height = static_cast<int>(soft.size());
        s.width = s.height ? static_cast<int>(soft[0].size()) : 0;
        s.values.resize(static_cast<size_t>(s.width) * s.height);
        for (int y = 0; y < s.height; ++y)
            for (int x = 0; x < s.width; ++x) s.at(x, y) = soft[y][x];
        return mask_to_list(threshold_mask(s, thr));
    }, py::arg("soft"), py::arg("threshold") = 0.5);
}
