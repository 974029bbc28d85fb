#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pmf/dataio.hpp"
#include "pmf/evalkit.hpp"
#include "pmf/geometry.hpp"
#include "pmf/gradcheck.hpp"
#include "pmf/losses.hpp"
#include "pmf/network.hpp"
#include "pmf/train.hpp"

namespace py = pybind11;
using namespace pmf;

namespace {

py::array_t<double> tensor_to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Tensor array_to_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  std::vector<int> shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = static_cast<int>(a.shape(i));
  std::vector<double> data(a.data(), a.data() + a.size());
  return Tensor::from_data(std::move(shape), std::move(data));
}

LabelImage array_to_labels(const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw ShapeError("label image must be 2-D");
  LabelImage out(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), out.ids.begin());
  return out;
}

Map2D array_to_map(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw ShapeError("map must be 2-D");
  Map2D out(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), out.v.begin());
  return out;
}

py::array_t<double> map_to_array(const Map2D& m) {
  py::array_t<double> out({static_cast<py::ssize_t>(m.height), static_cast<py::ssize_t>(m.width)});
  std::copy(m.v.begin(), m.v.end(), out.mutable_data());
  return out;
}

geom::PointCloud array_to_cloud(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2 || a.shape(1) != 4) throw ShapeError("points must be (N, 4)");
  geom::PointCloud cloud;
  cloud.points.resize(static_cast<size_t>(a.shape(0)));
  for (py::ssize_t i = 0; i < a.shape(0); ++i) {
    cloud.points[static_cast<size_t>(i)] = {a.at(i, 0), a.at(i, 1), a.at(i, 2), a.at(i, 3)};
  }
  return cloud;
}

py::dict scan_to_dict(const geom::ProjectedScan& scan) {
  py::dict out;
  out["features"] = tensor_to_array(scan.features);
  py::array_t<int32_t> p2p({static_cast<py::ssize_t>(scan.height),
                            static_cast<py::ssize_t>(scan.width)});
  std::copy(scan.pixel_to_point.begin(), scan.pixel_to_point.end(), p2p.mutable_data());
  out["pixel_to_point"] = p2p;
  py::array_t<int32_t> labels({static_cast<py::ssize_t>(scan.height),
                               static_cast<py::ssize_t>(scan.width)});
  std::copy(scan.label_image.ids.begin(), scan.label_image.ids.end(), labels.mutable_data());
  out["label_image"] = labels;
  py::array_t<bool> mask({static_cast<py::ssize_t>(scan.height),
                          static_cast<py::ssize_t>(scan.width)});
  for (size_t i = 0; i < scan.valid_mask.size(); ++i) mask.mutable_data()[i] = scan.valid_mask[i] != 0;
  out["valid_mask"] = mask;
  py::array_t<int32_t> ptp({static_cast<py::ssize_t>(scan.point_to_pixel.size()),
                            static_cast<py::ssize_t>(2)});
  for (size_t i = 0; i < scan.point_to_pixel.size(); ++i) {
    ptp.mutable_data()[2 * i] = scan.point_to_pixel[i].h;
    ptp.mutable_data()[2 * i + 1] = scan.point_to_pixel[i].w;
  }
  out["point_to_pixel"] = ptp;
  return out;
}

geom::Calibration calib_from_args(const py::array_t<double, py::array::c_style | py::array::forcecast>& t,
                                  const py::array_t<double, py::array::c_style | py::array::forcecast>& r0,
                                  int height, int width) {
  if (t.size() != 12 || r0.size() != 9) {
    throw ShapeError("calibration expects T with 12 values and R0 with 9");
  }
  geom::Calibration calib;
  std::copy(t.data(), t.data() + 12, calib.T.m.begin());
  std::copy(r0.data(), r0.data() + 9, calib.R0.m.begin());
  calib.image_height = height;
  calib.image_width = width;
  return calib;
}

py::dict record_to_dict(const io::ScanRecord& rec) {
  py::dict out;
  py::array_t<double> pts({static_cast<py::ssize_t>(rec.cloud.size()), static_cast<py::ssize_t>(4)});
  for (size_t i = 0; i < rec.cloud.size(); ++i) {
    pts.mutable_data()[4 * i + 0] = rec.cloud.points[i].x;
    pts.mutable_data()[4 * i + 1] = rec.cloud.points[i].y;
    pts.mutable_data()[4 * i + 2] = rec.cloud.points[i].z;
    pts.mutable_data()[4 * i + 3] = rec.cloud.points[i].r;
  }
  out["points"] = pts;
  py::array_t<int32_t> labels(static_cast<py::ssize_t>(rec.labels.size()));
  std::copy(rec.labels.begin(), rec.labels.end(), labels.mutable_data());
  out["labels"] = labels;
  out["image"] = tensor_to_array(rec.image);
  py::array_t<double> t({static_cast<py::ssize_t>(3), static_cast<py::ssize_t>(4)});
  std::copy(rec.calib.T.m.begin(), rec.calib.T.m.end(), t.mutable_data());
  out["T"] = t;
  py::array_t<double> r0({static_cast<py::ssize_t>(3), static_cast<py::ssize_t>(3)});
  std::copy(rec.calib.R0.m.begin(), rec.calib.R0.m.end(), r0.mutable_data());
  out["R0"] = r0;
  out["image_size"] = py::make_tuple(rec.calib.image_height, rec.calib.image_width);
  out["scan_id"] = rec.scan_id;
  return out;
}

}  // namespace

PYBIND11_MODULE(_pmf, m) {
  m.doc() = "Camera-LiDAR fusion segmentation pipeline";
  m.attr("__version__") = "0.1.0";
  m.attr("IGNORE") = kIgnoreLabel;

  py::register_exception<DataError>(m, "DataError");
  py::register_exception<ShapeError>(m, "ShapeError");
  py::register_exception<ConfigError>(m, "ConfigError");

  m.def("synth_scene", [](uint64_t seed, int points, int height, int width, int classes) {
          return record_to_dict(io::synth_scene_generate(seed, points, height, width, classes));
        },
        py::arg("seed"), py::arg("points") = 1800, py::arg("height") = 32,
        py::arg("width") = 32, py::arg("classes") = 4);

  m.def("synth_dataset", [](uint64_t seed, int scenes, int points, int height, int width,
                            int classes) {
          py::list out;
          for (const auto& rec : io::synth_dataset_generate(seed, scenes, points, height,
                                                            width, classes)) {
            out.append(record_to_dict(rec));
          }
          return out;
        },
        py::arg("seed"), py::arg("scenes") = 8, py::arg("points") = 1800,
        py::arg("height") = 32, py::arg("width") = 32, py::arg("classes") = 4);

  m.def("project_perspective",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& points,
           const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& labels,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& t,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& r0,
           int height, int width) {
          geom::PointCloud cloud = array_to_cloud(points);
          std::vector<int32_t> labs(labels.data(), labels.data() + labels.size());
          return scan_to_dict(geom::perspective_project_cloud(
              cloud, labs, calib_from_args(t, r0, height, width)));
        },
        py::arg("points"), py::arg("labels"), py::arg("T"), py::arg("R0"),
        py::arg("height"), py::arg("width"));

  m.def("project_spherical",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& points,
           const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& labels,
           double fov_up, double fov_down, int height, int width) {
          geom::PointCloud cloud = array_to_cloud(points);
          std::vector<int32_t> labs(labels.data(), labels.data() + labels.size());
          return scan_to_dict(geom::spherical_project_cloud(cloud, labs, fov_up, fov_down,
                                                            height, width));
        },
        py::arg("points"), py::arg("labels"), py::arg("fov_up") = 16.0,
        py::arg("fov_down") = -16.0, py::arg("height") = 32, py::arg("width") = 32);

  m.def("entropy_map", [](const py::array_t<double, py::array::c_style | py::array::forcecast>& probs) {
          return map_to_array(loss::entropy_map(array_to_tensor(probs)));
        },
        py::arg("probs"));

  m.def("confidence_map", [](const py::array_t<double, py::array::c_style | py::array::forcecast>& probs) {
          return map_to_array(loss::confidence_map(array_to_tensor(probs)));
        },
        py::arg("probs"));

  m.def("importance_map",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& gate,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& other,
           double tau) {
          return map_to_array(loss::importance_map(array_to_map(gate), array_to_map(other), tau));
        },
        py::arg("gate_confidence"), py::arg("other_confidence"), py::arg("tau") = 0.7);

  m.def("kl_map",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& p,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& q, double eps) {
          return map_to_array(loss::kl_map(array_to_tensor(p), array_to_tensor(q), eps));
        },
        py::arg("p"), py::arg("q"), py::arg("epsilon") = 1e-8);

  m.def("focal_loss",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& probs,
           const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& labels,
           double gamma, double eps) {
          return loss::focal_loss(array_to_tensor(probs), array_to_labels(labels), gamma, eps)
              .value.value();
        },
        py::arg("probs"), py::arg("labels"), py::arg("gamma") = 2.0,
        py::arg("epsilon") = 1e-8);

  m.def("lovasz_softmax",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& probs,
           const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& labels) {
          return loss::lovasz_softmax(array_to_tensor(probs), array_to_labels(labels))
              .value.value();
        },
        py::arg("probs"), py::arg("labels"));

  m.def("cosine_lr", &train::cosine_lr, py::arg("step"), py::arg("total_steps"),
        py::arg("base_lr") = 0.001);

  m.def("miou",
        [](const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& pred,
           const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& truth,
           int num_classes) {
          std::vector<int32_t> p(pred.data(), pred.data() + pred.size());
          std::vector<int32_t> t(truth.data(), truth.data() + truth.size());
          eval::ConfusionMatrix cm(num_classes);
          accumulate_confusion(cm, p, t);
          eval::IouReport rep = iou_report(cm);
          py::dict out;
          py::array_t<double> iou(static_cast<py::ssize_t>(rep.iou.size()));
          std::copy(rep.iou.begin(), rep.iou.end(), iou.mutable_data());
          out["iou"] = iou;
          out["miou"] = rep.miou;
          out["empty"] = rep.empty;
          return out;
        },
        py::arg("pred"), py::arg("truth"), py::arg("num_classes"));

  m.def("train_synthetic",
        [](uint64_t seed, int scenes, int points, int height, int width, int classes,
           int steps, int batch_size, bool fusion, bool perception, double tau, double gamma,
           double lambda, const std::string& checkpoint_path) {
          train::TrainConfig cfg;
          cfg.network.num_classes = classes;
          cfg.total_steps = steps;
          cfg.batch_size = batch_size;
          cfg.seed = seed;
          cfg.fusion = fusion;
          cfg.perception = perception;
          cfg.loss.tau = tau;
          cfg.loss.gamma_perception = gamma;
          cfg.loss.lambda_lovasz = lambda;
          cfg.validate();
          auto records = io::synth_dataset_generate(seed, scenes, points, height, width, classes);
          auto samples = train::prepare_dataset(records, cfg);
          net::TSNet model(cfg.network, cfg.seed);
          train::Trainer trainer(model, cfg);
          auto logs = trainer.run(samples);

          NoGradGuard guard;
          size_t hits = 0, total = 0;
          for (const auto& sample : samples) {
            const Tensor image4 = reshape(sample.scan.image, {1, 3, height, width});
            const Tensor lidar4 = reshape(sample.proj.features, {1, 5, height, width});
            net::CameraOutput cam = model.camera_forward(image4);
            Tensor probs = model.lidar_forward(lidar4, cfg.fusion ? &cam.features : nullptr,
                                               cfg.fusion);
            LabelImage pred = eval::argmax_image(reshape(probs, {classes, height, width}));
            for (size_t i = 0; i < sample.proj.label_image.ids.size(); ++i) {
              const int32_t lab = sample.proj.label_image.ids[i];
              if (lab == kIgnoreLabel) continue;
              ++total;
              hits += (pred.ids[i] == lab);
            }
          }
          if (!checkpoint_path.empty()) {
            std::map<std::string, std::string> extra;
            extra["train_config"] = cfg.canonical_string();
            model.save_checkpoint(checkpoint_path, extra);
          }

          py::dict out;
          py::array_t<double> lidar_total(static_cast<py::ssize_t>(logs.size()));
          py::array_t<double> camera_total(static_cast<py::ssize_t>(logs.size()));
          py::array_t<double> lidar_perception(static_cast<py::ssize_t>(logs.size()));
          for (size_t i = 0; i < logs.size(); ++i) {
            lidar_total.mutable_data()[i] = logs[i].lidar.total;
            camera_total.mutable_data()[i] = logs[i].camera.total;
            lidar_perception.mutable_data()[i] = logs[i].lidar.perception;
          }
          out["lidar_total"] = lidar_total;
          out["camera_total"] = camera_total;
          out["lidar_perception"] = lidar_perception;
          out["valid_pixel_accuracy"] =
              total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
          return out;
        },
        py::arg("seed") = 1, py::arg("scenes") = 4, py::arg("points") = 1200,
        py::arg("height") = 32, py::arg("width") = 32, py::arg("classes") = 4,
        py::arg("steps") = 100, py::arg("batch_size") = 2, py::arg("fusion") = true,
        py::arg("perception") = true, py::arg("tau") = 0.7, py::arg("gamma") = 0.5,
        py::arg("lambda") = 1.0, py::arg("checkpoint_path") = std::string());

  m.def("gradcheck", [](uint64_t seed) {
          py::dict out;
          for (const auto& r : gradcheck::run_all(seed)) out[r.op.c_str()] = r.max_rel_err;
          return out;
        },
        py::arg("seed") = 1);
}
