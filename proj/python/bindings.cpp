#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <random>

#include <json.hpp>

#include "xmsleep/data.hpp"
#include "xmsleep/dsp.hpp"
#include "xmsleep/errors.hpp"
#include "xmsleep/gradcheck.hpp"
#include "xmsleep/metrics.hpp"
#include "xmsleep/sequence.hpp"
#include "xmsleep/training.hpp"

namespace py = pybind11;
using namespace xmsleep;
using nlohmann::json;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<float> to_vector(const FloatArray& a) { return {a.data(), a.data() + a.size()}; }

py::array_t<float> to_array(const std::vector<float>& v, std::vector<py::ssize_t> shape) {
  py::array_t<float> out(shape);
  std::memcpy(out.mutable_data(), v.data(), v.size() * sizeof(float));
  return out;
}

diff::Tensor<double> to_tensor(const DoubleArray& a) {
  diff::Shape shape(a.shape(), a.shape() + a.ndim());
  return diff::Tensor<double>(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

train::TrainConfig parse_config(train::StageKind stage, const std::string& text) {
  json j = json::object();
  if (!text.empty()) {
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      throw InputError(std::string("train config: ") + e.what());
    }
  }
  auto cfg = train::TrainConfig::from_json(j, train::TrainConfig::for_stage(stage));
  cfg.stage = stage;
  cfg.validate();
  return cfg;
}

train::ModelPtr clone(const train::Model& src) {
  auto m = std::make_unique<train::Model>(src.config, 0);
  for (std::size_t i = 0; i < src.params.size(); ++i) {
    const auto from = src.params[i].tensor.data();
    auto to = m->params[i].tensor.data_mut();
    std::copy(from.begin(), from.end(), to.begin());
  }
  return m;
}

py::list log_rows(const std::vector<train::LogRow>& rows) {
  py::list out;
  for (const auto& r : rows) {
    py::dict d;
    d["step"] = r.step;
    d["loss_epoch"] = r.loss_epoch ? py::cast(*r.loss_epoch) : py::none();
    d["loss_seq"] = r.loss_seq ? py::cast(*r.loss_seq) : py::none();
    d["loss_total"] = r.loss_total;
    d["val_acc"] = r.val_acc ? py::cast(*r.val_acc) : py::none();
    out.append(d);
  }
  return out;
}

std::string metrics_json(const Metrics& m) { return m.to_json().dump(); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Cross-modal masked sleep staging core";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  auto base = m.attr("Error");
  py::register_exception<InputError>(m, "InputError", base);
  py::register_exception<DimensionError>(m, "DimensionError", base);
  py::register_exception<StateError>(m, "StateError", base);
  py::register_exception<FormatError>(m, "FormatError", base);
  py::register_exception<EvaluationError>(m, "EvaluationError", base);

  m.attr("EPOCH_SAMPLES") = dsp::kEpochSamples;
  m.attr("FRAMES") = dsp::kFrames;
  m.attr("BINS") = dsp::kBins;

  // -- dsp ------------------------------------------------------------------
  m.def("stft_spectrogram", [](const FloatArray& epoch) {
    return to_array(dsp::stft_spectrogram(to_vector(epoch)).values,
                    {py::ssize_t(dsp::kFrames), py::ssize_t(dsp::kBins)});
  }, py::arg("epoch"));
  m.def("frame_magnitudes", [](const FloatArray& epoch) {
    const auto v = dsp::frame_magnitudes(to_vector(epoch));
    py::array_t<double> out({py::ssize_t(dsp::kFrames), py::ssize_t(dsp::kBins)});
    std::memcpy(out.mutable_data(), v.data(), v.size() * sizeof(double));
    return out;
  }, py::arg("epoch"));
  m.def("zscore_normalize", [](const FloatArray& x) {
    return to_array(dsp::zscore_normalize(to_vector(x)), {py::ssize_t(x.size())});
  });
  m.def("resample_125_to_100", [](const FloatArray& x) {
    const auto y = dsp::resample_125_to_100(to_vector(x));
    return to_array(y, {py::ssize_t(y.size())});
  });

  // -- data -----------------------------------------------------------------
  py::class_<data::Dataset>(m, "Dataset")
      .def_property_readonly("epoch_count", &data::Dataset::epoch_count)
      .def_property_readonly("recording_ids", [](const data::Dataset& ds) {
        std::vector<std::string> ids;
        for (const auto& r : ds.recordings) ids.push_back(r.id);
        return ids;
      })
      .def_readonly("source", &data::Dataset::source)
      .def("raw", [](const data::Dataset& ds) {
        std::vector<float> flat;
        flat.reserve(ds.epoch_count() * dsp::kEpochSamples);
        for (const auto& r : ds.recordings)
          for (const auto& e : r.epochs) flat.insert(flat.end(), e.raw.begin(), e.raw.end());
        return to_array(flat, {py::ssize_t(ds.epoch_count()), py::ssize_t(dsp::kEpochSamples)});
      }, "All epochs in dataset order, shape [N, 3000].")
      .def("labels", [](const data::Dataset& ds) {
        std::vector<int> out;
        for (const auto& r : ds.recordings)
          for (const auto& e : r.epochs) out.push_back(e.label);
        return py::array_t<int>(py::ssize_t(out.size()), out.data());
      })
      .def("__eq__", [](const data::Dataset& a, const data::Dataset& b) { return data::bitwise_equal(a, b); })
      .def("__len__", &data::Dataset::epoch_count);

  m.def("generate_synthetic", &data::generate_synthetic, py::arg("recordings"), py::arg("epochs"),
        py::arg("seed"));
  m.def("write_dataset", &data::write_dataset, py::arg("dataset"), py::arg("path"));
  m.def("read_dataset", &data::read_dataset, py::arg("path"));
  m.def("read_csv_epochs", &data::read_csv_epochs, py::arg("path"), py::arg("sample_rate") = 100.0);
  m.def("encode_dataset", [](const data::Dataset& ds) { return py::bytes(data::encode_dataset(ds)); });
  m.def("decode_dataset", [](const py::bytes& b) { return data::decode_dataset(std::string(b)); });

  // -- losses and masking ---------------------------------------------------
  m.def("info_nce_loss", [](const DoubleArray& sg, const DoubleArray& sp, double tau) {
    return nn::info_nce_loss(to_tensor(sg), to_tensor(sp), tau).item();
  }, py::arg("zz_sg"), py::arg("zz_sp"), py::arg("tau") = 0.1);
  m.def("sequence_loss", [](const DoubleArray& sg, const DoubleArray& sp, const DoubleArray& cat,
                            const std::vector<int>& labels, std::array<double, 3> weights) {
    nn::HeadOutputs<double> h{to_tensor(sg), to_tensor(sp), to_tensor(cat)};
    return nn::sequence_loss(h, labels, weights).item();
  }, py::arg("logits_sg"), py::arg("logits_sp"), py::arg("logits_cat"), py::arg("labels"),
     py::arg("weights") = nn::kPretrainWeights);
  m.def("mask_count", &nn::mask_count, py::arg("length"), py::arg("ratio"));
  m.def("sample_masks", [](std::size_t length, double ratio, const std::string& mode, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto s = nn::sample_masks(length, ratio, nn::mask_mode_from_string(mode), rng);
    return py::make_tuple(py::array_t<std::uint8_t>(py::ssize_t(length), s.sg.data()),
                          py::array_t<std::uint8_t>(py::ssize_t(length), s.sp.data()));
  }, py::arg("length"), py::arg("ratio"), py::arg("mode") = "independent", py::arg("seed") = 0);

  m.def("compute_metrics", [](const std::vector<int>& truth, const std::vector<int>& pred) {
    return metrics_json(compute_metrics(truth, pred));
  }, py::arg("truth"), py::arg("predicted"));

  m.def("run_gradcheck_suite", [](unsigned seed) {
    std::vector<diff::GradCheckResult> results;
    {
      py::gil_scoped_release unlocked;
      results = diff::run_gradcheck_suite(seed);
    }
    py::list out;
    for (const auto& r : results) {
      py::dict d;
      d["name"] = r.name;
      d["max_rel_error"] = r.max_rel_error;
      d["tolerance"] = r.tolerance;
      d["passed"] = r.passed;
      out.append(d);
    }
    return out;
  }, py::arg("seed") = 7);

  // -- model and training ---------------------------------------------------
  py::class_<train::Model>(m, "Model")
      .def_property_readonly("config", [](const train::Model& mm) { return mm.config.to_json().dump(); })
      .def_property_readonly("parameter_count", [](const train::Model& mm) { return mm.params.scalar_count(); })
      .def("hash", [](const train::Model& mm, const std::vector<std::string>& prefixes) {
        return mm.params.hash(prefixes);
      }, py::arg("prefixes") = std::vector<std::string>{});

  m.def("stage0_train", [](const data::Dataset& ds, const std::string& cfg) {
    auto r = train::stage0_train(ds, parse_config(train::StageKind::Stage0, cfg));
    py::dict out;
    out["final_loss"] = r.final_loss;
    out["train_acc_sg"] = r.train_acc_sg;
    out["train_acc_sp"] = r.train_acc_sp;
    out["log"] = log_rows(r.log);
    return py::make_tuple(std::move(r.model), out);
  }, py::arg("dataset"), py::arg("config_json") = "");
  auto run_stage = [](train::StageKind stage) {
    return [stage](const data::Dataset& ds, const std::string& cfg, const train::Model* init) {
      const auto c = parse_config(stage, cfg);
      auto start = init ? clone(*init) : nullptr;
      auto r = stage == train::StageKind::Pretrain ? train::pretrain_run(ds, c, std::move(start))
                                                   : train::finetune_run(ds, c, std::move(start));
      py::dict out;
      out["steps_run"] = r.steps_run;
      out["stopped_early"] = r.stopped_early;
      out["val_history"] = r.val_history;
      out["log"] = log_rows(r.log);
      return py::make_tuple(std::move(r.model), out);
    };
  };
  m.def("pretrain_run", run_stage(train::StageKind::Pretrain), py::arg("dataset"), py::arg("config_json") = "",
        py::arg("init") = nullptr);
  m.def("finetune_run", run_stage(train::StageKind::Finetune), py::arg("dataset"), py::arg("config_json") = "",
        py::arg("init") = nullptr);
  m.def("evaluate", [](const data::Dataset& ds, const train::Model& model) {
    return metrics_json(train::evaluate(ds, model));
  }, py::arg("dataset"), py::arg("model"));
  m.def("save_model", [](const std::filesystem::path& dir, const train::Model& model, const std::string& stage) {
    train::save_model(dir, model, train::stage_from_string(stage), train::TrainConfig::for_stage(train::stage_from_string(stage)));
  }, py::arg("path"), py::arg("model"), py::arg("stage"));
  m.def("load_model", &train::load_model, py::arg("path"));
}
