#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <json.hpp>

#include "tabsynth/attacks.hpp"
#include "tabsynth/data.hpp"
#include "tabsynth/encoder.hpp"
#include "tabsynth/error.hpp"
#include "tabsynth/gan.hpp"
#include "tabsynth/metrics.hpp"
#include "tabsynth/privacy.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace tabsynth;

namespace {

// JSON crosses the boundary as text; the Python package wraps it with the json module.
json parse(const std::string& text) {
  if (text.empty()) return json::object();
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
}

std::optional<std::pair<std::size_t, std::size_t>> condition_of(const GanModel& m, const std::optional<std::string>& column,
                                                                 const std::optional<std::string>& value) {
  if (!column) return std::nullopt;
  const auto& schema = m.encoder.schema();
  const std::size_t col = schema.index_of(*column);
  const auto& labels = schema[col].categorical_values;
  const auto it = std::find(labels.begin(), labels.end(), value.value_or(""));
  if (it == labels.end()) throw Error(ErrorCode::InvalidCondition, "unknown class for column " + *column);
  return std::make_pair(col, static_cast<std::size_t>(it - labels.begin()));
}

std::string account(const std::string& spec_json) {
  const privacy::PrivacySpec spec = privacy::PrivacySpec::from_json(parse(spec_json));
  spec.validate();
  const std::size_t t = spec.iterations ? *spec.iterations : privacy::max_iterations(spec);
  privacy::RdpLedger ledger(spec.max_order);
  if (t > 0) ledger.compose(privacy::step_curve(spec), t);
  return privacy::make_report(spec, ledger).to_json().dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Conditional tabular GAN with privacy accounting and audits";

  static py::exception<Error> error(m, "Error", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      // args = (code, message) so callers can branch on the code.
      PyErr_SetObject(error.ptr(), py::make_tuple(std::string(to_string(e.code())), e.what()).ptr());
    }
  });

  py::class_<TableSchema>(m, "Schema")
      .def_static("from_json", [](const std::string& s) { return TableSchema::from_json(parse(s)); })
      .def_static("load", &TableSchema::load)
      .def("to_json", [](const TableSchema& s) { return s.to_json().dump(); })
      .def("__len__", &TableSchema::size)
      .def_property_readonly("names", [](const TableSchema& s) {
        std::vector<std::string> out;
        for (const auto& c : s.columns()) out.push_back(c.name);
        return out;
      })
      .def_property_readonly("target_index", &TableSchema::target_index);

  py::class_<Table>(m, "Table")
      .def_static("from_csv", &parse_csv, py::arg("text"), py::arg("schema"))
      .def_static("load", &load_csv, py::arg("path"), py::arg("schema"))
      .def("to_csv", &to_csv)
      .def("save", &write_csv)
      .def_property_readonly("schema", &Table::schema)
      .def_property_readonly("num_rows", &Table::num_rows)
      .def("__len__", &Table::num_rows)
      .def("numeric_column", &Table::numeric_column)
      .def("label", &Table::label)
      .def("subsample", &subsample_rows, py::arg("n"), py::arg("seed"))
      .def("split", &stratified_split, py::arg("ratio"), py::arg("seed"))
      .def("__eq__", [](const Table& a, const Table& b) { return a == b; });

  py::class_<DataTransformer>(m, "Encoder")
      .def_static(
          "fit",
          [](const Table& t, std::uint64_t seed) {
            EncoderOptions o;
            o.vgm.seed = seed;
            return DataTransformer::fit(t, o);
          },
          py::arg("table"), py::arg("seed") = 0)
      .def("encode", &DataTransformer::encode)
      .def("decode", &DataTransformer::decode)
      .def("layout", [](const DataTransformer& e) { return e.layout().to_json().dump(); })
      .def_property_readonly("width", [](const DataTransformer& e) { return e.layout().width; })
      .def_property_readonly("cond_width", [](const DataTransformer& e) { return e.layout().cond_width; })
      .def_property_readonly("square_side", [](const DataTransformer& e) { return e.layout().square_side(); })
      .def("to_json", [](const DataTransformer& e) { return e.to_json().dump(); });

  py::class_<GanModel>(m, "Model")
      .def_static("load", &GanModel::load)
      .def("save", &GanModel::save)
      .def("config", [](const GanModel& g) { return g.config.to_json().dump(); })
      .def("loss_trace_csv", [](const GanModel& g) { return loss_trace_csv(g.trace); })
      .def(
          "sample",
          [](const GanModel& g, std::size_t n, std::uint64_t seed, std::optional<std::string> column,
             std::optional<std::string> value) { return sample(g, n, condition_of(g, column, value), seed); },
          py::arg("n"), py::arg("seed") = 0, py::arg("column") = py::none(), py::arg("value") = py::none(),
          py::call_guard<py::gil_scoped_release>())
      .def(
          "sample_encoded",
          [](const GanModel& g, std::size_t n, std::uint64_t seed) { return sample_encoded(g, n, std::nullopt, seed); },
          py::arg("n"), py::arg("seed") = 0);

  m.def(
      "train", [](const Table& t, const std::string& cfg) { return train(t, TrainConfig::from_json(parse(cfg))); },
      py::arg("table"), py::arg("config") = "", py::call_guard<py::gil_scoped_release>());

  m.def(
      "train_private",
      [](const Table& t, const std::string& cfg, const std::string& spec) {
        TrainConfig c = TrainConfig::from_json(parse(cfg));
        c.loss_mode = LossMode::WganGp;
        auto run = privacy::train_private(t, c, privacy::PrivacySpec::from_json(parse(spec)));
        return std::make_pair(std::move(run.model), run.report.to_json().dump());
      },
      py::arg("table"), py::arg("config") = "", py::arg("privacy") = "", py::call_guard<py::gil_scoped_release>());

  m.def("account", &account, py::arg("privacy"));
  m.def("rdp_to_dp", &privacy::rdp_to_dp, py::arg("order"), py::arg("rdp"), py::arg("delta"));

  m.def("jsd", [](const std::vector<double>& p, const std::vector<double>& q) { return jsd(p, q); });
  m.def(
      "wasserstein",
      [](const std::vector<double>& x, const std::vector<double>& y, bool normalize) {
        return wasserstein_1d(x, y, normalize);
      },
      py::arg("x"), py::arg("y"), py::arg("normalize") = false);
  m.def("similarity", [](const Table& r, const Table& s) { return similarity(r, s, true).to_json().dump(); });
  m.def("diff_corr", &diff_corr);
  m.def("dcr_nndr", [](const Table& r, const Table& s) { return dcr_nndr(r, s).to_json().dump(); });
  m.def(
      "ml_utility",
      [](const Table& real_train, const Table& synth_train, const Table& test, const std::vector<std::string>& models,
         std::uint64_t seed) {
        std::vector<ml::ModelKind> kinds;
        for (const auto& k : models) kinds.push_back(ml::model_kind_from_string(k));
        return ml_utility(real_train, synth_train, test, kinds, seed).to_json().dump();
      },
      py::arg("real_train"), py::arg("synth_train"), py::arg("test"),
      py::arg("models") = std::vector<std::string>{"decision_tree", "random_forest", "logistic_regression", "mlp"},
      py::arg("seed") = 0);

  m.def("features_naive", &attacks::feature_extract_naive);
  m.def("features_corr", &attacks::feature_extract_corr);
  m.def(
      "membership_audit",
      [](const Table& pool, std::size_t reference_size, std::size_t repetitions, const std::string& train_cfg,
         const std::string& attack_cfg) {
        const auto fn = attacks::gan_train_fn(TrainConfig::from_json(parse(train_cfg)));
        return attacks::membership_audit(fn, pool, reference_size, repetitions,
                                         attacks::MembershipAttackConfig::from_json(parse(attack_cfg)))
            .to_json()
            .dump();
      },
      py::arg("pool"), py::arg("reference_size"), py::arg("repetitions") = 5, py::arg("train_config") = "",
      py::arg("attack_config") = "", py::call_guard<py::gil_scoped_release>());
  m.def(
      "attribute_audit",
      [](const Table& reference, const std::string& sensitive, std::size_t repetitions, const std::string& train_cfg,
         const std::string& attack_cfg) {
        const auto fn = attacks::gan_train_fn(TrainConfig::from_json(parse(train_cfg)));
        return attacks::attribute_audit(fn, reference, reference.schema().index_of(sensitive), repetitions,
                                        attacks::AttributeAttackConfig::from_json(parse(attack_cfg)))
            .to_json()
            .dump();
      },
      py::arg("reference"), py::arg("sensitive"), py::arg("repetitions") = 5, py::arg("train_config") = "",
      py::arg("attack_config") = "", py::call_guard<py::gil_scoped_release>());
}
