// Python bindings: enough surface to drive the pipeline and inspect results
// from notebooks — config round trip, dataset generation, stage runners,
// campaign summaries, and direct policy queries.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "handeye/config.hpp"
#include "handeye/pipeline.hpp"

namespace py = pybind11;
using namespace handeye;

namespace {

config::RunConfig config_from_text(const std::string& text) {
    return config::parse_config(text);
}

std::array<double, 9> q_for_theta(const std::string& control_ckpt,
                                  const std::array<double, 5>& theta) {
    const auto net = nn::load_checkpoint(control_ckpt);
    vision::ThetaVec th{};
    for (int i = 0; i < 5; ++i) th[static_cast<std::size_t>(i)] = theta[static_cast<std::size_t>(i)];
    const auto q = control::q_values(net, th);
    std::array<double, 9> out{};
    for (int i = 0; i < 9; ++i) out[static_cast<std::size_t>(i)] = q[static_cast<std::size_t>(i)];
    return out;
}

py::dict summary_to_dict(const eval::CampaignSummary& s) {
    py::dict d;
    d["n"] = s.n;
    d["failed"] = s.failed;
    d["d_med_cm"] = s.d_med_cm;
    d["d_q3_cm"] = s.d_q3_cm;
    d["d_med_px"] = s.d_med_px;
    d["d_q3_px"] = s.d_q3_px;
    d["rbar"] = s.rbar;
    d["outliers_cm"] = s.outliers_cm;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "modular hand-eye reaching stack: pipeline driver bindings";

    py::register_exception<UsageError>(m, "UsageError");
    py::register_exception<DataError>(m, "DataError");
    py::register_exception<DivergenceError>(m, "DivergenceError");

    m.def("default_config", [] { return config::serialize_config(config::RunConfig{}); },
          "Canonical text form of the default configuration.");
    m.def("config_hash",
          [](const std::string& text) { return config::config_hash(config_from_text(text)); },
          py::arg("config_text"));
    m.def("round_trip_config",
          [](const std::string& text) { return config::serialize_config(config_from_text(text)); },
          py::arg("config_text"), "Parse config text and serialize it back in canonical form.");

    m.def("gen_data",
          [](const std::string& text, bool force) {
              return pipeline::stage_gen_data(config_from_text(text), force);
          },
          py::arg("config_text"), py::arg("force") = false);
    m.def("train_perception",
          [](const std::string& text) {
              return pipeline::stage_train_perception(config_from_text(text));
          },
          py::arg("config_text"));
    m.def("train_control",
          [](const std::string& text) {
              return pipeline::stage_train_control(config_from_text(text));
          },
          py::arg("config_text"));
    m.def("train_finetune",
          [](const std::string& text) {
              const auto [pp, cp] = pipeline::stage_train_finetune(config_from_text(text));
              return py::make_tuple(pp, cp);
          },
          py::arg("config_text"));
    m.def("evaluate",
          [](const std::string& text, const std::vector<std::string>& variants) {
              const auto outcome = pipeline::stage_eval(config_from_text(text), variants);
              py::list rows;
              for (const auto& [name, s] : outcome.summaries) {
                  py::dict d = summary_to_dict(s);
                  d["nets"] = name;
                  rows.append(d);
              }
              return rows;
          },
          py::arg("config_text"), py::arg("variants") = std::vector<std::string>{});
    m.def("write_manifest",
          [](const std::string& text) { pipeline::write_manifest(config_from_text(text)); },
          py::arg("config_text"));

    m.def("dataset_info", [](const std::string& path) {
        const auto ds = vision::load_dataset(path);
        int sim = 0, pseudo = 0;
        for (const auto& it : ds.items)
            (it.domain == vision::Domain::sim ? sim : pseudo) += 1;
        py::dict d;
        d["items"] = static_cast<int>(ds.items.size());
        d["n_sim"] = sim;
        d["n_pseudo_real"] = pseudo;
        return d;
    });
    m.def("checkpoint_param_count", [](const std::string& path) {
        return nn::load_checkpoint(path).param_count();
    });
    m.def("q_values", &q_for_theta, py::arg("control_ckpt"), py::arg("theta"),
          "Q-vector of a control checkpoint at a normalized scene vector.");
    m.def("px_per_cm", [] { return eval::kPxPerCm; });
}
