#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fixsynth/allocator.hpp"
#include "fixsynth/attr_autoencoder.hpp"
#include "fixsynth/backtest.hpp"
#include "fixsynth/corr_metrics.hpp"
#include "fixsynth/corrgan.hpp"
#include "fixsynth/error.hpp"
#include "fixsynth/market_data.hpp"
#include "fixsynth/pipeline.hpp"

namespace py = pybind11;
using namespace fixsynth;

namespace {

LinkageMethod parse_method(const std::string& m) {
    if (m == "single") return LinkageMethod::single;
    if (m == "ward") return LinkageMethod::ward;
    throw ValidationError("unknown linkage method '" + m + "' (single or ward)");
}

py::dict metrics_dict(const MetricVector& v) {
    py::dict d;
    const auto a = v.as_array();
    for (std::size_t k = 0; k < kMetricCount; ++k) d[kMetricNames[k]] = a[k] ? py::cast(*a[k]) : py::none();
    return d;
}

RunConfig config_from(const std::string& json_text, const std::string& base_dir) {
    return RunConfig::from_json(nlohmann::json::parse(json_text), base_dir);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Native core: correlation repair and metrics, tracking-error allocation, GAN and encoder-decoder inference, pipeline stages.";

    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_RuntimeError);

    m.def("version", &version_string);

    m.def("correlation_violation", [](const Eigen::MatrixXd& x) { return CorrelationMatrix::violation(x); },
          "First violated correlation invariant, or None.");
    m.def(
        "nearest_correlation",
        [](const Eigen::MatrixXd& x, double tol, std::size_t max_iter) {
            const auto r = nearest_correlation(x, tol, max_iter);
            return py::make_tuple(r.matrix.values(), r.iterations);
        },
        py::arg("matrix"), py::arg("tol") = 1e-8, py::arg("max_iter") = 200);

    m.def("compute_metrics", [](const Eigen::MatrixXd& x) { return metrics_dict(compute_metrics(CorrelationMatrix(x))); });
    m.def("mean_correl", [](const Eigen::MatrixXd& x) { return mean_correl(CorrelationMatrix(x)); });
    m.def("eigen_gini", [](const Eigen::MatrixXd& x) { return eigen_gini(CorrelationMatrix(x)); });
    m.def("perron_frob_sum_neg", [](const Eigen::MatrixXd& x) { return perron_frob_sum_neg(CorrelationMatrix(x)); });
    m.def(
        "cophenetic_corr",
        [](const Eigen::MatrixXd& x, const std::string& method) { return cophenetic_corr(CorrelationMatrix(x), parse_method(method)); },
        py::arg("matrix"), py::arg("method") = "single");
    m.def(
        "linkage",
        [](const Eigen::MatrixXd& x, const std::string& method) {
            const auto t = linkage_matrix(CorrelationMatrix(x), parse_method(method));
            std::vector<std::tuple<std::size_t, std::size_t, double, std::size_t>> rows;
            for (const auto& mg : t.merges) rows.emplace_back(mg.left, mg.right, mg.height, mg.size);
            return rows;
        },
        py::arg("matrix"), py::arg("method") = "single", "Merges as (left, right, height, size).");

    m.def(
        "solve_tracking",
        [](const Eigen::MatrixXd& returns, const Eigen::VectorXd& mu, std::size_t bonds, std::size_t bench, double target) {
            SimulationSet set;
            set.returns = returns;
            set.mu = mu;
            set.asset_ids = default_asset_ids(static_cast<std::size_t>(returns.cols()));
            std::vector<AssetKind> kinds(static_cast<std::size_t>(returns.cols()), AssetKind::fx);
            for (std::size_t i = 0; i < bonds && i < kinds.size(); ++i) kinds[i] = AssetKind::bond;
            const auto s = solve_portfolio(build_problem(set, kinds, bench, target));
            py::dict d;
            d["weights"] = s.weights;
            d["objective"] = s.objective;
            d["status"] = to_string(s.status);
            d["iterations"] = s.iterations;
            return d;
        },
        py::arg("returns"), py::arg("mu"), py::arg("bonds"), py::arg("bench"), py::arg("target"),
        "Minimum tracking-error weights; the first `bonds` columns are bonds, the rest FX.");

    m.def(
        "paired_t_test",
        [](const std::vector<double>& baseline, const std::vector<double>& variant) {
            const auto r = paired_t_test(baseline, variant);
            return py::make_tuple(r.t, r.p);
        },
        "(t, one-sided p) for d = baseline - variant.");
    m.def("student_t_cdf", &student_t_cdf);

    m.def(
        "sample_gan",
        [](const std::string& path, std::size_t count, std::uint64_t seed) {
            const auto gan = load_gan(path);
            const auto s = sample_gan(gan, count, seed);
            std::vector<Eigen::MatrixXd> out;
            for (const auto& c : s.matrices) out.push_back(c.values());
            return out;
        },
        py::arg("path"), py::arg("count"), py::arg("seed"));
    m.def(
        "raw_diagonal_mean",
        [](const std::string& path, std::size_t count, std::uint64_t seed) { return raw_diagonal_mean(load_gan(path), count, seed); },
        py::arg("path"), py::arg("count"), py::arg("seed"));
    m.def(
        "generate_attributes",
        [](const std::string& path, const Eigen::MatrixXd& corr) {
            const auto model = load_attr_model(path);
            const auto a = generate(model, CorrelationMatrix(corr, model.asset_ids.empty() ? default_asset_ids(corr.rows()) : model.asset_ids));
            py::dict d;
            d["volatility"] = a.volatility;
            d["expected_return"] = a.expected_return;
            d["forward_return"] = a.forward_return;
            return d;
        },
        py::arg("path"), py::arg("corr"));

    m.def("default_config", [] { return RunConfig::defaults().to_json().dump(); }, "Desk-scale defaults as JSON text.");
    m.def(
        "effective_config",
        [](const std::string& json_text, const std::string& base_dir) { return config_from(json_text, base_dir).to_json().dump(); },
        py::arg("config_json"), py::arg("base_dir") = "");
    m.def(
        "run_stage",
        [](const std::string& stage, const std::string& json_text, const std::string& out, const std::string& base_dir) {
            RunConfig cfg = config_from(json_text, base_dir);
            if (!out.empty()) cfg.out = out;
            nlohmann::json r;
            {
                py::gil_scoped_release release;
                if (stage == "ingest") r = stage_ingest(cfg);
                else if (stage == "synth-corpus") r = stage_synth_corpus(cfg);
                else if (stage == "train-gan") r = stage_train_gan(cfg);
                else if (stage == "sample") r = stage_sample(cfg);
                else if (stage == "train-ae") r = stage_train_ae(cfg);
                else if (stage == "generate-dataset") r = stage_generate_dataset(cfg);
                else if (stage == "metrics") r = stage_metrics(cfg);
                else if (stage == "backtest") r = stage_backtest(cfg);
                else if (stage == "report") r = stage_report(cfg);
                else if (stage == "run") r = run_pipeline(cfg);
                else throw ValidationError("unknown stage '" + stage + "'");
            }
            return r.dump();
        },
        py::arg("stage"), py::arg("config_json"), py::arg("out") = "", py::arg("base_dir") = "");
    m.def("init_logging", &init_logging);
}
