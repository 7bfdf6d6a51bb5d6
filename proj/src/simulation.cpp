#include "fixsynth/simulation.hpp"

#include <cmath>

#include "fixsynth/binary_io.hpp"
#include "fixsynth/parallel.hpp"
#include "fixsynth/rng.hpp"

namespace fixsynth {

std::string to_string(DatasetLabel l) {
    switch (l) {
        case DatasetLabel::empirical: return "Empirical";
        case DatasetLabel::synthetic: return "Synthetic";
        case DatasetLabel::combined: return "Combined";
    }
    return "?";
}

std::string to_string(SimSource s) { return s == SimSource::fr ? "FR" : "MV"; }

DatasetLabel parse_dataset_label(const std::string& s) {
    if (s == "Empirical") return DatasetLabel::empirical;
    if (s == "Synthetic") return DatasetLabel::synthetic;
    if (s == "Combined") return DatasetLabel::combined;
    throw ValidationError("unknown dataset label '" + s + "'");
}

SimSource parse_sim_source(const std::string& s) {
    if (s == "FR") return SimSource::fr;
    if (s == "MV") return SimSource::mv;
    throw ValidationError("unknown simulation kind '" + s + "'");
}

void MvConfig::validate() const {
    if (draws < 1) throw ValidationError("mv draws must be >= 1");
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ValidationError("mv horizon must be > 0");
}

namespace {

const std::vector<std::string>& check_universe(std::span<const MarketSnapshot> snapshots) {
    if (snapshots.empty()) throw ValidationError("simulation needs at least one snapshot");
    const auto& ids = snapshots.front().asset_ids();
    for (std::size_t i = 1; i < snapshots.size(); ++i)
        if (snapshots[i].asset_ids() != ids)
            throw ValidationError("snapshot " + std::to_string(i) + " (" + format_date(snapshots[i].date) +
                                  ") has a different asset order");
    for (std::size_t i = 0; i < snapshots.size(); ++i) {
        const auto n = static_cast<Eigen::Index>(ids.size());
        const auto& s = snapshots[i];
        if (s.volatility.size() != n || s.expected_return.size() != n || s.forward_return.size() != n)
            throw ValidationError("snapshot " + std::to_string(i) + " has vectors of the wrong length");
    }
    return ids;
}

Eigen::VectorXd mean_expected(std::span<const MarketSnapshot> snapshots) {
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(snapshots.front().expected_return.size());
    for (const auto& s : snapshots) mu += s.expected_return;
    return mu / static_cast<double>(snapshots.size());
}

// Plain LL^T; false if a pivot is not comfortably positive.
bool try_cholesky(const Eigen::MatrixXd& a, Eigen::MatrixXd& l) {
    const Eigen::Index n = a.rows();
    l.setZero(n, n);
    const double tol = 1e-14 * std::max(a.diagonal().cwiseAbs().maxCoeff(), 1e-300);
    for (Eigen::Index j = 0; j < n; ++j) {
        double d = a(j, j);
        for (Eigen::Index k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (!(d > tol)) return false;
        const double ljj = std::sqrt(d);
        l(j, j) = ljj;
        for (Eigen::Index i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (Eigen::Index k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / ljj;
        }
    }
    return true;
}

}  // namespace

SimulationSet fr_sims(std::span<const MarketSnapshot> snapshots, DatasetLabel label) {
    const auto& ids = check_universe(snapshots);
    SimulationSet set;
    set.asset_ids = ids;
    set.label = label;
    set.kind = SimSource::fr;
    set.returns.resize(static_cast<Eigen::Index>(snapshots.size()), static_cast<Eigen::Index>(ids.size()));
    for (std::size_t i = 0; i < snapshots.size(); ++i)
        set.returns.row(static_cast<Eigen::Index>(i)) = snapshots[i].forward_return.transpose();
    set.mu = mean_expected(snapshots);
    return set;
}

std::vector<double> default_jitter_schedule(const Eigen::MatrixXd& sigma) {
    const double scale = sigma.rows() > 0 ? sigma.trace() / static_cast<double>(sigma.rows()) : 0.0;
    std::vector<double> s{0.0};
    for (int e = -12; e <= -6; ++e) s.push_back(std::pow(10.0, e) * scale);
    return s;
}

CholeskyResult cholesky_psd(const Eigen::MatrixXd& sigma, const std::vector<double>& schedule) {
    if (sigma.rows() != sigma.cols() || sigma.rows() == 0) throw ValidationError("cholesky_psd needs a square matrix");
    if (!sigma.allFinite()) throw ValidationError("cholesky_psd: non-finite entries");
    if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, sigma.cwiseAbs().maxCoeff()))
        throw ValidationError("cholesky_psd: matrix is not symmetric");
    const std::vector<double> eps = schedule.empty() ? default_jitter_schedule(sigma) : schedule;
    const Eigen::MatrixXd sym = 0.5 * (sigma + sigma.transpose());
    CholeskyResult r;
    for (double e : eps) {
        Eigen::MatrixXd a = sym;
        a.diagonal().array() += e;
        if (try_cholesky(a, r.lower)) {
            r.jitter = e;
            return r;
        }
    }
    throw NumericalError("Cholesky failed; jitter schedule exhausted at eps = " + std::to_string(eps.back()));
}

SimulationSet mv_sims(std::span<const MarketSnapshot> snapshots, const MvConfig& cfg, DatasetLabel label) {
    cfg.validate();
    const auto& ids = check_universe(snapshots);
    const auto n = static_cast<Eigen::Index>(ids.size());
    const auto draws = static_cast<Eigen::Index>(cfg.draws);
    SimulationSet set;
    set.asset_ids = ids;
    set.label = label;
    set.kind = SimSource::mv;
    set.returns.resize(static_cast<Eigen::Index>(snapshots.size()) * draws, n);
    const std::uint64_t key = rng::derive_seed(cfg.seed, "mv_sims");
    parallel_for(
        snapshots.size(),
        [&](std::size_t s) {
            const MarketSnapshot& snap = snapshots[s];
            if ((snap.volatility.array() < 0.0).any() || !snap.volatility.allFinite())
                throw ValidationError("snapshot " + std::to_string(s) + " (" + format_date(snap.date) +
                                      ") has a negative or non-finite volatility");
            // Assets with zero volatility draw exactly zero; factor only the rest.
            std::vector<Eigen::Index> live;
            for (Eigen::Index i = 0; i < n; ++i)
                if (snap.volatility(i) > 0.0) live.push_back(i);
            const auto k = static_cast<Eigen::Index>(live.size());
            Eigen::MatrixXd sigma(k, k);
            for (Eigen::Index a = 0; a < k; ++a)
                for (Eigen::Index b = 0; b < k; ++b)
                    sigma(a, b) = snap.volatility(live[a]) * snap.corr.values()(live[a], live[b]) *
                                  snap.volatility(live[b]) * cfg.horizon;
            Eigen::MatrixXd l;
            if (k > 0) {
                try {
                    l = cholesky_psd(sigma).lower;
                } catch (const NumericalError& e) {
                    throw NumericalError("snapshot " + std::to_string(s) + " (" + format_date(snap.date) + "): " + e.what());
                }
            }
            Eigen::VectorXd z(k);
            for (Eigen::Index d = 0; d < draws; ++d) {
                rng::CounterRng g(rng::mix(rng::mix(key, s), static_cast<std::uint64_t>(d)));
                for (Eigen::Index a = 0; a < k; ++a) z(a) = g.normal();
                const Eigen::Index row = static_cast<Eigen::Index>(s) * draws + d;
                set.returns.row(row).setZero();
                if (k == 0) continue;
                const Eigen::VectorXd x = l.triangularView<Eigen::Lower>() * z;
                for (Eigen::Index a = 0; a < k; ++a) set.returns(row, live[a]) = x(a);
            }
        },
        cfg.workers);
    set.mu = mean_expected(snapshots);
    return set;
}

SimulationSet combine(std::span<const SimulationSet> sets) {
    if (sets.empty()) throw ValidationError("combine needs at least one simulation set");
    const auto& first = sets.front();
    Eigen::Index rows = 0;
    for (const auto& s : sets) {
        if (s.asset_ids != first.asset_ids) throw ValidationError("combine: simulation sets cover different universes");
        if (s.kind != first.kind)
            throw ValidationError("combine: cannot mix " + to_string(first.kind) + " and " + to_string(s.kind) + " sets");
        rows += s.returns.rows();
    }
    SimulationSet out;
    out.asset_ids = first.asset_ids;
    out.kind = first.kind;
    out.label = DatasetLabel::combined;
    out.returns.resize(rows, static_cast<Eigen::Index>(first.asset_ids.size()));
    out.mu = Eigen::VectorXd::Zero(first.mu.size());
    Eigen::Index at = 0;
    for (const auto& s : sets) {
        out.returns.middleRows(at, s.returns.rows()) = s.returns;
        out.mu += static_cast<double>(s.returns.rows()) * s.mu;
        at += s.returns.rows();
    }
    out.mu /= static_cast<double>(rows);
    return out;
}

void write_simulation_set(const std::filesystem::path& path, const SimulationSet& set) {
    const nlohmann::json header{{"format", "fixsynth.simset/1"},
                                {"rows", set.returns.rows()},
                                {"cols", set.returns.cols()},
                                {"label", to_string(set.label)},
                                {"kind", to_string(set.kind)},
                                {"asset_ids", set.asset_ids},
                                {"mu", std::vector<double>(set.mu.data(), set.mu.data() + set.mu.size())}};
    std::vector<double> payload;
    payload.reserve(static_cast<std::size_t>(set.returns.size()));
    for (Eigen::Index i = 0; i < set.returns.rows(); ++i)
        for (Eigen::Index j = 0; j < set.returns.cols(); ++j) payload.push_back(set.returns(i, j));
    write_binary(path, header, payload);
}

SimulationSet read_simulation_set(const std::filesystem::path& path) {
    const BinaryDocument doc = read_binary(path);
    if (doc.header.value("format", "") != "fixsynth.simset/1")
        throw ValidationError("'" + path.string() + "' is not a simulation set");
    SimulationSet set;
    const auto rows = doc.header.at("rows").get<Eigen::Index>(), cols = doc.header.at("cols").get<Eigen::Index>();
    set.asset_ids = doc.header.at("asset_ids").get<std::vector<std::string>>();
    set.label = parse_dataset_label(doc.header.at("label").get<std::string>());
    set.kind = parse_sim_source(doc.header.at("kind").get<std::string>());
    const auto mu = doc.header.at("mu").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(set.asset_ids.size()) != cols || static_cast<Eigen::Index>(mu.size()) != cols ||
        static_cast<Eigen::Index>(doc.payload.size()) != rows * cols)
        throw ValidationError("'" + path.string() + "' has inconsistent dimensions");
    set.mu = Eigen::Map<const Eigen::VectorXd>(mu.data(), cols);
    set.returns.resize(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) set.returns(i, j) = doc.payload[static_cast<std::size_t>(i * cols + j)];
    return set;
}

}  // namespace fixsynth
