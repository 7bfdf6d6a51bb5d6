#include "fixsynth/market_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fixsynth/parallel.hpp"
#include "fixsynth/rng.hpp"

namespace fixsynth {

using std::chrono::day;
using std::chrono::days;
using std::chrono::month;
using std::chrono::year;
using std::chrono::year_month_day;

Date parse_date(const std::string& iso) {
    int y = 0;
    unsigned m = 0, d = 0;
    auto bad = [&] { return ValidationError("invalid ISO-8601 date '" + iso + "'"); };
    if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-') throw bad();
    auto parse = [&](std::size_t off, std::size_t len, auto& out) {
        auto r = std::from_chars(iso.data() + off, iso.data() + off + len, out);
        if (r.ec != std::errc() || r.ptr != iso.data() + off + len) throw bad();
    };
    parse(0, 4, y);
    parse(5, 2, m);
    parse(8, 2, d);
    const year_month_day ymd{year{y}, month{m}, day{d}};
    if (!ymd.ok()) throw bad();
    return Date{ymd};
}

std::string format_date(Date d) {
    const year_month_day ymd{d};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()));
    return buf;
}

std::string to_string(AssetKind kind) { return kind == AssetKind::bond ? "bond" : "fx"; }

AssetKind parse_asset_kind(const std::string& s) {
    if (s == "bond") return AssetKind::bond;
    if (s == "fx") return AssetKind::fx;
    throw ValidationError("asset kind must be 'bond' or 'fx', got '" + s + "'");
}

std::size_t ReturnPanel::bond_count() const noexcept {
    return static_cast<std::size_t>(std::count(kinds.begin(), kinds.end(), AssetKind::bond));
}

// ---------------------------------------------------------------------------
// CorrelationMatrix

std::vector<std::string> default_asset_ids(std::size_t n) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back("A" + std::to_string(i));
    return ids;
}

std::optional<std::string> CorrelationMatrix::violation(const Eigen::MatrixXd& m) {
    if (m.rows() != m.cols() || m.rows() == 0) return "matrix is not square and non-empty";
    const Eigen::Index n = m.rows();
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!std::isfinite(m(i, i)) || m(i, i) != 1.0) return "diagonal entry " + std::to_string(i) + " is not 1";
        for (Eigen::Index j = i + 1; j < n; ++j) {
            if (!std::isfinite(m(i, j)) || !std::isfinite(m(j, i))) return "non-finite entry";
            if (std::abs(m(i, j) - m(j, i)) > kSymmetryTol)
                return "asymmetric at (" + std::to_string(i) + "," + std::to_string(j) + ")";
            if (m(i, j) < -1.0 || m(i, j) > 1.0)
                return "entry (" + std::to_string(i) + "," + std::to_string(j) + ") outside [-1, 1]";
        }
    }
    if (n > 1) {
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
        const double lo = es.eigenvalues().minCoeff();
        if (lo < kEigenTol) return "minimum eigenvalue " + std::to_string(lo) + " below tolerance";
    }
    return std::nullopt;
}

CorrelationMatrix::CorrelationMatrix(Eigen::MatrixXd values, std::vector<std::string> asset_ids)
    : values_(std::move(values)), ids_(std::move(asset_ids)) {
    if (auto v = violation(values_)) throw ValidationError("invalid correlation matrix: " + *v);
    if (ids_.size() != size())
        throw ValidationError("correlation matrix of size " + std::to_string(size()) + " given " +
                              std::to_string(ids_.size()) + " asset ids");
}

CorrelationMatrix::CorrelationMatrix(Eigen::MatrixXd values)
    : CorrelationMatrix(values, default_asset_ids(static_cast<std::size_t>(values.rows()))) {}

Eigen::MatrixXd CorrelationMatrix::distance() const {
    // Scalar loop over the upper triangle keeps the result exactly symmetric.
    const Eigen::Index n = values_.rows();
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) d(i, j) = d(j, i) = std::sqrt(std::max(0.0, 2.0 * (1.0 - values_(i, j))));
    return d;
}

// ---------------------------------------------------------------------------
// Nearest correlation matrix

namespace {

Eigen::MatrixXd project_psd(const Eigen::MatrixXd& a) {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
    const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
    Eigen::MatrixXd x = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
    return 0.5 * (x + x.transpose());
}

// Clamp the spectrum at zero, rescale to unit diagonal and force exact symmetry.
Eigen::MatrixXd finalize(const Eigen::MatrixXd& y) {
    Eigen::MatrixXd x = project_psd(y);
    Eigen::VectorXd d = x.diagonal().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
    x = d.asDiagonal() * x * d.asDiagonal();
    const Eigen::Index n = x.rows();
    for (Eigen::Index i = 0; i < n; ++i) {
        x(i, i) = 1.0;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double v = std::clamp(0.5 * (x(i, j) + x(j, i)), -1.0, 1.0);
            x(i, j) = x(j, i) = v;
        }
    }
    return x;
}

}  // namespace

NearestCorrelationResult nearest_correlation(const Eigen::MatrixXd& matrix, double tol, std::size_t max_iter) {
    if (matrix.rows() != matrix.cols() || matrix.rows() == 0)
        throw ValidationError("nearest_correlation needs a non-empty square matrix");
    if (!matrix.allFinite()) throw ValidationError("nearest_correlation: non-finite input");
    const std::vector<std::string> ids = default_asset_ids(static_cast<std::size_t>(matrix.rows()));
    if (!CorrelationMatrix::violation(matrix)) return {CorrelationMatrix(matrix, ids), 0, {}};

    const Eigen::MatrixXd a = 0.5 * (matrix + matrix.transpose());
    Eigen::MatrixXd y = a;
    Eigen::MatrixXd correction = Eigen::MatrixXd::Zero(a.rows(), a.cols());
    NearestCorrelationResult result{CorrelationMatrix(Eigen::MatrixXd::Identity(a.rows(), a.cols()), ids), 0, {}};
    double change = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k <= max_iter; ++k) {
        const Eigen::MatrixXd r = y - correction;
        const Eigen::MatrixXd x = project_psd(r);
        correction = x - r;
        Eigen::MatrixXd y_next = x;
        y_next.diagonal().setOnes();
        change = (y_next - y).norm();
        result.residuals.push_back((y_next - x).norm());
        y = std::move(y_next);
        result.iterations = k;
        if (change < tol) {
            Eigen::MatrixXd out = finalize(y);
            if (auto v = CorrelationMatrix::violation(out))
                throw NearestCorrelationError("nearest_correlation: repaired matrix still invalid: " + *v, out, change);
            result.matrix = CorrelationMatrix(std::move(out), ids);
            return result;
        }
    }
    throw NearestCorrelationError("nearest_correlation: no convergence after " + std::to_string(max_iter) +
                                      " iterations (last change " + std::to_string(change) + ")",
                                  y, change);
}

CorrelationMatrix to_correlation(const Eigen::MatrixXd& matrix, std::vector<std::string> asset_ids) {
    if (!CorrelationMatrix::violation(matrix)) return CorrelationMatrix(matrix, std::move(asset_ids));
    return CorrelationMatrix(nearest_correlation(matrix).matrix.values(), std::move(asset_ids));
}

// ---------------------------------------------------------------------------
// CSV ingest

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_number(const std::string& s, std::size_t row, const std::string& column) {
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(v))
        throw ValidationError("non-numeric value '" + s + "' at row " + std::to_string(row) + ", column " + column);
    return v;
}

}  // namespace

ReturnPanel ingest_returns(const std::filesystem::path& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw ValidationError("cannot open returns file '" + csv_path.string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("'" + csv_path.string() + "' is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "date,asset_id,kind,weekly_return,expected_return")
        throw ValidationError("unexpected header '" + line + "'; want date,asset_id,kind,weekly_return,expected_return");

    struct Cell {
        double ret, er;
    };
    std::vector<Date> dates;
    std::vector<std::string> order;  // first appearance
    std::map<std::string, AssetKind> kinds;
    std::map<std::pair<std::size_t, std::string>, Cell> cells;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != 5) throw ValidationError("row " + std::to_string(row) + ": expected 5 fields");
        Date d;
        try {
            d = parse_date(f[0]);
        } catch (const ValidationError& e) {
            throw ValidationError("row " + std::to_string(row) + ", column date: " + e.what());
        }
        if (dates.empty() || d > dates.back()) {
            dates.push_back(d);
        } else if (d < dates.back()) {
            throw ValidationError("row " + std::to_string(row) + ": dates must be increasing (" + f[0] + " after " +
                                  format_date(dates.back()) + ")");
        }
        const std::string& id = f[1];
        if (id.empty()) throw ValidationError("row " + std::to_string(row) + ": empty asset_id");
        const AssetKind kind = parse_asset_kind(f[2]);
        if (auto it = kinds.find(id); it == kinds.end()) {
            kinds.emplace(id, kind);
            order.push_back(id);
        } else if (it->second != kind) {
            throw ValidationError("asset '" + id + "' changes kind at row " + std::to_string(row));
        }
        const Cell c{parse_number(f[3], row, "weekly_return"), parse_number(f[4], row, "expected_return")};
        if (!cells.emplace(std::pair{dates.size() - 1, id}, c).second)
            throw ValidationError("duplicate asset id '" + id + "' on " + f[0]);
    }
    if (dates.empty()) throw ValidationError("'" + csv_path.string() + "' has no data rows");

    std::vector<std::string> gaps;
    for (std::size_t t = 1; t < dates.size(); ++t) {
        const auto step = (dates[t] - dates[t - 1]).count();
        if (step % 7 != 0) throw ValidationError("date " + format_date(dates[t]) + " is off the weekly grid");
        for (Date m = dates[t - 1] + days{7}; m < dates[t]; m += days{7}) gaps.push_back("missing date " + format_date(m));
    }
    ReturnPanel p;
    for (AssetKind want : {AssetKind::bond, AssetKind::fx})
        for (const auto& id : order)
            if (kinds[id] == want) {
                p.asset_ids.push_back(id);
                p.kinds.push_back(want);
            }
    p.dates = dates;
    const auto T = static_cast<Eigen::Index>(dates.size()), n = static_cast<Eigen::Index>(p.asset_ids.size());
    p.weekly_returns.resize(T, n);
    p.expected_returns.resize(T, n);
    for (Eigen::Index t = 0; t < T; ++t)
        for (Eigen::Index i = 0; i < n; ++i) {
            auto it = cells.find({static_cast<std::size_t>(t), p.asset_ids[static_cast<std::size_t>(i)]});
            if (it == cells.end()) {
                gaps.push_back("missing asset " + p.asset_ids[static_cast<std::size_t>(i)] + " on " +
                               format_date(dates[static_cast<std::size_t>(t)]));
                continue;
            }
            p.weekly_returns(t, i) = it->second.ret;
            p.expected_returns(t, i) = it->second.er;
        }
    if (!gaps.empty()) {
        std::string msg = "incomplete panel:";
        for (std::size_t i = 0; i < std::min<std::size_t>(gaps.size(), 20); ++i) msg += "\n  " + gaps[i];
        if (gaps.size() > 20) msg += "\n  ... (" + std::to_string(gaps.size() - 20) + " more)";
        throw ValidationError(msg);
    }
    return p;
}

void write_returns_csv(const ReturnPanel& panel, const std::filesystem::path& csv_path) {
    std::ofstream out(csv_path, std::ios::trunc);
    if (!out) throw ValidationError("cannot write '" + csv_path.string() + "'");
    out << "date,asset_id,kind,weekly_return,expected_return\n";
    char buf[64];
    for (std::size_t t = 0; t < panel.n_dates(); ++t) {
        const std::string d = format_date(panel.dates[t]);
        for (std::size_t i = 0; i < panel.n_assets(); ++i) {
            const auto ti = static_cast<Eigen::Index>(t), ii = static_cast<Eigen::Index>(i);
            out << d << ',' << panel.asset_ids[i] << ',' << to_string(panel.kinds[i]) << ',';
            auto r = std::to_chars(buf, buf + sizeof buf, panel.weekly_returns(ti, ii));
            out.write(buf, r.ptr - buf);
            out << ',';
            r = std::to_chars(buf, buf + sizeof buf, panel.expected_returns(ti, ii));
            out.write(buf, r.ptr - buf);
            out << '\n';
        }
    }
}

// ---------------------------------------------------------------------------
// Snapshots

std::vector<MarketSnapshot> build_snapshots(const ReturnPanel& panel, const SnapshotOptions& opts) {
    const std::size_t T = panel.n_dates(), n = panel.n_assets();
    if (opts.window < 2 || opts.horizon < 1) throw ValidationError("window must be >= 2 and horizon >= 1");
    if (T < opts.window + opts.horizon)
        throw ValidationError("panel has " + std::to_string(T) + " dates; need at least window + horizon = " +
                              std::to_string(opts.window + opts.horizon));
    const std::size_t count = T - opts.window - opts.horizon + 1;
    std::vector<std::optional<MarketSnapshot>> slots(count);
    const double annualize = std::sqrt(52.0);
    parallel_for(
        count,
        [&](std::size_t s) {
            const auto end = static_cast<Eigen::Index>(s + opts.window - 1);  // last row in window
            const auto W = static_cast<Eigen::Index>(opts.window);
            const Eigen::MatrixXd win = panel.weekly_returns.middleRows(end - W + 1, W);
            const Eigen::MatrixXd centered = win.rowwise() - win.colwise().mean();
            const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(W - 1);
            Eigen::VectorXd sd = cov.diagonal().cwiseSqrt();
            for (std::size_t i = 0; i < n; ++i)
                if (!(sd(static_cast<Eigen::Index>(i)) > 0.0))
                    throw ValidationError("asset " + panel.asset_ids[i] + " has constant returns in the window ending " +
                                          format_date(panel.dates[static_cast<std::size_t>(end)]));
            const auto N = static_cast<Eigen::Index>(n);
            Eigen::MatrixXd c(N, N);
            for (Eigen::Index i = 0; i < N; ++i) {
                c(i, i) = 1.0;
                for (Eigen::Index j = i + 1; j < N; ++j)
                    c(i, j) = c(j, i) = std::clamp(cov(i, j) / (sd(i) * sd(j)), -1.0, 1.0);
            }
            Eigen::VectorXd fwd = Eigen::VectorXd::Ones(N);
            for (std::size_t k = 1; k <= opts.horizon; ++k)
                fwd = fwd.cwiseProduct((1.0 + panel.weekly_returns.row(end + static_cast<Eigen::Index>(k)).array()).matrix().transpose());
            slots[s] = MarketSnapshot{panel.dates[static_cast<std::size_t>(end)], to_correlation(c, panel.asset_ids),
                                      sd * annualize, panel.expected_returns.row(end).transpose(),
                                      fwd.array() - 1.0};
        },
        opts.workers);
    std::vector<MarketSnapshot> out;
    out.reserve(count);
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

std::vector<RegimeShift> default_regimes() {
    // Rough shape of the 2007-2022 cycle on a weekly grid from April 2007.
    return {{0, 1.0, 1.0},   {60, 1.6, 2.2},  {110, 1.3, 1.5}, {150, 1.0, 1.0}, {220, 1.4, 1.3},
            {270, 0.9, 0.9}, {330, 1.2, 1.1}, {380, 1.0, 0.9}, {450, 1.1, 1.2}, {500, 0.8, 0.8},
            {600, 1.0, 1.0}, {660, 1.7, 2.0}, {700, 1.0, 1.1}, {760, 1.5, 1.6}};
}

ReturnPanel synth_corpus(const SynthCorpusConfig& cfg, std::uint64_t seed) {
    const std::size_t n = cfg.n_assets;
    if (n < 2) throw ValidationError("synth corpus needs at least 2 assets");
    if (cfg.blocks == 0 || cfg.blocks > n)
        throw ValidationError("block count " + std::to_string(cfg.blocks) + " must lie in [1, n_assets = " +
                              std::to_string(n) + "]");
    if (cfg.n_fx >= n) throw ValidationError("n_fx must leave at least one bond asset");
    if (cfg.weeks < 2) throw ValidationError("weeks must be >= 2");
    if (cfg.intra_corr_lo < 0.0 || cfg.intra_corr_hi > 1.0 || cfg.intra_corr_lo > cfg.intra_corr_hi)
        throw ValidationError("intra-block correlation range must satisfy 0 <= lo <= hi <= 1");
    if (std::abs(cfg.loading_lo) > 1.0 || std::abs(cfg.loading_hi) > 1.0 || cfg.loading_lo > cfg.loading_hi)
        throw ValidationError("factor loading range must lie in [-1, 1] with lo <= hi");
    if (cfg.vol_lo < 0.0 || cfg.vol_lo > cfg.vol_hi || cfg.fx_vol_lo < 0.0 || cfg.fx_vol_lo > cfg.fx_vol_hi)
        throw ValidationError("volatility ranges must be non-negative with lo <= hi");
    std::vector<RegimeShift> regimes = cfg.regimes.empty() ? default_regimes() : cfg.regimes;
    std::sort(regimes.begin(), regimes.end(), [](auto& a, auto& b) { return a.start_week < b.start_week; });
    if (regimes.front().start_week != 0) regimes.insert(regimes.begin(), RegimeShift{});

    rng::CounterRng setup(rng::mix(seed, 1));
    const std::size_t bonds = n - cfg.n_fx;
    std::vector<double> loading(n), vol(n), base(n), block_rho(cfg.blocks);
    std::vector<std::size_t> block(n);
    for (double& r : block_rho) r = setup.uniform(cfg.intra_corr_lo, cfg.intra_corr_hi);
    for (std::size_t i = 0; i < n; ++i) {
        const bool fx = i >= bonds;
        block[i] = i * cfg.blocks / n;
        loading[i] = setup.uniform(cfg.loading_lo, cfg.loading_hi);
        if (fx && setup.uniform() < 0.5) loading[i] = -loading[i];
        vol[i] = fx ? setup.uniform(cfg.fx_vol_lo, cfg.fx_vol_hi) : setup.uniform(cfg.vol_lo, cfg.vol_hi);
        base[i] = fx ? setup.uniform(-cfg.fx_carry, cfg.fx_carry) : setup.uniform(cfg.yield_lo, cfg.yield_hi);
    }

    ReturnPanel p;
    for (std::size_t i = 0; i < n; ++i) {
        const bool fx = i >= bonds;
        p.asset_ids.push_back(fx ? "FX" + std::to_string(i - bonds) : "BOND" + std::to_string(i));
        p.kinds.push_back(fx ? AssetKind::fx : AssetKind::bond);
    }
    const Date start = parse_date(cfg.start_date);
    const auto T = static_cast<Eigen::Index>(cfg.weeks), N = static_cast<Eigen::Index>(n);
    p.weekly_returns.resize(T, N);
    p.expected_returns.resize(T, N);
    std::vector<double> deviation(n, 0.0);
    std::size_t regime = 0;
    for (Eigen::Index t = 0; t < T; ++t) {
        p.dates.push_back(start + days{7 * t});
        while (regime + 1 < regimes.size() && regimes[regime + 1].start_week <= static_cast<std::size_t>(t)) ++regime;
        const RegimeShift& r = regimes[regime];
        rng::CounterRng week(rng::mix(rng::mix(seed, 2), static_cast<std::uint64_t>(t)));
        const double market = week.normal();
        std::vector<double> block_shock(cfg.blocks);
        for (double& b : block_shock) b = week.normal();
        for (std::size_t i = 0; i < n; ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            deviation[i] = (1.0 - cfg.er_reversion) * deviation[i] + cfg.er_noise * week.normal();
            const double er = base[i] + cfg.spread_beta * vol[i] * (r.vol_scale - 1.0) + deviation[i];
            const double beta = std::clamp(loading[i] * r.corr_scale, -0.95, 0.95);
            const double rho = block_rho[block[i]];
            const double idio = week.normal();
            const double z = beta * market +
                             std::sqrt(1.0 - beta * beta) * (std::sqrt(rho) * block_shock[block[i]] + std::sqrt(1.0 - rho) * idio);
            p.expected_returns(t, ii) = er;
            p.weekly_returns(t, ii) = er / 52.0 + vol[i] * r.vol_scale / std::sqrt(52.0) * z;
        }
    }
    return p;
}

// ---------------------------------------------------------------------------
// JSON lines

namespace {

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd to_eigen(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

nlohmann::json matrix_record(const CorrelationMatrix& c) {
    const Eigen::Index n = c.values().rows();
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(n * n));
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) flat.push_back(c.values()(i, j));
    return {{"assets", c.asset_ids()}, {"matrix", flat}};
}

CorrelationMatrix parse_matrix(const nlohmann::json& j) {
    auto ids = j.at("assets").get<std::vector<std::string>>();
    const auto flat = j.at("matrix").get<std::vector<double>>();
    const auto n = static_cast<Eigen::Index>(ids.size());
    if (static_cast<Eigen::Index>(flat.size()) != n * n)
        throw ValidationError("matrix has " + std::to_string(flat.size()) + " entries for " + std::to_string(n) + " assets");
    Eigen::MatrixXd m(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index k = 0; k < n; ++k) m(i, k) = flat[static_cast<std::size_t>(i * n + k)];
    return CorrelationMatrix(std::move(m), std::move(ids));
}

template <class F>
void for_each_line(const std::filesystem::path& path, F&& f) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open '" + path.string() + "'");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            f(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

}  // namespace

void write_snapshots_jsonl(const std::filesystem::path& path, const std::vector<MarketSnapshot>& snapshots) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ValidationError("cannot write '" + path.string() + "'");
    for (const auto& s : snapshots) {
        nlohmann::json j = matrix_record(s.corr);
        j["date"] = format_date(s.date);
        j["volatility"] = to_std(s.volatility);
        j["expected_return"] = to_std(s.expected_return);
        j["forward_return"] = to_std(s.forward_return);
        out << j.dump() << '\n';
    }
}

std::vector<MarketSnapshot> read_snapshots_jsonl(const std::filesystem::path& path) {
    std::vector<MarketSnapshot> out;
    for_each_line(path, [&](const nlohmann::json& j) {
        MarketSnapshot s{parse_date(j.at("date").get<std::string>()), parse_matrix(j),
                         to_eigen(j.at("volatility").get<std::vector<double>>()),
                         to_eigen(j.at("expected_return").get<std::vector<double>>()),
                         to_eigen(j.at("forward_return").get<std::vector<double>>())};
        const auto n = static_cast<Eigen::Index>(s.corr.size());
        if (s.volatility.size() != n || s.expected_return.size() != n || s.forward_return.size() != n)
            throw ValidationError("vector lengths do not match the matrix dimension");
        out.push_back(std::move(s));
    });
    return out;
}

void write_matrices_jsonl(const std::filesystem::path& path, const std::vector<CorrelationMatrix>& matrices) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ValidationError("cannot write '" + path.string() + "'");
    for (const auto& m : matrices) out << matrix_record(m).dump() << '\n';
}

std::vector<CorrelationMatrix> read_matrices_jsonl(const std::filesystem::path& path) {
    std::vector<CorrelationMatrix> out;
    for_each_line(path, [&](const nlohmann::json& j) { out.push_back(parse_matrix(j)); });
    return out;
}

}  // namespace fixsynth
