#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ccdl/csc.hpp"
#include "ccdl/dictupd.hpp"
#include "ccdl/dictupd_3d.hpp"
#include "ccdl/dictupd_consensus.hpp"
#include "ccdl/dictupd_fista.hpp"
#include "ccdl/dictupd_masked.hpp"
#include "ccdl/parallel.hpp"

namespace ccdl {

enum class Method {
    CG,
    ISM,
    Tiled,
    Cns,
    CnsP,
    ThreeD,
    FISTA,
    MCG,
    MISM,
    MCns,
    MCnsP,
    MFISTA,
};

inline const char* to_string(Method m) {
    switch (m) {
    case Method::CG: return "CG";
    case Method::ISM: return "ISM";
    case Method::Tiled: return "Tiled";
    case Method::Cns: return "Cns";
    case Method::CnsP: return "CnsP";
    case Method::ThreeD: return "3D";
    case Method::FISTA: return "FISTA";
    case Method::MCG: return "M-CG";
    case Method::MISM: return "M-ISM";
    case Method::MCns: return "M-Cns";
    case Method::MCnsP: return "M-CnsP";
    case Method::MFISTA: return "M-FISTA";
    }
    return "?";
}

inline Method method_from_string(const std::string& s) {
    for (Method m : {Method::CG, Method::ISM, Method::Tiled, Method::Cns,
                     Method::CnsP, Method::ThreeD, Method::FISTA, Method::MCG,
                     Method::MISM, Method::MCns, Method::MCnsP, Method::MFISTA})
        if (s == to_string(m)) return m;
    throw ParameterError("unknown method '" + s + "'");
}

inline bool method_is_masked(Method m) {
    switch (m) {
    case Method::MCG:
    case Method::MISM:
    case Method::MCns:
    case Method::MCnsP:
    case Method::MFISTA: return true;
    default: return false;
    }
}

struct CdlConfig {
    double lambda = 0.1;
    double rho = 0.0;        // CSC penalty
    double sigma_or_L = 0.0; // dictionary penalty, or FISTA step bound L
    Method method = Method::CG;
    std::size_t iters = 1000;
    NormMode norm_mode = NormMode::UnitEquality;
    double relax_alpha = 1.0;
    std::uint64_t seed = 0;
    bool auto_params = false; // fill rho / sigma_or_L from default_params
    std::size_t threads = 1;  // CnsP / M-CnsP worker count (0 = hardware)
    DictUpdCfg cg;
    bool identity_fastpath = true;
};

struct DefaultParams {
    double rho = 0.0;
    double sigma_or_L = 0.0;
};

// Fixed penalty-parameter guidelines as a function of the training set size.
// Tiled and 3D have no entry of their own; they reuse the CG/ISM sigma rule,
// which grid searches show tracks their optimum only loosely (both methods
// see the training set as a single problem of different geometry).
inline DefaultParams default_params(Method m, std::size_t k_imgs) {
    if (k_imgs == 0) throw ParameterError("default_params: K must be >= 1");
    const double K = static_cast<double>(k_imgs);
    switch (m) {
    case Method::CG:
    case Method::ISM:
    case Method::Tiled:
    case Method::ThreeD:
    case Method::MCG:
    case Method::MISM: return {2.2, 0.5 * K + 7.0};
    case Method::Cns:
    case Method::CnsP: return {3.0, 2.2};
    case Method::MCns:
    case Method::MCnsP: return {2.7, 3.0};
    case Method::FISTA:
    case Method::MFISTA: return {2.2, 14.0 * K};
    }
    throw ParameterError("default_params: bad method");
}

struct TraceRow {
    std::size_t iter = 0;
    double time_s = 0.0;
    double objective = 0.0;
    double fidelity = 0.0;
    double l1 = 0.0;
    double r_primal_x = 0.0;
    double r_dual_x = 0.0;
    double r_primal_d = 0.0;
    double r_dual_d = 0.0;
};

struct ConvergenceTrace {
    std::vector<TraceRow> rows;
};

struct CdlSnapshot {
    std::size_t iter = 0;
    Tensor<double> filters; // [M][rows][cols], feasible
};

struct CdlResult {
    Dictionary dict;
    ConvergenceTrace trace;
    std::vector<CdlSnapshot> snapshots;
};

namespace detail {

// One dictionary-update engine per method, state created once so duals and
// momentum survive across outer iterations.
struct DictUpdater {
    Method method = Method::CG;
    std::size_t threads = 1;
    DictUpdCfg cg;
    ConstraintSet image_cset;
    ConstraintSet tiled_cset; // Tiled only
    std::optional<EqAdmmState> eq;
    std::optional<ConsensusState> cns;
    std::optional<ThreeDState> td;
    std::optional<FistaDictState> fista;
    std::optional<MaskedBlockState> mb;
    std::optional<MaskedConsensusState> mc;

    void init(const Dictionary& D, const CdlConfig& cfg, std::size_t k_imgs) {
        method = cfg.method;
        threads = cfg.threads;
        cg = cfg.cg;
        image_cset = D.cset;
        const double sig = cfg.sigma_or_L;
        switch (method) {
        case Method::CG:
            eq = make_eqadmm_state(D, sig, DictSolver::CG);
            break;
        case Method::ISM:
            eq = make_eqadmm_state(D, sig, DictSolver::ISM);
            break;
        case Method::Tiled: {
            std::size_t gc = 1;
            while (gc * gc < k_imgs) ++gc;
            const std::size_t gr = (k_imgs + gc - 1) / gc;
            tiled_cset = image_cset;
            tiled_cset.rows = gr * image_cset.rows;
            tiled_cset.cols = gc * image_cset.cols;
            Dictionary big;
            big.cset = tiled_cset;
            big.filters = repad_filters(D.filters, image_cset, tiled_cset);
            eq = make_eqadmm_state(big, sig, DictSolver::ISM);
            break;
        }
        case Method::Cns:
        case Method::CnsP:
            cns = make_consensus_state(D, k_imgs, sig);
            break;
        case Method::ThreeD:
            td = make_3d_state(D, k_imgs, sig);
            break;
        case Method::FISTA:
        case Method::MFISTA:
            fista = make_fista_state(D, sig);
            fista->identity_fastpath = cfg.identity_fastpath;
            break;
        case Method::MCG:
            mb = make_masked_block_state(D, k_imgs, sig, DictSolver::CG);
            break;
        case Method::MISM:
            mb = make_masked_block_state(D, k_imgs, sig, DictSolver::ISM);
            break;
        case Method::MCns:
        case Method::MCnsP:
            mc = make_masked_consensus_state(D, k_imgs, sig);
            break;
        }
    }

    DictStats step(const Tensor<double>& X, const Tensor<double>& S,
                   const Tensor<double>* W) {
        switch (method) {
        case Method::CG:
        case Method::ISM: return dictupd_eqadmm_step(X, S, *eq, cg);
        case Method::Tiled: {
            auto tp = tile_training_set(X, S, image_cset.rows, image_cset.cols);
            return dictupd_eqadmm_step(tp.X, tp.S, *eq, cg);
        }
        case Method::Cns: return dictupd_consensus_step(X, S, *cns, 1);
        case Method::CnsP: return dictupd_consensus_step(X, S, *cns, threads);
        case Method::ThreeD: return dictupd_3d_step(X, S, *td);
        case Method::FISTA: return dictupd_fista_step(X, S, *fista, nullptr);
        case Method::MFISTA: return dictupd_fista_step(X, S, *fista, W);
        case Method::MCG:
        case Method::MISM:
            return dictupd_masked_blockadmm_step(X, S, *W, *mb, cg);
        case Method::MCns: return dictupd_masked_extcns_step(X, S, *W, *mc, 1);
        case Method::MCnsP:
            return dictupd_masked_extcns_step(X, S, *W, *mc, threads);
        }
        throw ParameterError("dict updater: bad method");
    }

    // The feasible iterate handed to the sparse-coding stage.
    Tensor<double> current_filters() const {
        switch (method) {
        case Method::CG:
        case Method::ISM: return eq->g;
        case Method::Tiled: return repad_filters(eq->g, tiled_cset, image_cset);
        case Method::Cns:
        case Method::CnsP: return cns->g;
        case Method::ThreeD:
            return slice0_filters(td->g, td->k_slices, image_cset.rows,
                                  image_cset.cols);
        case Method::FISTA:
        case Method::MFISTA: return fista->y;
        case Method::MCG:
        case Method::MISM: return mb->g0;
        case Method::MCns:
        case Method::MCnsP: return mc->g0;
        }
        throw ParameterError("dict updater: bad method");
    }
};

} // namespace detail

// Alternating dictionary learning: one sparse-coding iteration, then one
// dictionary-update iteration per outer step, coupled through the auxiliary
// variables (the CSC stage codes against the dictionary iterate g / g0 / y,
// the dictionary stage fits the sparse iterate Y / Y0). Internal duals and
// momentum persist across outer steps. Aborts with NumericalError when the
// objective stops being finite.
inline CdlResult cdl_learn(const Tensor<double>& S, const Dictionary& init_dict,
                           const CdlConfig& cfg_in,
                           const Tensor<double>* W = nullptr,
                           std::size_t snapshot_every = 50) {
    CdlConfig cfg = cfg_in;
    const ConstraintSet& cs = init_dict.cset;
    cs.validate();
    const std::size_t rows = cs.rows, cols = cs.cols, n = rows * cols;
    if (S.size() == 0 || S.size() % n != 0)
        throw DimensionError("cdl: training set does not match dictionary size");
    const std::size_t k_imgs = S.size() / n;
    const std::size_t m = init_dict.num_filters();

    if (!(cfg.lambda > 0.0)) throw ParameterError("cdl: lambda must be positive");
    if (cfg.iters == 0) throw ParameterError("cdl: iters must be positive");
    if (cfg.norm_mode != cs.mode)
        throw ParameterError("cdl: config norm mode disagrees with dictionary");
    const bool masked = method_is_masked(cfg.method);
    if (masked && !W)
        throw ParameterError(std::string("cdl: method ") + to_string(cfg.method) +
                             " requires a mask");
    if (!masked && W)
        throw ParameterError(std::string("cdl: method ") + to_string(cfg.method) +
                             " does not take a mask");
    if (W && W->size() != n && W->size() != k_imgs * n)
        throw DimensionError("cdl: mask must be one plane or one per image");
    if (cfg.auto_params) {
        const auto dp = default_params(cfg.method, k_imgs);
        cfg.rho = dp.rho;
        cfg.sigma_or_L = dp.sigma_or_L;
    }
    if (!(cfg.rho > 0.0)) throw ParameterError("cdl: rho must be positive");
    if (!(cfg.sigma_or_L > 0.0))
        throw ParameterError("cdl: sigma/L must be positive");
    if (!is_feasible(init_dict.filters, cs, 1e-10))
        throw ParameterError("cdl: initial dictionary is not feasible");

    const auto t0 = std::chrono::steady_clock::now();

    CoeffState cst;
    MaskedCoeffState mst;
    if (masked)
        mst = make_masked_coeff_state(k_imgs, m, rows, cols, cfg.rho);
    else
        cst = make_coeff_state(k_imgs, m, rows, cols, cfg.rho);
    Tensor<cplx> shat;
    if (!masked) shat = signal_freq(S, rows, cols);

    detail::DictUpdater dup;
    dup.init(init_dict, cfg, k_imgs);

    CdlResult res;
    res.trace.rows.reserve(cfg.iters);
    Tensor<double> dcur = dup.current_filters();
    DictFreq df = make_dict_freq(dcur, rows, cols);

    for (std::size_t it = 1; it <= cfg.iters; ++it) {
        if (!is_feasible(dcur, cs, 1e-8))
            throw NumericalError("cdl: infeasible dictionary entering iteration " +
                                 std::to_string(it));
        CscStats xs;
        if (masked)
            xs = csc_admm_masked_step(S, *W, df, cfg.lambda, mst, cfg.relax_alpha);
        else
            xs = csc_admm_step(shat, df, cfg.lambda, cst, cfg.relax_alpha);
        const Tensor<double>& Y = masked ? mst.Y0 : cst.Y;

        DictStats ds = dup.step(Y, S, W);
        dcur = dup.current_filters();
        df = make_dict_freq(dcur, rows, cols);

        const Objective obj =
            cbpdn_objective(S, df, Y, cfg.lambda, masked ? W : nullptr);
        if (!std::isfinite(obj.total)) {
            std::ostringstream msg;
            msg << "cdl: non-finite objective at iteration " << it
                << " (fidelity=" << obj.fidelity << ", l1=" << obj.l1 << ")";
            if (!res.trace.rows.empty()) {
                const TraceRow& last = res.trace.rows.back();
                msg << "; last finite objective " << last.objective
                    << " at iteration " << last.iter;
            }
            throw NumericalError(msg.str());
        }

        TraceRow row;
        row.iter = it;
        row.time_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                .count();
        row.objective = obj.total;
        row.fidelity = obj.fidelity;
        row.l1 = obj.l1;
        row.r_primal_x = xs.r_primal;
        row.r_dual_x = xs.r_dual;
        row.r_primal_d = ds.r_primal;
        row.r_dual_d = ds.r_dual;
        res.trace.rows.push_back(row);

        if (snapshot_every > 0 && it % snapshot_every == 0)
            res.snapshots.push_back({it, dcur});
    }

    res.dict.filters = dcur;
    res.dict.cset = cs;
    return res;
}

// --- grid search ----------------------------------------------------------------

// n log-spaced points with exact endpoints.
inline std::vector<double> logspace(double lo, double hi, std::size_t points) {
    if (points == 0) throw ParameterError("logspace: need at least one point");
    if (!(lo > 0.0) || !(hi > 0.0))
        throw ParameterError("logspace: endpoints must be positive");
    std::vector<double> out(points);
    out.front() = lo;
    if (points == 1) return out;
    const double llo = std::log(lo), lhi = std::log(hi);
    for (std::size_t i = 1; i + 1 < points; ++i)
        out[i] = std::exp(llo + (lhi - llo) * static_cast<double>(i) /
                                    static_cast<double>(points - 1));
    out.back() = hi;
    return out;
}

struct GridPoint {
    double rho = 0.0;
    double sigma_or_L = 0.0;
    double final_objective = std::numeric_limits<double>::infinity();
};

struct GridTable {
    std::vector<GridPoint> points; // rho-major order
    std::size_t best = 0;

    const GridPoint& argmin() const { return points[best]; }
};

// Runs cdl_learn at every (rho, sigma) pair from the same initialization and
// tabulates the final objective; runs that blow up numerically score +inf and
// the search continues. Points are independent, so `workers` may evaluate
// them concurrently without changing any result.
inline GridTable grid_search(const Tensor<double>& S, const Dictionary& init_dict,
                             const CdlConfig& cfg_template,
                             const std::vector<double>& rho_grid,
                             const std::vector<double>& sigma_grid,
                             std::size_t iters,
                             const Tensor<double>* W = nullptr,
                             std::size_t workers = 1) {
    if (rho_grid.empty() || sigma_grid.empty())
        throw ParameterError("grid_search: empty grid");
    if (iters == 0) throw ParameterError("grid_search: iters must be positive");

    GridTable table;
    table.points.resize(rho_grid.size() * sigma_grid.size());
    for (std::size_t i = 0; i < rho_grid.size(); ++i)
        for (std::size_t j = 0; j < sigma_grid.size(); ++j) {
            GridPoint& p = table.points[i * sigma_grid.size() + j];
            p.rho = rho_grid[i];
            p.sigma_or_L = sigma_grid[j];
        }

    parallel_for(std::size_t{0}, table.points.size(), workers, [&](std::size_t i) {
        GridPoint& p = table.points[i];
        CdlConfig cfg = cfg_template;
        cfg.auto_params = false;
        cfg.rho = p.rho;
        cfg.sigma_or_L = p.sigma_or_L;
        cfg.iters = iters;
        try {
            const CdlResult run = cdl_learn(S, init_dict, cfg, W, 0);
            p.final_objective = run.trace.rows.back().objective;
        } catch (const Error&) {
            p.final_objective = std::numeric_limits<double>::infinity();
        }
    });

    for (std::size_t i = 1; i < table.points.size(); ++i)
        if (table.points[i].final_objective <
            table.points[table.best].final_objective)
            table.best = i;
    return table;
}

struct TwoStageGrid {
    GridTable coarse;
    GridTable fine;

    const GridPoint& argmin() const {
        return fine.argmin().final_objective <= coarse.argmin().final_objective
                   ? fine.argmin()
                   : coarse.argmin();
    }
};

// Coarse pass over the given grids, then a second pass on [c/10, 10c] around
// the coarse argmin in both parameters.
inline TwoStageGrid grid_search_two_stage(
    const Tensor<double>& S, const Dictionary& init_dict,
    const CdlConfig& cfg_template, const std::vector<double>& rho_grid,
    const std::vector<double>& sigma_grid, std::size_t iters,
    const Tensor<double>* W = nullptr, std::size_t workers = 1,
    std::size_t refine_points = 10) {
    TwoStageGrid out;
    out.coarse = grid_search(S, init_dict, cfg_template, rho_grid, sigma_grid,
                             iters, W, workers);
    const GridPoint& c = out.coarse.argmin();
    out.fine = grid_search(S, init_dict, cfg_template,
                           logspace(c.rho / 10.0, c.rho * 10.0, refine_points),
                           logspace(c.sigma_or_L / 10.0, c.sigma_or_L * 10.0,
                                    refine_points),
                           iters, W, workers);
    return out;
}

// --- test-set evaluation ----------------------------------------------------------

struct EvalRow {
    std::size_t train_iteration = 0;
    double test_objective = 0.0;
};

// Sparse-codes the held-out set against each snapshot with a fresh CSC state
// and a fixed iteration budget, reporting the objective at Y.
inline std::vector<EvalRow> evaluate_on_test_set(
    const std::vector<CdlSnapshot>& snapshots, const ConstraintSet& cset,
    const Tensor<double>& S_test, double lambda, double rho,
    std::size_t csc_iters) {
    if (snapshots.empty())
        throw ParameterError("evaluate_on_test_set: no snapshots");
    if (csc_iters == 0)
        throw ParameterError("evaluate_on_test_set: iters must be positive");
    const std::size_t n = cset.rows * cset.cols;
    if (S_test.size() == 0 || S_test.size() % n != 0)
        throw DimensionError("evaluate_on_test_set: test set size mismatch");
    const std::size_t k_imgs = S_test.size() / n;

    std::vector<EvalRow> out;
    out.reserve(snapshots.size());
    for (const CdlSnapshot& snap : snapshots) {
        Dictionary D;
        D.filters = snap.filters;
        D.cset = cset;
        auto st = make_coeff_state(k_imgs, D.num_filters(), cset.rows, cset.cols,
                                   rho);
        csc_admm(S_test, D, lambda, st, csc_iters);
        const Objective obj =
            cbpdn_objective(S_test, make_dict_freq(D), st.Y, lambda);
        out.push_back({snap.iter, obj.total});
    }
    return out;
}

} // namespace ccdl
