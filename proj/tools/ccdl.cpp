#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ccdl/cdl.hpp"
#include "ccdl/csc.hpp"
#include "ccdl/image.hpp"
#include "ccdl/io.hpp"
#include "ccdl/mask.hpp"
#include "ccdl/preprocess.hpp"
#include "ccdl/selfcheck.hpp"

namespace fs = std::filesystem;
using namespace ccdl;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumerical = 4;

int emit_error(const char* category, const std::string& what, int code) {
    std::string msg = what;
    const std::string dup = std::string(category) + ": ";
    if (msg.rfind(dup, 0) == 0) msg.erase(0, dup.size());
    std::cerr << "ccdl: error: " << category << ": " << msg << "\n";
    return code;
}

struct UsageError : Error {
    using Error::Error;
};

// Training inputs: a directory holding 8-bit images (.pgm/.png, scaled to
// [0,1]) and/or serialized tensors (.cdlt, one plane or a [K][rows][cols]
// stack, e.g. the output of `preprocess`). Files enter in lexicographic
// order.
std::vector<std::string> collect_inputs(const std::string& dir) {
    std::error_code ec;
    fs::directory_iterator it(dir, ec);
    if (ec) throw IoError("cannot read directory '" + dir + "': " + ec.message());
    std::vector<std::string> files;
    for (const auto& entry : it) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (ext == ".pgm" || ext == ".png" || ext == ".cdlt")
            files.push_back(entry.path().string());
    }
    if (files.empty())
        throw IoError("no .pgm/.png/.cdlt inputs in '" + dir + "'");
    std::sort(files.begin(), files.end());
    return files;
}

Tensor<double> load_stack(const std::string& dir) {
    std::vector<Tensor<double>> planes;
    for (const std::string& path : collect_inputs(dir)) {
        std::string ext = fs::path(path).extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (ext == ".cdlt") {
            Tensor<double> t = load_tensor(path);
            if (t.rank() == 2) {
                planes.push_back(std::move(t));
            } else if (t.rank() == 3) {
                const std::size_t per = t.shape(1) * t.shape(2);
                for (std::size_t k = 0; k < t.shape(0); ++k) {
                    Tensor<double> p({t.shape(1), t.shape(2)});
                    std::copy(t.data() + k * per, t.data() + (k + 1) * per, p.data());
                    planes.push_back(std::move(p));
                }
            } else {
                throw FormatError("'" + path + "' is not a plane or plane stack");
            }
        } else {
            Tensor<double> img = load_image(path);
            if (img.rank() == 3) img = rgb_to_luma(img);
            planes.push_back(std::move(img));
        }
        if (!planes.front().same_shape(planes.back()))
            throw DimensionError("'" + path + "' does not match the first input's shape");
    }
    Tensor<double> out({planes.size(), planes.front().shape(0), planes.front().shape(1)});
    const std::size_t per = planes.front().size();
    for (std::size_t k = 0; k < planes.size(); ++k)
        std::copy(planes[k].data(), planes[k].data() + per, out.data() + k * per);
    return out;
}

// min:max:points logspace grid spec
std::vector<double> parse_grid_spec(const std::string& spec, const char* flag) {
    double lo = 0.0, hi = 0.0;
    unsigned long points = 0;
    char tail = 0;
    if (std::sscanf(spec.c_str(), "%lf:%lf:%lu%c", &lo, &hi, &points, &tail) != 3)
        throw UsageError(std::string(flag) + " expects min:max:points, got '" + spec + "'");
    if (!(lo > 0.0) || !(hi > 0.0) || points == 0)
        throw UsageError(std::string(flag) + " needs positive endpoints and points");
    return logspace(lo, hi, points);
}

struct PenaltyFlags {
    double rho = 0.0;
    double sigma = 0.0;
    double L = 0.0;
    bool auto_params = false;
};

bool uses_step_bound(Method m) {
    return m == Method::FISTA || m == Method::MFISTA;
}

Method masked_counterpart(Method m) {
    switch (m) {
        case Method::CG: return Method::MCG;
        case Method::ISM: return Method::MISM;
        case Method::Cns: return Method::MCns;
        case Method::CnsP: return Method::MCnsP;
        case Method::FISTA: return Method::MFISTA;
        default:
            if (method_is_masked(m)) return m;
            throw UsageError(std::string("method ") + to_string(m) +
                             " has no masked variant");
    }
}

// resolves --method/--masked/--rho/--sigma/--L/--auto-params into a CdlConfig,
// with the FISTA family taking --L and everything else --sigma
void resolve_method_flags(CdlConfig& cfg, std::string method_name, bool masked,
                          const PenaltyFlags& p) {
    try {
        cfg.method = method_from_string(method_name);
    } catch (const ParameterError& e) {
        throw UsageError(e.what());
    }
    if (masked) cfg.method = masked_counterpart(cfg.method);
    const bool fista = uses_step_bound(cfg.method);
    if (p.L > 0.0 && !fista)
        throw UsageError("--L applies to FISTA methods; use --sigma");
    if (p.sigma > 0.0 && fista)
        throw UsageError("--sigma does not apply to FISTA methods; use --L");
    cfg.auto_params = p.auto_params;
    cfg.rho = p.rho;
    cfg.sigma_or_L = fista ? p.L : p.sigma;
    if (!p.auto_params) {
        if (!(cfg.rho > 0.0))
            throw UsageError("--rho is required (or pass --auto-params)");
        if (!(cfg.sigma_or_L > 0.0))
            throw UsageError(fista ? "--L is required (or pass --auto-params)"
                                   : "--sigma is required (or pass --auto-params)");
    }
}

NormMode parse_norm_mode(const std::string& s) {
    try {
        return norm_mode_from_string(s);
    } catch (const ParameterError& e) {
        throw UsageError(e.what());
    }
}

int cmd_preprocess(const std::string& images_dir, const std::string& out_path,
                   const std::string& lowpass_path, double tikhonov) {
    if (tikhonov < 0.0) throw UsageError("--tikhonov must be nonnegative");
    Tensor<double> S = load_stack(images_dir);
    HighpassSplit split = tikhonov_highpass(S, tikhonov);
    save_tensor(out_path, split.highpass);
    if (!lowpass_path.empty()) save_tensor(lowpass_path, split.lowpass);
    std::printf("preprocess: images=%zu rows=%zu cols=%zu tikhonov=%g out=%s\n",
                S.shape(0), S.shape(1), S.shape(2), tikhonov, out_path.c_str());
    return 0;
}

struct LearnArgs {
    std::string images, test_images, mask_path, norm_mode = "eq";
    std::string method, out, trace;
    std::size_t filters = 0, filter_size = 0, iters = 1000, snapshot_every = 50;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    double lambda = 0.1, relax = 1.0, mask_zero_frac = -1.0;
    bool masked = false;
    PenaltyFlags penalty;
};

int cmd_learn(const LearnArgs& a) {
    CdlConfig cfg;
    const bool masked = a.masked || [&] {
        try {
            return method_is_masked(method_from_string(a.method));
        } catch (const ParameterError&) {
            return false;  // resolve_method_flags reports the bad name
        }
    }();
    resolve_method_flags(cfg, a.method, masked, a.penalty);
    cfg.lambda = a.lambda;
    cfg.iters = a.iters;
    cfg.norm_mode = parse_norm_mode(a.norm_mode);
    cfg.relax_alpha = a.relax;
    cfg.seed = a.seed;
    cfg.threads = a.threads;

    const bool have_mask_file = !a.mask_path.empty();
    const bool have_mask_frac = a.mask_zero_frac >= 0.0;
    if (masked && have_mask_file == have_mask_frac)
        throw UsageError("masked methods need exactly one of --mask / --mask-zero-frac");
    if (!masked && (have_mask_file || have_mask_frac))
        throw UsageError("--mask/--mask-zero-frac apply to masked methods only");
    if (have_mask_frac && a.mask_zero_frac > 1.0)
        throw UsageError("--mask-zero-frac must lie in [0, 1]");

    Tensor<double> S = load_stack(a.images);
    const std::size_t k_imgs = S.shape(0), rows = S.shape(1), cols = S.shape(2);

    std::optional<Tensor<double>> W;
    if (have_mask_file) {
        W = load_tensor(a.mask_path);
    } else if (have_mask_frac) {
        // derived stream, distinct from the dictionary init at the same seed
        W = make_random_mask({k_imgs, rows, cols}, a.mask_zero_frac, a.seed + 1);
    }

    ConstraintSet cs{a.filter_size, a.filter_size, rows, cols, cfg.norm_mode};
    cs.validate();
    Dictionary D0 = init_dictionary(a.filters, cs, a.seed);

    CdlResult result =
        cdl_learn(S, D0, cfg, W ? &*W : nullptr, a.snapshot_every);

    save_dictionary(a.out, result.dict);
    if (!a.trace.empty()) save_trace_csv(a.trace, result.trace);

    if (!a.test_images.empty()) {
        Tensor<double> S_test = load_stack(a.test_images);
        if (S_test.shape(1) != rows || S_test.shape(2) != cols)
            throw DimensionError("test images do not match the training shape");
        std::vector<CdlSnapshot> snaps = result.snapshots;
        if (snaps.empty() || snaps.back().iter != a.iters)
            snaps.push_back({a.iters, result.dict.filters});
        const double rho = cfg.auto_params
                               ? default_params(cfg.method, k_imgs).rho
                               : cfg.rho;
        std::printf("train_iteration,test_objective\n");
        for (const EvalRow& row :
             evaluate_on_test_set(snaps, cs, S_test, cfg.lambda, rho, 200))
            std::printf("%zu,%.17g\n", row.train_iteration, row.test_objective);
    }

    std::printf("learn: method=%s iters=%zu objective=%.17g out=%s\n",
                to_string(cfg.method), a.iters,
                result.trace.rows.empty() ? 0.0
                                          : result.trace.rows.back().objective,
                a.out.c_str());
    return 0;
}

struct GridArgs {
    std::string images, method, norm_mode = "eq", out;
    std::string rho_spec, sigma_spec, L_spec;
    std::size_t filters = 0, filter_size = 0, iters = 100;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    double lambda = 0.1;
    bool refine = false;
};

int cmd_gridsearch(const GridArgs& a) {
    CdlConfig cfg;
    try {
        cfg.method = method_from_string(a.method);
    } catch (const ParameterError& e) {
        throw UsageError(e.what());
    }
    if (method_is_masked(cfg.method))
        throw UsageError("gridsearch covers unmasked methods");
    const bool fista = uses_step_bound(cfg.method);
    if (fista && a.sigma_spec.size())
        throw UsageError("--sigma-grid does not apply to FISTA; use --L-grid");
    if (!fista && a.L_spec.size())
        throw UsageError("--L-grid applies to FISTA only; use --sigma-grid");
    const std::string& sl_spec = fista ? a.L_spec : a.sigma_spec;
    if (sl_spec.empty())
        throw UsageError(fista ? "--L-grid is required" : "--sigma-grid is required");
    std::vector<double> rho_grid = parse_grid_spec(a.rho_spec, "--rho-grid");
    std::vector<double> sl_grid =
        parse_grid_spec(sl_spec, fista ? "--L-grid" : "--sigma-grid");

    cfg.lambda = a.lambda;
    cfg.norm_mode = parse_norm_mode(a.norm_mode);
    cfg.seed = a.seed;

    Tensor<double> S = load_stack(a.images);
    ConstraintSet cs{a.filter_size, a.filter_size, S.shape(1), S.shape(2),
                     cfg.norm_mode};
    cs.validate();
    Dictionary D0 = init_dictionary(a.filters, cs, a.seed);

    std::FILE* out = stdout;
    if (!a.out.empty()) {
        out = std::fopen(a.out.c_str(), "w");
        if (!out) throw IoError("cannot open '" + a.out + "' for writing");
    }
    auto emit_table = [&](const char* stage, const GridTable& t) {
        for (const GridPoint& p : t.points)
            std::fprintf(out, "%s,%.17g,%.17g,%.17g\n", stage, p.rho, p.sigma_or_L,
                         p.final_objective);
    };
    std::fprintf(out, "stage,rho,sigma_or_L,objective\n");
    GridPoint best;
    if (a.refine) {
        TwoStageGrid g = grid_search_two_stage(S, D0, cfg, rho_grid, sl_grid,
                                               a.iters, nullptr, a.threads);
        emit_table("coarse", g.coarse);
        emit_table("fine", g.fine);
        best = g.argmin();
    } else {
        GridTable g = grid_search(S, D0, cfg, rho_grid, sl_grid, a.iters, nullptr,
                                  a.threads);
        emit_table("coarse", g);
        best = g.argmin();
    }
    std::fprintf(out, "# argmin rho=%.17g sigma_or_L=%.17g objective=%.17g\n",
                 best.rho, best.sigma_or_L, best.final_objective);
    if (out != stdout) std::fclose(out);
    return 0;
}

int cmd_eval(const std::vector<std::string>& dict_paths, const std::string& images,
             double lambda, double rho, std::size_t iters) {
    if (!(lambda > 0.0)) throw UsageError("--lambda must be positive");
    if (!(rho > 0.0)) throw UsageError("--rho must be positive");
    if (iters == 0) throw UsageError("--iters must be positive");
    Tensor<double> S = load_stack(images);
    std::vector<CdlSnapshot> snaps;
    ConstraintSet cs;
    for (std::size_t i = 0; i < dict_paths.size(); ++i) {
        DictionaryFile df = load_dictionary(dict_paths[i]);
        if (df.channels != 1)
            throw FormatError("'" + dict_paths[i] + "' is multichannel");
        if (i == 0) {
            cs = df.cset;
        } else if (df.cset.rows != cs.rows || df.cset.cols != cs.cols) {
            throw DimensionError("'" + dict_paths[i] +
                                 "' disagrees with the first dictionary's shape");
        }
        snaps.push_back({i, std::move(df.filters)});
    }
    if (S.shape(1) != cs.rows || S.shape(2) != cs.cols)
        throw DimensionError("images do not match the dictionary shape");
    std::printf("dict,objective\n");
    const auto rows = evaluate_on_test_set(snaps, cs, S, lambda, rho, iters);
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::printf("%s,%.17g\n", dict_paths[i].c_str(), rows[i].test_objective);
    return 0;
}

int cmd_selfcheck() {
    bool all = true;
    for (const auto& r : selfcheck::run_all()) {
        std::printf("check %-44s %s  (%s)\n", (r.name + ":").c_str(),
                    r.pass ? "PASS" : "FAIL", r.detail.c_str());
        all = all && r.pass;
    }
    std::printf("selfcheck: %s\n", all ? "all checks passed" : "FAILURES");
    return all ? 0 : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"convolutional dictionary learning benchmark harness"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "print help for every subcommand");

    // preprocess
    auto* pre = app.add_subcommand(
        "preprocess", "scale images and split off a Tikhonov lowpass component");
    std::string pre_images, pre_out, pre_lowpass;
    double pre_tikhonov = 5.0;
    pre->add_option("--images", pre_images, "input directory (.pgm/.png/.cdlt)")
        ->required();
    pre->add_option("--out", pre_out, "output tensor path for the highpass stack")
        ->required();
    pre->add_option("--lowpass-out", pre_lowpass, "optional lowpass tensor path");
    pre->add_option("--tikhonov", pre_tikhonov,
                    "smoothing weight (0 disables the split)")
        ->capture_default_str();

    // learn
    auto* learn = app.add_subcommand("learn", "run dictionary learning");
    LearnArgs la;
    learn->add_option("--images", la.images, "training directory")->required();
    learn->add_option("--test-images", la.test_images,
                      "held-out directory; prints a test-objective table");
    learn->add_option("--filters", la.filters, "number of filters")
        ->required()
        ->check(CLI::PositiveNumber);
    learn->add_option("--filter-size", la.filter_size, "filter side length")
        ->required()
        ->check(CLI::PositiveNumber);
    learn->add_option("--lambda", la.lambda, "l1 penalty")->capture_default_str();
    learn->add_option("--method", la.method,
                      "CG ISM Tiled Cns CnsP 3D FISTA or masked M-* variants")
        ->required();
    learn->add_option("--iters", la.iters, "outer iterations")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    auto* lrho = learn->add_option("--rho", la.penalty.rho, "sparse-coding penalty");
    auto* lsig =
        learn->add_option("--sigma", la.penalty.sigma, "dictionary ADMM penalty");
    auto* lL = learn->add_option("--L", la.penalty.L, "FISTA step bound");
    learn->add_flag("--auto-params", la.penalty.auto_params,
                    "heuristic penalty defaults for the method and image count")
        ->excludes(lrho)
        ->excludes(lsig)
        ->excludes(lL);
    learn->add_flag("--masked", la.masked, "learn with an observation mask");
    learn->add_option("--mask", la.mask_path, "mask tensor file (0/1 entries)");
    learn->add_option("--mask-zero-frac", la.mask_zero_frac,
                      "generate a random mask with this zero fraction");
    learn->add_option("--norm-mode", la.norm_mode, "filter norm constraint: eq|ball")
        ->capture_default_str();
    learn->add_option("--relax", la.relax, "sparse-coding over-relaxation alpha")
        ->capture_default_str();
    learn->add_option("--seed", la.seed, "RNG seed for init and masks")
        ->capture_default_str();
    learn->add_option("--threads", la.threads, "worker threads for parallel methods")
        ->envname("CDL_THREADS")
        ->capture_default_str();
    learn->add_option("--snapshot-every", la.snapshot_every,
                      "snapshot cadence in iterations (0 disables)")
        ->capture_default_str();
    learn->add_option("--out", la.out, "output dictionary path")->required();
    learn->add_option("--trace", la.trace, "convergence trace CSV path");

    // gridsearch
    auto* grid = app.add_subcommand("gridsearch",
                                    "penalty-parameter search over a logspace grid");
    GridArgs ga;
    grid->add_option("--images", ga.images, "training directory")->required();
    grid->add_option("--filters", ga.filters, "number of filters")
        ->required()
        ->check(CLI::PositiveNumber);
    grid->add_option("--filter-size", ga.filter_size, "filter side length")
        ->required()
        ->check(CLI::PositiveNumber);
    grid->add_option("--lambda", ga.lambda, "l1 penalty")->capture_default_str();
    grid->add_option("--method", ga.method, "unmasked method name")->required();
    grid->add_option("--iters", ga.iters, "iterations per grid point")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    grid->add_option("--rho-grid", ga.rho_spec, "min:max:points (logspace)")
        ->required();
    grid->add_option("--sigma-grid", ga.sigma_spec, "min:max:points (logspace)");
    grid->add_option("--L-grid", ga.L_spec, "min:max:points (logspace, FISTA)");
    grid->add_flag("--refine", ga.refine, "second finer stage around the argmin");
    grid->add_option("--norm-mode", ga.norm_mode, "eq|ball")->capture_default_str();
    grid->add_option("--seed", ga.seed, "RNG seed")->capture_default_str();
    grid->add_option("--threads", ga.threads, "concurrent grid points")
        ->envname("CDL_THREADS")
        ->capture_default_str();
    grid->add_option("--out", ga.out, "table CSV path (default stdout)");

    // eval
    auto* ev = app.add_subcommand("eval",
                                  "sparse-code images against saved dictionaries");
    std::vector<std::string> ev_dicts;
    std::string ev_images;
    double ev_lambda = 0.1, ev_rho = 2.2;
    std::size_t ev_iters = 200;
    ev->add_option("--dict", ev_dicts, "dictionary file (repeatable)")->required();
    ev->add_option("--images", ev_images, "image directory")->required();
    ev->add_option("--lambda", ev_lambda, "l1 penalty")->capture_default_str();
    ev->add_option("--rho", ev_rho, "sparse-coding penalty")->capture_default_str();
    ev->add_option("--iters", ev_iters, "sparse-coding iterations")
        ->capture_default_str();

    // selfcheck
    app.add_subcommand("selfcheck", "run the built-in verification suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "ccdl: error: usage: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (pre->parsed())
            return cmd_preprocess(pre_images, pre_out, pre_lowpass, pre_tikhonov);
        if (learn->parsed()) return cmd_learn(la);
        if (grid->parsed()) return cmd_gridsearch(ga);
        if (ev->parsed()) return cmd_eval(ev_dicts, ev_images, ev_lambda, ev_rho, ev_iters);
        return cmd_selfcheck();
    } catch (const UsageError& e) {
        return emit_error("usage", e.what(), kExitUsage);
    } catch (const ParameterError& e) {
        return emit_error("usage", e.what(), kExitUsage);
    } catch (const DimensionError& e) {
        return emit_error("usage", e.what(), kExitUsage);
    } catch (const IoError& e) {
        return emit_error("io", e.what(), kExitIo);
    } catch (const NumericalError& e) {
        return emit_error("numerical", e.what(), kExitNumerical);
    } catch (const std::exception& e) {
        return emit_error("internal", e.what(), kExitNumerical);
    }
}
