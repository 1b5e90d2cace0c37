// Command-line front end for the mean-flow latent laboratory.
//
// Subcommands mirror the three-stage recipe (pretrain -> cmt -> mf) plus the
// verification and bookkeeping commands. Exit codes: 0 success, 2 bad
// configuration or malformed input, 3 training divergence, 1 anything else.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mflab/pipeline.hpp"

namespace {

void print_two_sample(const mflab::TwoSampleMetrics& m) {
    std::cout << "energy_distance=" << mflab::format_double(m.energy_distance)
              << " mmd_rbf=" << mflab::format_double(m.mmd_rbf)
              << " gauss_w2=" << mflab::format_double(m.gauss_w2)
              << " mmd_bandwidth=" << mflab::format_double(m.mmd_bandwidth)
              << " covariance_regularized=" << (m.covariance_regularized ? 1 : 0) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Desk-scale mean-flow pipeline in a lifted latent space"};
    app.require_subcommand(1);

    std::string cfg_path;

    auto* pre = app.add_subcommand("pretrain", "Stage 1: train the flow-matching teacher");
    pre->add_option("--config", cfg_path, "experiment TOML file")->required();

    auto* cmt = app.add_subcommand("cmt", "Stage 2: consistency mid-training of the flow map");
    std::string cmt_teacher;
    cmt->add_option("--config", cfg_path, "experiment TOML file")->required();
    cmt->add_option("--teacher", cmt_teacher, "teacher checkpoint (default: <out>/teacher.json)");

    auto* mf = app.add_subcommand("mf", "Stage 3: mean-flow training (mfd or mft section)");
    std::string mf_stage, mf_init, mf_teacher;
    bool mf_override = false;
    mf->add_option("--config", cfg_path, "experiment TOML file")->required();
    mf->add_option("--stage", mf_stage, "which section to run: mfd | mft")->required();
    mf->add_option("--init", mf_init, "initialization checkpoint (default by stage)");
    mf->add_option("--teacher", mf_teacher, "teacher checkpoint (needed when lambda > 0)");
    mf->add_flag("--allow-uninitialized", mf_override,
                 "permit mfd from an init without a consistency-stage ancestor");

    auto* sam = app.add_subcommand("sample", "Draw samples from a checkpoint and decode them");
    std::string sam_ckpt, sam_out;
    long sam_n = -1, sam_nfe = -1, sam_metrics = -1;
    int sam_cls = -1;
    sam->add_option("--config", cfg_path, "experiment TOML file")->required();
    sam->add_option("--ckpt", sam_ckpt, "checkpoint to sample from")->required();
    sam->add_option("--n", sam_n, "number of samples (default: [sample] n)");
    sam->add_option("--nfe", sam_nfe, "network evaluations per sample (default: [sample] nfe)");
    sam->add_option("--class", sam_cls, "fixed class label; -1 draws from class frequencies");
    sam->add_option("--out", sam_out, "samples CSV path (default: <out>/samples.csv)");
    sam->add_option("--metrics-draws", sam_metrics,
                    "dataset draws to score against (default: [sample] metrics_draws)");

    auto* ver = app.add_subcommand("verify-prop1",
                                   "Check the loss decomposition identity probe by probe");
    std::string ver_ckpt, ver_detached, ver_teacher, ver_out;
    std::vector<double> ver_lambdas = {0.0, 0.25, 0.5, 0.75, 1.0};
    std::size_t ver_probes = 75;
    ver->add_option("--config", cfg_path, "experiment TOML file")->required();
    ver->add_option("--ckpt", ver_ckpt, "flow-map checkpoint (default: <out>/cmt.json)");
    ver->add_option("--detached", ver_detached,
                    "detached-net checkpoint (default: same checkpoint's EMA arrays)");
    ver->add_option("--teacher", ver_teacher, "teacher checkpoint (default: <out>/teacher.json)");
    ver->add_option("--lambda", ver_lambdas, "velocity mix weights to test")->expected(-1);
    ver->add_option("--probes", ver_probes, "number of probes (stratified times)");
    ver->add_option("--out", ver_out, "report JSON path (default: <out>/decomposition.json)");

    auto* fds = app.add_subcommand("fd-study",
                                   "Finite-difference convergence study of the transport derivative");
    std::string fds_ckpt, fds_out;
    std::vector<double> fds_ladder = {0.02, 0.01, 0.005, 0.0025};
    std::size_t fds_probes = 30;
    fds->add_option("--config", cfg_path, "experiment TOML file")->required();
    fds->add_option("--ckpt", fds_ckpt, "flow-map checkpoint (default: <out>/cmt.json)");
    fds->add_option("--ladder", fds_ladder, "strictly decreasing step ladder")->expected(-1);
    fds->add_option("--probes", fds_probes, "number of probes");
    fds->add_option("--out", fds_out, "study CSV path (default: <out>/fd_study.csv)");

    auto* bud = app.add_subcommand("budget", "Generation cost: decoder + nfe * backbone");
    mflab::BudgetSpec bud_spec;
    bud->add_option("--decoder", bud_spec.decoder_gflops, "decoder cost in GFLOPS")->required();
    bud->add_option("--backbone", bud_spec.backbone_gflops, "per-evaluation backbone cost")
        ->required();
    bud->add_option("--nfe", bud_spec.nfe, "number of function evaluations");

    auto* dec = app.add_subcommand("decoder-train", "Fit the latent->data decoder and stop");
    dec->add_option("--config", cfg_path, "experiment TOML file")->required();

    auto* met = app.add_subcommand("metrics",
                                   "Two-sample metrics between CSVs, or a telemetry summary");
    std::string met_a, met_b, met_log;
    met->add_option("--a", met_a, "first samples CSV");
    met->add_option("--b", met_b, "second samples CSV");
    met->add_option("--log", met_log, "metrics CSV to summarize for instability");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (pre->parsed()) {
            mflab::run_pretrain(mflab::load_experiment_config(cfg_path));
            std::cout << "pretrain done\n";
        } else if (cmt->parsed()) {
            mflab::run_cmt(mflab::load_experiment_config(cfg_path), cmt_teacher);
            std::cout << "cmt done\n";
        } else if (mf->parsed()) {
            mflab::run_mf(mflab::load_experiment_config(cfg_path), mf_stage, mf_init, mf_teacher,
                          mf_override);
            std::cout << mf_stage << " done\n";
        } else if (sam->parsed()) {
            const mflab::ExperimentConfig cfg = mflab::load_experiment_config(cfg_path);
            const std::size_t n =
                sam_n < 0 ? cfg.sample.n : static_cast<std::size_t>(sam_n);
            const long nfe = sam_nfe < 0 ? cfg.sample.nfe : sam_nfe;
            const std::size_t draws = sam_metrics < 0 ? cfg.sample.metrics_draws
                                                      : static_cast<std::size_t>(sam_metrics);
            const mflab::SampleRunResult res =
                mflab::run_sample(cfg, sam_ckpt, n, nfe, sam_cls, sam_out, draws);
            std::cout << "wrote " << res.n << " samples to " << res.samples_path
                      << " (nfe=" << res.nfe << ")\n";
            if (res.metrics_computed) print_two_sample(res.metrics);
        } else if (ver->parsed()) {
            const mflab::DecompositionReport report =
                mflab::run_verify(mflab::load_experiment_config(cfg_path), ver_ckpt,
                                  ver_detached, ver_teacher, ver_lambdas, ver_probes, ver_out);
            for (const auto& block : report.blocks)
                std::cout << "lambda=" << mflab::format_double(block.lambda)
                          << " max_gap=" << mflab::format_double(block.max_gap)
                          << " max_cross=" << mflab::format_double(block.max_cross)
                          << " max_variance=" << mflab::format_double(block.max_variance)
                          << "\n";
            std::cout << "max_gap=" << mflab::format_double(report.max_gap)
                      << " max_cross=" << mflab::format_double(report.max_cross)
                      << " (tolerances " << mflab::format_double(report.tolerance_gap) << ", "
                      << mflab::format_double(report.tolerance_cross) << ")\n";
        } else if (fds->parsed()) {
            const auto rows = mflab::run_fd_study(mflab::load_experiment_config(cfg_path),
                                                  fds_ckpt, fds_ladder, fds_probes, fds_out);
            for (const auto& r : rows)
                std::cout << "dt=" << mflab::format_double(r.dt)
                          << " max_rel_err=" << mflab::format_double(r.max_rel_err) << "\n";
            if (!rows.empty())
                std::cout << "fitted_order=" << mflab::format_double(rows.front().fitted_order)
                          << "\n";
        } else if (bud->parsed()) {
            std::cout << mflab::format_double(mflab::budget(bud_spec)) << "\n";
        } else if (dec->parsed()) {
            const mflab::DecoderTrainReport report =
                mflab::run_decoder_train(mflab::load_experiment_config(cfg_path));
            std::cout << "decoder iterations=" << report.iterations_run
                      << " rmse=" << mflab::format_double(report.final_rmse)
                      << " converged=" << (report.converged ? 1 : 0) << "\n";
        } else if (met->parsed()) {
            const bool pair_mode = !met_a.empty() || !met_b.empty();
            if (pair_mode == !met_log.empty())
                throw mflab::ConfigError("metrics: pass either --a/--b or --log");
            if (pair_mode) {
                if (met_a.empty() || met_b.empty())
                    throw mflab::ConfigError("metrics: --a and --b go together");
                print_two_sample(mflab::two_sample_metrics(mflab::load_samples_csv(met_a),
                                                           mflab::load_samples_csv(met_b)));
            } else {
                const mflab::InstabilityReport report =
                    mflab::instability_summary(mflab::load_metrics_csv(met_log));
                for (const auto& st : report.stages)
                    std::cout << "stage=" << st.stage << " steps=" << st.steps
                              << " max_grad_norm=" << mflab::format_double(st.max_grad_norm)
                              << " first_spike=" << st.first_spike_iter
                              << " diverged=" << (st.diverged ? 1 : 0)
                              << " final_loss=" << mflab::format_double(st.final_loss) << "\n";
                if (report.stages.empty()) std::cout << "no telemetry rows\n";
            }
        }
    } catch (const mflab::DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return 3;
    } catch (const mflab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const mflab::ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
