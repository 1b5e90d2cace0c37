#include "mflab/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <filesystem>

namespace mflab {

namespace fs = std::filesystem;

DirLock::DirLock(const std::string& dir) {
    fs::create_directories(dir);
    lock_path_ = dir + "/.lock";
    const int fd = ::open(lock_path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
        throw PipelineError("experiment directory is locked (remove " + lock_path_ +
                            " if no other run is active)");
    ::close(fd);
    held_ = true;
}

DirLock::~DirLock() {
    if (held_) ::unlink(lock_path_.c_str());
}

PipelineContext make_context(const ExperimentConfig& cfg) {
    cfg.validate();
    PipelineContext ctx;
    ctx.cfg = cfg;
    ctx.data = cfg.dataset.path.empty()
                   ? make_mixture_dataset(cfg.dataset.modes, cfg.dataset.atoms,
                                          cfg.dataset.seed, cfg.dataset.radius,
                                          cfg.dataset.sigma)
                   : load_dataset(cfg.dataset.path);
    ctx.data.validate();
    ctx.encoder = FrozenEncoder::make(ctx.data.dim, cfg.encoder.d_z, cfg.encoder.seed,
                                      cfg.encoder.tanh_lift);
    ctx.latent = map_atoms(ctx.data, [&](const Tensor& atoms) {
        return ctx.encoder.encode(atoms);
    });
    return ctx;
}

std::string stage_checkpoint_path(const ExperimentConfig& cfg, const std::string& stage) {
    const std::string file = (stage == "pretrain") ? "teacher.json" : stage + ".json";
    return cfg.output_dir + "/" + file;
}

std::string metrics_path(const ExperimentConfig& cfg, const std::string& stage) {
    return cfg.output_dir + "/metrics_" + stage + ".csv";
}

namespace {

const LinearSchedule kSchedule;

void check_encoder_match(const PipelineContext& ctx, const Checkpoint& ckpt,
                         const std::string& path) {
    if (ckpt.encoder.lift_hash != ctx.encoder.param_hash())
        throw ConfigError("checkpoint was produced with a different encoder: " + path);
}

CheckpointMeta make_meta(const std::string& stage, long iteration, const Rng& rng,
                         const std::string& parent_hash,
                         std::vector<std::string> parent_history) {
    CheckpointMeta meta;
    meta.stage = stage;
    meta.iteration = iteration;
    meta.rng_seed = rng.seed();
    meta.rng_stream = rng.stream();
    meta.rng_counter = rng.counter();
    meta.parent_hash = parent_hash;
    meta.stage_history = std::move(parent_history);
    meta.stage_history.push_back(stage);
    return meta;
}

std::vector<std::pair<std::string, Tensor>> named_ema(const std::vector<std::pair<std::string, Tensor>>& named,
                                                      const EmaTracker& ema) {
    const std::vector<Tensor>& shadow = ema.shadow();
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(shadow.size());
    for (std::size_t i = 0; i < shadow.size(); ++i) out.emplace_back(named[i].first, shadow[i]);
    return out;
}

Mlp ensure_decoder(const PipelineContext& ctx) {
    const std::string path = stage_checkpoint_path(ctx.cfg, "decoder");
    if (fs::exists(path)) {
        const Checkpoint ckpt = load_checkpoint(path);
        check_encoder_match(ctx, ckpt, path);
        return decoder_from_checkpoint(ckpt);
    }
    Rng rng(ctx.cfg.seed, "decoder");
    auto [dec, report] = train_decoder(ctx.data, ctx.encoder, ctx.cfg.decoder, rng);

    Checkpoint ckpt;
    ckpt.meta = make_meta("decoder", static_cast<long>(report.iterations_run), rng, "", {});
    ckpt.encoder = encoder_spec_of(ctx.encoder);
    ckpt.net_kind = "decoder";
    ckpt.mlp_cfg = dec.cfg;
    ckpt.params = named_params(dec);
    ckpt.config_snapshot = ctx.cfg.source_text;
    save_checkpoint(path, ckpt);
    return dec;
}

Mlp require_decoder(const PipelineContext& ctx) {
    const std::string path = stage_checkpoint_path(ctx.cfg, "decoder");
    if (!fs::exists(path))
        throw ConfigError("decoder checkpoint not found (" + path +
                          "); run decoder-train or pretrain first");
    const Checkpoint ckpt = load_checkpoint(path);
    check_encoder_match(ctx, ckpt, path);
    return decoder_from_checkpoint(ckpt);
}

const TrainConfig& require_stage(const ExperimentConfig& cfg, const std::string& stage) {
    const std::optional<TrainConfig>* slot = nullptr;
    if (stage == "pretrain")
        slot = &cfg.pretrain;
    else if (stage == "cmt")
        slot = &cfg.cmt;
    else if (stage == "mfd")
        slot = &cfg.mfd;
    else if (stage == "mft")
        slot = &cfg.mft;
    else
        throw ConfigError("unknown stage: " + stage);
    if (!slot->has_value())
        throw ConfigError("config has no [" + stage + "] section, stage not configured");
    return slot->value();
}

}  // namespace

DecoderTrainReport run_decoder_train(const ExperimentConfig& cfg) {
    const PipelineContext ctx = make_context(cfg);
    DirLock lock(cfg.output_dir);
    const std::string path = stage_checkpoint_path(cfg, "decoder");
    if (fs::exists(path)) fs::remove(path);  // explicit command retrains
    Rng rng(cfg.seed, "decoder");
    auto [dec, report] = train_decoder(ctx.data, ctx.encoder, cfg.decoder, rng);

    Checkpoint ckpt;
    ckpt.meta = make_meta("decoder", static_cast<long>(report.iterations_run), rng, "", {});
    ckpt.encoder = encoder_spec_of(ctx.encoder);
    ckpt.net_kind = "decoder";
    ckpt.mlp_cfg = dec.cfg;
    ckpt.params = named_params(dec);
    ckpt.config_snapshot = cfg.source_text;
    save_checkpoint(path, ckpt);
    return report;
}

void run_pretrain(const ExperimentConfig& cfg) {
    const PipelineContext ctx = make_context(cfg);
    DirLock lock(cfg.output_dir);
    ensure_decoder(ctx);
    const TrainConfig& tc = require_stage(cfg, "pretrain");

    Rng init_rng(cfg.seed, "pretrain-init");
    VelocityNet net = make_velocity_net(
        cfg.make_net_config(ctx.latent.dim, ctx.latent.num_classes()), init_rng);
    EmaTracker ema(tc.ema_beta, collect_params(net));

    MetricsWriter writer(metrics_path(cfg, "pretrain"));
    Rng rng(cfg.seed, "pretrain");
    train_velocity_stage(net, ema, ctx.latent, kSchedule, tc, rng, &writer, "pretrain");

    Checkpoint ckpt;
    ckpt.meta = make_meta("pretrain", static_cast<long>(tc.iterations), rng, "", {});
    ckpt.encoder = encoder_spec_of(ctx.encoder);
    ckpt.net_kind = "velocity";
    ckpt.net_cfg = net.cfg;
    ckpt.params = named_params(net);
    ckpt.ema = named_ema(ckpt.params, ema);
    ckpt.config_snapshot = cfg.source_text;
    save_checkpoint(stage_checkpoint_path(cfg, "pretrain"), ckpt);
}

void run_cmt(const ExperimentConfig& cfg, const std::string& teacher_path) {
    const PipelineContext ctx = make_context(cfg);
    DirLock lock(cfg.output_dir);
    const TrainConfig& tc = require_stage(cfg, "cmt");

    const std::string tpath =
        teacher_path.empty() ? stage_checkpoint_path(cfg, "pretrain") : teacher_path;
    const Checkpoint teacher_ckpt = load_checkpoint(tpath);
    check_encoder_match(ctx, teacher_ckpt, tpath);
    // The averaged weights are the published teacher; fall back to the live
    // set for checkpoints that never tracked an average.
    const VelocityNet teacher =
        velocity_from_checkpoint(teacher_ckpt, !teacher_ckpt.ema.empty());

    Rng init_rng(cfg.seed, "cmt-init");
    FlowMapNet net = flowmap_from_velocity(teacher, init_rng);
    EmaTracker ema(tc.ema_beta, collect_params(net));

    MetricsWriter writer(metrics_path(cfg, "cmt"));
    Rng rng(cfg.seed, "cmt");
    train_cmt_stage(net, ema, teacher, class_probs(ctx.latent), tc, rng, &writer, "cmt");

    Checkpoint ckpt;
    ckpt.meta = make_meta("cmt", static_cast<long>(tc.iterations), rng, file_hash_hex(tpath),
                          teacher_ckpt.meta.stage_history);
    ckpt.encoder = encoder_spec_of(ctx.encoder);
    ckpt.net_kind = "flowmap";
    ckpt.net_cfg = net.cfg;
    ckpt.params = named_params(net);
    ckpt.ema = named_ema(ckpt.params, ema);
    ckpt.config_snapshot = cfg.source_text;
    save_checkpoint(stage_checkpoint_path(cfg, "cmt"), ckpt);
}

void run_mf(const ExperimentConfig& cfg, const std::string& stage, const std::string& init_path,
            const std::string& teacher_path, bool allow_uninitialized) {
    if (stage != "mfd" && stage != "mft")
        throw ConfigError("mean-flow stage must be 'mfd' or 'mft', got: " + stage);
    const PipelineContext ctx = make_context(cfg);
    DirLock lock(cfg.output_dir);
    const TrainConfig& tc = require_stage(cfg, stage);

    const std::string ipath = init_path.empty()
                                  ? stage_checkpoint_path(cfg, stage == "mfd" ? "cmt" : "mfd")
                                  : init_path;
    const Checkpoint init_ckpt = load_checkpoint(ipath);
    check_encoder_match(ctx, init_ckpt, ipath);

    Rng init_rng(cfg.seed, stage + "-init");
    FlowMapNet net = [&] {
        // Chained stages restart the optimizer from scratch, so each one
        // trains the model its predecessor published: the averaged weights.
        if (init_ckpt.net_kind == "flowmap")
            return flowmap_from_checkpoint(init_ckpt, !init_ckpt.ema.empty());
        if (init_ckpt.net_kind == "velocity")
            return flowmap_from_velocity(
                velocity_from_checkpoint(init_ckpt, !init_ckpt.ema.empty()), init_rng);
        throw ConfigError("cannot initialize a flow map from a '" + init_ckpt.net_kind +
                          "' checkpoint");
    }();
    if (stage == "mfd" && !init_ckpt.has_stage("cmt") && !allow_uninitialized)
        throw PipelineError(
            "refusing an mfd run from an initialization without a consistency stage (" + ipath +
            "); pass the override flag to run it anyway");

    const VelocityNet* teacher_ptr = nullptr;
    VelocityNet teacher;
    if (tc.lambda > 0.0) {
        const std::string tpath =
            teacher_path.empty() ? stage_checkpoint_path(cfg, "pretrain") : teacher_path;
        const Checkpoint teacher_ckpt = load_checkpoint(tpath);
        check_encoder_match(ctx, teacher_ckpt, tpath);
        teacher = velocity_from_checkpoint(teacher_ckpt, !teacher_ckpt.ema.empty());
        teacher_ptr = &teacher;
    }

    EmaTracker ema(tc.ema_beta, collect_params(net));
    MetricsWriter writer(metrics_path(cfg, stage));
    Rng rng(cfg.seed, stage);
    train_mf_stage(net, ema, teacher_ptr, ctx.latent, kSchedule, tc, rng, &writer, stage);

    Checkpoint ckpt;
    ckpt.meta = make_meta(stage, static_cast<long>(tc.iterations), rng, file_hash_hex(ipath),
                          init_ckpt.meta.stage_history);
    ckpt.encoder = encoder_spec_of(ctx.encoder);
    ckpt.net_kind = "flowmap";
    ckpt.net_cfg = net.cfg;
    ckpt.params = named_params(net);
    ckpt.ema = named_ema(ckpt.params, ema);
    ckpt.config_snapshot = cfg.source_text;
    save_checkpoint(stage_checkpoint_path(cfg, stage), ckpt);
}

SampleRunResult run_sample(const ExperimentConfig& cfg, const std::string& ckpt_path,
                           std::size_t n, long nfe, int cls, const std::string& out_csv,
                           std::size_t metrics_draws) {
    if (nfe < 1) throw ConfigError("sampling needs nfe >= 1");
    const PipelineContext ctx = make_context(cfg);
    DirLock lock(cfg.output_dir);
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    check_encoder_match(ctx, ckpt, ckpt_path);
    const Mlp decoder = require_decoder(ctx);

    const std::size_t d = ctx.latent.dim;
    Rng rng(cfg.seed, "sample");
    Rng noise_rng = rng.fork("noise");
    Rng class_rng = rng.fork("class");
    Rng holdout_rng = rng.fork("holdout");

    // Labels: fixed class or dataset class frequencies.
    std::vector<int> labels(n, cls);
    if (cls < 0) {
        const std::vector<double> probs = class_probs(ctx.latent);
        for (std::size_t i = 0; i < n; ++i) {
            double u = class_rng.uniform();
            int pick = static_cast<int>(probs.size()) - 1;
            for (std::size_t k = 0; k < probs.size(); ++k) {
                u -= probs[k];
                if (u < 0.0) {
                    pick = static_cast<int>(k);
                    break;
                }
            }
            labels[i] = pick;
        }
    }

    Tensor z = normal_tensor(noise_rng, {n, d});
    Tensor endpoint({n, d});
    if (n > 0) {
        // Sample from the averaged weights when the checkpoint carries them;
        // the average is the model a stage publishes.
        if (ckpt.net_kind == "flowmap") {
            const FlowMapNet net = flowmap_from_checkpoint(ckpt, !ckpt.ema.empty());
            std::vector<double> times = cfg.sample.step_times;
            if (times.empty()) {
                times.resize(static_cast<std::size_t>(nfe) + 1);
                for (long i = 0; i <= nfe; ++i)
                    times[static_cast<std::size_t>(i)] =
                        1.0 - static_cast<double>(i) / static_cast<double>(nfe);
                times.back() = 0.0;
            }
            endpoint = sample_flowmap(net, z, times, labels);
        } else if (ckpt.net_kind == "velocity") {
            const VelocityNet net = velocity_from_checkpoint(ckpt, !ckpt.ema.empty());
            const NetVelocityField field(net, labels);
            const Trajectory traj = solve_pfode(field, z, 1.0, 0.0,
                                                static_cast<std::size_t>(nfe), OdeMethod::euler);
            // states are grid-ordered (ascending time): the integrated
            // endpoint at t = 0 sits at the front, the noise at the back.
            endpoint = traj.states.front();
        } else {
            throw ConfigError("cannot sample from a '" + ckpt.net_kind + "' checkpoint");
        }
    }

    const Tensor decoded = n > 0 ? decode(decoder, endpoint) : Tensor({n, ctx.data.dim});
    std::vector<std::string> cols(ctx.data.dim);
    for (std::size_t j = 0; j < cols.size(); ++j) cols[j] = "x" + std::to_string(j);
    SampleRunResult result;
    result.samples_path = out_csv.empty() ? cfg.output_dir + "/samples.csv" : out_csv;
    result.n = n;
    result.nfe = nfe;
    save_samples_csv(result.samples_path, cols, decoded);

    if (metrics_draws > 0 && n > 0) {
        Tensor holdout({metrics_draws, ctx.data.dim});
        for (std::size_t i = 0; i < metrics_draws; ++i) {
            const std::size_t k = sample_atom(ctx.data, holdout_rng);
            for (std::size_t j = 0; j < ctx.data.dim; ++j)
                holdout.at(i, j) = ctx.data.atoms.at(k, j);
        }
        result.metrics = two_sample_metrics(decoded, holdout);
        result.metrics_computed = true;
    }
    return result;
}

DecompositionReport run_verify(const ExperimentConfig& cfg, const std::string& theta_path,
                               const std::string& detached_path,
                               const std::string& teacher_path, std::vector<double> lambdas,
                               std::size_t n_probes, const std::string& out_json) {
    const PipelineContext ctx = make_context(cfg);
    DirLock lock(cfg.output_dir);

    const std::string thpath =
        theta_path.empty() ? stage_checkpoint_path(cfg, "cmt") : theta_path;
    const Checkpoint theta_ckpt = load_checkpoint(thpath);
    check_encoder_match(ctx, theta_ckpt, thpath);
    const FlowMapNet theta = flowmap_from_checkpoint(theta_ckpt);

    // The detached net: an explicit checkpoint, else this checkpoint's EMA
    // arrays (a natural frozen companion), else the live arrays themselves.
    FlowMapNet theta_minus = [&] {
        if (!detached_path.empty()) {
            const Checkpoint c = load_checkpoint(detached_path);
            check_encoder_match(ctx, c, detached_path);
            return flowmap_from_checkpoint(c);
        }
        return flowmap_from_checkpoint(theta_ckpt, /*use_ema=*/!theta_ckpt.ema.empty());
    }();

    const std::string tpath =
        teacher_path.empty() ? stage_checkpoint_path(cfg, "pretrain") : teacher_path;
    const Checkpoint teacher_ckpt = load_checkpoint(tpath);
    check_encoder_match(ctx, teacher_ckpt, tpath);
    const VelocityNet teacher =
        velocity_from_checkpoint(teacher_ckpt, !teacher_ckpt.ema.empty());

    const std::vector<Probe> probes = make_probes(ctx.latent, kSchedule, n_probes, cfg.seed);
    DecompositionReport report =
        verify_prop1(theta, theta_minus, teacher, ctx.latent, kSchedule, lambdas, probes);
    const std::string path =
        out_json.empty() ? cfg.output_dir + "/decomposition.json" : out_json;
    save_decomposition_report(path, report);
    return report;
}

std::vector<FdStudyRow> run_fd_study(const ExperimentConfig& cfg, const std::string& ckpt_path,
                                     std::vector<double> ladder, std::size_t n_probes,
                                     const std::string& out_csv) {
    const PipelineContext ctx = make_context(cfg);
    DirLock lock(cfg.output_dir);
    const std::string path = ckpt_path.empty() ? stage_checkpoint_path(cfg, "cmt") : ckpt_path;
    const Checkpoint ckpt = load_checkpoint(path);
    check_encoder_match(ctx, ckpt, path);
    const FlowMapNet net = flowmap_from_checkpoint(ckpt);

    const std::vector<DirectedProbe> probes =
        make_fd_probes(ctx.latent, kSchedule, n_probes, cfg.seed);
    const std::vector<FdStudyRow> rows = fd_order_study(net, probes, ladder);
    save_fd_study_csv(out_csv.empty() ? cfg.output_dir + "/fd_study.csv" : out_csv, rows);
    return rows;
}

}  // namespace mflab
