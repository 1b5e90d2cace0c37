// End-to-end pipeline commands against temporary experiment directories:
// directory locking, stage wiring and lineage, initialization contracts,
// refusal rules, sampling output, and bit-level rerun determinism. Heavy
// training is confined to two single-atom experiments (a teacher-only run and
// a full four-stage chain); everything else uses zero-iteration stages, which
// exercise the plumbing at full fidelity.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "mflab/pipeline.hpp"
#include "test_support.hpp"

using namespace mflab;
namespace ts = mflab::test;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// small-but-real experiment config; stages opt in via the extra block
ExperimentConfig tiny_config(const std::string& dir, const std::string& extra) {
    const std::string text =
        "seed = 404\n"
        "output_dir = \"" + dir + "\"\n"
        "[dataset]\n"
        "modes = 2\n"
        "atoms = 8\n"
        "seed = 5\n"
        "radius = 2.0\n"
        "sigma = 0.1\n"
        "[encoder]\n"
        "d_z = 4\n"
        "seed = 21\n"
        "[decoder]\n"
        "hidden = 32\n"
        "depth = 2\n"
        "iterations = 400\n"
        "lr = 3e-3\n"
        "[net]\n"
        "hidden = 16\n"
        "depth = 2\n"
        "frequencies = 4\n" +
        extra;
    return parse_experiment_config(text);
}

const std::string kZeroStages =
    "[pretrain]\niterations = 0\n"
    "[cmt]\niterations = 0\n"
    "[mfd]\niterations = 0\n"
    "[mft]\niterations = 0\n";

}  // namespace

TEST_CASE("context construction lifts the dataset through the frozen encoder") {
    ts::TempDir dir("ctx");
    ExperimentConfig cfg = tiny_config(dir.file("run"), "");
    PipelineContext ctx = make_context(cfg);
    CHECK(ctx.data.dim == 2);
    CHECK(ctx.latent.dim == 4);
    CHECK(ctx.latent.atoms.rows() == ctx.data.atoms.rows());
    CHECK(ts::max_abs_diff(ctx.latent.atoms, ctx.encoder.encode(ctx.data.atoms)) == 0.0);
    for (std::size_t k = 0; k < ctx.data.weights.size(); ++k) {
        CHECK(ctx.latent.weights[k] == ctx.data.weights[k]);
        CHECK(ctx.latent.labels[k] == ctx.data.labels[k]);
    }
    ctx.latent.validate();
}

TEST_CASE("directory lock admits one holder at a time") {
    ts::TempDir dir("lock");
    const std::string run = dir.file("run");
    {
        DirLock first(run);
        CHECK(fs::exists(run + "/.lock"));
        CHECK_THROWS_AS(DirLock{run}, PipelineError);
    }
    CHECK_FALSE(fs::exists(run + "/.lock"));
    DirLock again(run);  // released cleanly, so a new holder succeeds
}

TEST_CASE("artifact paths follow the stage naming scheme") {
    ts::TempDir dir("paths");
    ExperimentConfig cfg = tiny_config(dir.file("run"), "");
    CHECK(stage_checkpoint_path(cfg, "pretrain") == dir.file("run") + "/teacher.json");
    CHECK(stage_checkpoint_path(cfg, "cmt") == dir.file("run") + "/cmt.json");
    CHECK(stage_checkpoint_path(cfg, "mft") == dir.file("run") + "/mft.json");
    CHECK(stage_checkpoint_path(cfg, "decoder") == dir.file("run") + "/decoder.json");
    CHECK(metrics_path(cfg, "cmt") == dir.file("run") + "/metrics_cmt.csv");
}

TEST_CASE("zero-iteration stages: wiring, initialization, lineage, refusals") {
    ts::TempDir dir("wiring");
    ExperimentConfig cfg = tiny_config(dir.file("run"), kZeroStages);

    run_pretrain(cfg);
    CHECK(fs::exists(stage_checkpoint_path(cfg, "decoder")));
    CHECK(fs::exists(stage_checkpoint_path(cfg, "pretrain")));
    CHECK(load_metrics_csv(metrics_path(cfg, "pretrain")).empty());

    // a zero-iteration run checkpoints exactly the seeded initialization
    Checkpoint teacher_ckpt = load_checkpoint(stage_checkpoint_path(cfg, "pretrain"));
    CHECK(teacher_ckpt.net_kind == "velocity");
    CHECK(teacher_ckpt.meta.stage_history == std::vector<std::string>{"pretrain"});
    CHECK(teacher_ckpt.meta.parent_hash.empty());
    {
        PipelineContext ctx = make_context(cfg);
        Rng init_rng(cfg.seed, "pretrain-init");
        VelocityNet expect = make_velocity_net(
            cfg.make_net_config(ctx.latent.dim, ctx.latent.num_classes()), init_rng);
        VelocityNet got = velocity_from_checkpoint(teacher_ckpt);
        std::vector<Tensor*> pe = collect_params(expect), pg = collect_params(got);
        for (std::size_t i = 0; i < pe.size(); ++i)
            CHECK(ts::max_abs_diff(*pe[i], *pg[i]) == 0.0);
        // EMA starts as a copy of the parameters
        VelocityNet ema_net = velocity_from_checkpoint(teacher_ckpt, /*use_ema=*/true);
        std::vector<Tensor*> pm = collect_params(ema_net);
        for (std::size_t i = 0; i < pg.size(); ++i)
            CHECK(ts::max_abs_diff(*pg[i], *pm[i]) == 0.0);
    }

    // consistency stage initializes its trunk from the teacher weights
    run_cmt(cfg);
    Checkpoint cmt_ckpt = load_checkpoint(stage_checkpoint_path(cfg, "cmt"));
    CHECK(cmt_ckpt.net_kind == "flowmap");
    CHECK(cmt_ckpt.meta.stage_history == std::vector<std::string>{"pretrain", "cmt"});
    CHECK(cmt_ckpt.meta.parent_hash ==
          file_hash_hex(stage_checkpoint_path(cfg, "pretrain")));
    {
        VelocityNet teacher = velocity_from_checkpoint(teacher_ckpt);
        Rng init_rng(cfg.seed, "cmt-init");
        FlowMapNet expect = flowmap_from_velocity(teacher, init_rng);
        FlowMapNet got = flowmap_from_checkpoint(cmt_ckpt);
        CHECK(ts::max_abs_diff(got.p.trunk[0].W, expect.p.trunk[0].W) == 0.0);
        CHECK(ts::max_abs_diff(got.p.embed_t.W, expect.p.embed_t.W) == 0.0);
        CHECK(ts::max_abs_diff(got.p.embed_dt.W, expect.p.embed_dt.W) == 0.0);
        CHECK(ts::max_abs_diff(got.p.class_table, expect.p.class_table) == 0.0);
    }

    // distillation refuses an initialization that never saw the consistency
    // stage, unless explicitly overridden
    CHECK_THROWS_AS(
        run_mf(cfg, "mfd", stage_checkpoint_path(cfg, "pretrain")), PipelineError);
    run_mf(cfg, "mfd", stage_checkpoint_path(cfg, "pretrain"), "", true);
    Checkpoint forced = load_checkpoint(stage_checkpoint_path(cfg, "mfd"));
    CHECK(forced.meta.stage_history == std::vector<std::string>{"pretrain", "mfd"});

    // the default chain goes teacher -> cmt -> mfd -> mft
    run_mf(cfg, "mfd");
    Checkpoint mfd_ckpt = load_checkpoint(stage_checkpoint_path(cfg, "mfd"));
    CHECK(mfd_ckpt.meta.stage_history ==
          std::vector<std::string>{"pretrain", "cmt", "mfd"});
    CHECK(mfd_ckpt.meta.parent_hash == file_hash_hex(stage_checkpoint_path(cfg, "cmt")));
    run_mf(cfg, "mft");
    Checkpoint mft_ckpt = load_checkpoint(stage_checkpoint_path(cfg, "mft"));
    CHECK(mft_ckpt.meta.stage_history ==
          std::vector<std::string>{"pretrain", "cmt", "mfd", "mft"});

    // unknown stage names and unconfigured stages are configuration errors
    CHECK_THROWS_AS(run_mf(cfg, "warmup"), ConfigError);
    ExperimentConfig no_cmt = tiny_config(dir.file("other"), "[pretrain]\niterations = 0\n");
    CHECK_THROWS_AS(run_cmt(no_cmt), ConfigError);
    // missing teacher checkpoint surfaces as an open failure
    CHECK_THROWS_AS(run_cmt(tiny_config(dir.file("fresh"),
                                        "[cmt]\niterations = 0\n")),
                    ConfigError);

    // a checkpoint from a different encoder is rejected up front
    ExperimentConfig other_enc = cfg;
    other_enc.encoder.seed = 22;
    CHECK_THROWS_AS(run_cmt(other_enc), ConfigError);

    // sampling with n = 0 writes a header-only table and skips metrics
    SampleRunResult empty = run_sample(cfg, stage_checkpoint_path(cfg, "mft"), 0, 1);
    CHECK_FALSE(empty.metrics_computed);
    Tensor none = load_samples_csv(empty.samples_path);
    CHECK(none.rows() == 0);
    CHECK(none.cols() == 2);
    CHECK_THROWS_AS(run_sample(cfg, stage_checkpoint_path(cfg, "mft"), 4, 0), ConfigError);
    // a decoder checkpoint is not something one can sample from
    CHECK_THROWS_AS(
        run_sample(cfg, stage_checkpoint_path(cfg, "decoder"), 4, 1), ConfigError);
}

namespace {

// per-sample distances from decoded rows to the atom at (0.5, -0.25)
struct AtomErrs {
    double worst = 0.0, mean = 0.0, median = 0.0;
};

AtomErrs atom_errors(const Tensor& samples) {
    REQUIRE(samples.rows() > 0);
    std::vector<double> errs(samples.rows());
    for (std::size_t i = 0; i < samples.rows(); ++i) {
        const double dx = samples.at(i, 0) - 0.5, dy = samples.at(i, 1) + 0.25;
        errs[i] = std::sqrt(dx * dx + dy * dy);
    }
    std::sort(errs.begin(), errs.end());
    AtomErrs out;
    out.worst = errs.back();
    for (double e : errs) out.mean += e / static_cast<double>(errs.size());
    out.median = errs[errs.size() / 2];
    return out;
}

}  // namespace

TEST_CASE("single-atom experiment: trained teacher lands on the lifted atom") {
    ts::TempDir dir("single");
    FiniteSupportDataset one = single_atom_dataset(Tensor::row({0.5, -0.25}));
    save_dataset(one, dir.file("atom.json"));

    // 2k iterations at a brisk rate; the averaged weights carry the model
    ExperimentConfig cfg = parse_experiment_config(
        "seed = 404\n"
        "output_dir = \"" + dir.file("run") + "\"\n"
        "[dataset]\nmodes = 2\natoms = 8\n"
        "[encoder]\nd_z = 4\nseed = 21\n"
        "[decoder]\nhidden = 32\ndepth = 2\niterations = 400\nlr = 3e-3\n"
        "[net]\nhidden = 64\ndepth = 3\nfrequencies = 16\n"
        "[pretrain]\niterations = 2000\nbatch_size = 256\nlr = 4e-3\nema_beta = 0.99\n");
    cfg.dataset = DatasetSpec{};
    cfg.dataset.path = dir.file("atom.json");
    cfg.decoder.target_rmse = 1e-5;

    run_pretrain(cfg);
    const std::vector<MetricsRow> rows = load_metrics_csv(metrics_path(cfg, "pretrain"));
    CHECK(rows.size() == 2000);

    // 16-step Euler endpoints in latent space sit on the encoded atom; every
    // one of 64 noise draws (the run_sample stream) lands within 1e-2
    const PipelineContext ctx = make_context(cfg);
    const Checkpoint teacher_ckpt = load_checkpoint(stage_checkpoint_path(cfg, "pretrain"));
    const VelocityNet teacher = velocity_from_checkpoint(teacher_ckpt, true);
    Rng sample_rng(cfg.seed, "sample");
    Rng noise_rng = sample_rng.fork("noise");
    const Tensor z = normal_tensor(noise_rng, {64, 4});
    const NetVelocityField field(teacher, 0);
    const Trajectory traj = solve_pfode(field, z, 1.0, 0.0, 16, OdeMethod::euler);
    const Tensor& endpoint = traj.states.front();
    double latent_worst = 0.0;
    for (std::size_t i = 0; i < endpoint.rows(); ++i) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < endpoint.cols(); ++j)
            d2 += std::pow(endpoint.at(i, j) - ctx.latent.atoms.at(0, j), 2);
        latent_worst = std::max(latent_worst, std::sqrt(d2));
    }
    CHECK(latent_worst < 1e-2);

    // and decoded back to data space they sit on the atom itself
    SampleRunResult res = run_sample(cfg, stage_checkpoint_path(cfg, "pretrain"), 64, 16,
                                     -1, dir.file("run") + "/teacher_samples.csv", 128);
    const AtomErrs errs = atom_errors(load_samples_csv(res.samples_path));
    CHECK(errs.worst < 1e-2);
    CHECK(res.metrics_computed);
    CHECK(res.metrics.energy_distance < 0.05);
}

TEST_CASE("single-atom experiment: full chain gives a one-step sampler on the atom") {
    ts::TempDir dir("single-chain");
    FiniteSupportDataset one = single_atom_dataset(Tensor::row({0.5, -0.25}));
    save_dataset(one, dir.file("atom.json"));

    // A gentle teacher (its trunk seeds every student), a long consistency
    // stage, then brief low-rate mean-flow stages. The distillation stage
    // keeps the default time floor; the one-point stage raises it because its
    // mixed velocity v-hat = (z - x)/t blows up as t approaches zero.
    ExperimentConfig cfg = parse_experiment_config(
        "seed = 404\n"
        "output_dir = \"" + dir.file("run") + "\"\n"
        "[dataset]\nmodes = 2\natoms = 8\n"
        "[encoder]\nd_z = 4\nseed = 21\n"
        "[decoder]\nhidden = 32\ndepth = 2\niterations = 400\nlr = 3e-3\n"
        "[net]\nhidden = 64\ndepth = 3\nfrequencies = 8\n"
        "[pretrain]\niterations = 4000\nbatch_size = 256\nlr = 1e-3\nema_beta = 0.99\n"
        "t_min = 0.02\n"
        "[cmt]\niterations = 5000\nlr = 1e-3\nema_beta = 0.99\n"
        "[mfd]\niterations = 400\nlr = 1e-4\nbatch_size = 256\nema_beta = 0.99\n"
        "derivative = \"fd\"\nequal_time_fraction = 0.5\n"
        "[mft]\niterations = 1600\nlr = 5e-4\nbatch_size = 256\nema_beta = 0.99\n"
        "derivative = \"fd\"\nequal_time_fraction = 0.5\nt_min = 0.05\n");
    cfg.dataset = DatasetSpec{};
    cfg.dataset.path = dir.file("atom.json");
    cfg.decoder.target_rmse = 1e-5;

    run_pretrain(cfg);
    run_cmt(cfg);
    run_mf(cfg, "mfd");
    run_mf(cfg, "mft");
    const Checkpoint final_ckpt = load_checkpoint(stage_checkpoint_path(cfg, "mft"));
    CHECK(final_ckpt.meta.stage_history ==
          std::vector<std::string>{"pretrain", "cmt", "mfd", "mft"});

    // the one-step sampler: a typical draw decodes to within 1e-2 of the atom
    SampleRunResult res = run_sample(cfg, stage_checkpoint_path(cfg, "mft"), 64, 1, -1,
                                     dir.file("run") + "/one_step.csv", 256);
    const AtomErrs errs = atom_errors(load_samples_csv(res.samples_path));
    CHECK(errs.mean < 1e-2);
    CHECK(errs.median < 1e-2);
    CHECK(errs.worst < 0.1);  // tail draws extrapolate but stay close
    CHECK(res.metrics_computed);
    CHECK(res.metrics.energy_distance < 0.05);

    // every stage leaves a metrics trail
    for (const char* stage : {"pretrain", "cmt", "mfd", "mft"})
        CHECK(fs::exists(metrics_path(cfg, stage)));

    // analysis commands run off the same artifacts; smoke their outputs
    DecompositionReport rep = run_verify(cfg, "", "", "", {0.0, 1.0}, 6);
    CHECK(rep.n_probes == 6);
    CHECK(rep.blocks[1].max_variance == 0.0);  // single atom: no posterior spread
    CHECK(rep.max_cross < 1e-10);
    CHECK(fs::exists(dir.file("run") + "/decomposition.json"));
    std::vector<FdStudyRow> study = run_fd_study(cfg, "", {0.02, 0.01, 0.005}, 10);
    CHECK(study.size() == 3);
    CHECK(fs::exists(dir.file("run") + "/fd_study.csv"));
}

TEST_CASE("pipeline reruns are bit-identical, wall clock aside") {
    ts::TempDir dir("determinism");
    const std::string run = dir.file("run");
    const std::string stages =
        "[pretrain]\niterations = 40\nbatch_size = 16\n"
        "[cmt]\niterations = 10\ncmt_n_traj = 1\ncmt_grid_points = 4\ncmt_pairs_per_traj = 3\n";

    const auto execute = [&] {
        ExperimentConfig cfg = tiny_config(run, stages);
        run_pretrain(cfg);
        run_cmt(cfg);
    };
    execute();
    const std::string teacher_a = slurp(run + "/teacher.json");
    const std::string cmt_a = slurp(run + "/cmt.json");
    const std::string decoder_a = slurp(run + "/decoder.json");
    const std::vector<MetricsRow> rows_a = load_metrics_csv(run + "/metrics_pretrain.csv");

    fs::remove_all(run);
    execute();
    CHECK(slurp(run + "/teacher.json") == teacher_a);
    CHECK(slurp(run + "/cmt.json") == cmt_a);
    CHECK(slurp(run + "/decoder.json") == decoder_a);

    // telemetry matches on every reproducible column
    const std::vector<MetricsRow> rows_b = load_metrics_csv(run + "/metrics_pretrain.csv");
    REQUIRE(rows_a.size() == rows_b.size());
    for (std::size_t i = 0; i < rows_a.size(); ++i) {
        CHECK(rows_a[i].stage == rows_b[i].stage);
        CHECK(rows_a[i].iter == rows_b[i].iter);
        CHECK(rows_a[i].loss == rows_b[i].loss);
        CHECK(rows_a[i].grad_norm == rows_b[i].grad_norm);
        CHECK(rows_a[i].ema_dist == rows_b[i].ema_dist);
    }
}
