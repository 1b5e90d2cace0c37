#pragma once

#include "mflab/analysis.hpp"
#include "mflab/checkpoint.hpp"
#include "mflab/config.hpp"
#include "mflab/solvers.hpp"

namespace mflab {

/// Exclusive hold on an experiment directory for the duration of one
/// command. Creates the directory if needed; a second concurrent holder gets
/// a PipelineError. A crash can leave the lock file behind — the error
/// message names it so it can be removed by hand.
class DirLock {
  public:
    explicit DirLock(const std::string& dir);
    ~DirLock();
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

  private:
    std::string lock_path_;
    bool held_ = false;
};

/// Data distribution, its lifted latent twin, and the frozen encoder — the
/// fixed scenery every command works in.
struct PipelineContext {
    ExperimentConfig cfg;
    FiniteSupportDataset data;    // d_x-dimensional atoms
    FiniteSupportDataset latent;  // the same atoms through the encoder
    FrozenEncoder encoder;
};

PipelineContext make_context(const ExperimentConfig& cfg);

/// Default checkpoint file for a stage inside the output directory
/// (pretrain -> teacher.json, otherwise <stage>.json).
std::string stage_checkpoint_path(const ExperimentConfig& cfg, const std::string& stage);
std::string metrics_path(const ExperimentConfig& cfg, const std::string& stage);

// ---- commands (CLI subcommands call these; tests and bindings reuse them) ----

/// Fit the latent->data decoder on the dataset atoms and checkpoint it.
DecoderTrainReport run_decoder_train(const ExperimentConfig& cfg);

/// Stage 1: flow-matching teacher in latent space. Trains the decoder first
/// if its checkpoint is missing.
void run_pretrain(const ExperimentConfig& cfg);

/// Stage 2: consistency mid-training from the teacher's trajectories,
/// initialized from the teacher's weights.
void run_cmt(const ExperimentConfig& cfg, const std::string& teacher_path = "");

/// Stage 3: mean-flow training ("mfd" or "mft" section). The initialization
/// checkpoint defaults to cmt.json for mfd and mfd.json for mft; a velocity
/// checkpoint is also accepted (weight transfer, skipping the consistency
/// stage). Starting mfd from an initialization with no consistency-stage
/// ancestor requires allow_uninitialized.
void run_mf(const ExperimentConfig& cfg, const std::string& stage,
            const std::string& init_path = "", const std::string& teacher_path = "",
            bool allow_uninitialized = false);

struct SampleRunResult {
    std::string samples_path;
    std::size_t n = 0;
    long nfe = 0;
    bool metrics_computed = false;
    TwoSampleMetrics metrics;  // against fresh dataset draws, in data space
};

/// Draw n latent samples from a checkpoint (flow-map stepping or Euler on a
/// velocity teacher), decode them, and write a CSV. cls < 0 draws labels
/// from the dataset's class frequencies.
SampleRunResult run_sample(const ExperimentConfig& cfg, const std::string& ckpt_path,
                           std::size_t n, long nfe, int cls = -1,
                           const std::string& out_csv = "", std::size_t metrics_draws = 0);

/// Loss-decomposition verification on the latent dataset. theta_path
/// defaults to cmt.json; the detached net defaults to the same checkpoint's
/// EMA arrays (or its live arrays if EMA is absent).
DecompositionReport run_verify(const ExperimentConfig& cfg, const std::string& theta_path = "",
                               const std::string& detached_path = "",
                               const std::string& teacher_path = "",
                               std::vector<double> lambdas = {0.0, 0.25, 0.5, 0.75, 1.0},
                               std::size_t n_probes = 75, const std::string& out_json = "");

std::vector<FdStudyRow> run_fd_study(const ExperimentConfig& cfg,
                                     const std::string& ckpt_path = "",
                                     std::vector<double> ladder = {0.02, 0.01, 0.005, 0.0025},
                                     std::size_t n_probes = 30,
                                     const std::string& out_csv = "");

}  // namespace mflab
