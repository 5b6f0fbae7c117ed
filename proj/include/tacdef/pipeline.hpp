#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tacdef/backdoor.hpp"
#include "tacdef/core.hpp"
#include "tacdef/detect.hpp"
#include "tacdef/nn.hpp"
#include "tacdef/qp.hpp"
#include "tacdef/removal.hpp"

// Batch orchestration: generate a synthetic classification task, train a
// (possibly backdoored) model, compute per-class minimal perturbations,
// identify the poisoned class, fine-tune it away, and emit machine-readable
// reports. Every stage is reproducible from the config seeds alone; reports
// carry no timestamps (those live in a side file) so identical runs are
// byte-identical.

namespace tacdef::pipeline {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::uint64_t seed = 1;  // master; per-block seeds derive from it unless set

  struct Data {
    std::size_t n = 8000;
    std::size_t n_test = 1000;
    std::size_t d_in = 16;
    std::size_t num_classes = 10;
    double class_sep = 6.0;  // norm of each class mean
    std::optional<std::uint64_t> seed;
  } data;

  struct Attack {
    bool enabled = true;
    double magnitude = 3.0;
    std::size_t coords = 4;  // trigger occupies the first `coords` inputs
    std::size_t target_class = 1;
    double poison_rate = 0.1;
    std::optional<std::uint64_t> seed;
  } attack;

  struct Train {
    std::size_t epochs = 60;
    double lr = 0.05;
    std::size_t batch_size = 32;
    double weight_decay = 3e-3;
    bool zero_final_bias = false;
    std::vector<std::size_t> hidden = {64};
    std::size_t d_emb = 32;
    std::optional<std::uint64_t> seed;
  } train;

  struct Qp {
    double tol = 1e-8;
    double kkt_tol = 1e-6;
    bool include_bias_in_margins = false;
  } qp;

  struct Detect {
    double alpha = -2.0;
  } detect;

  struct Removal {
    double beta = 0.5;
    std::size_t epochs = 50;
    double lr = 0.01;
    std::size_t batch_size = 4;
    std::string mode = "pci";  // pci | nopci
    double ref_fraction = 0.05;
    bool stop_gradient_at_latent = false;
    bool remove_all = false;  // fine-tune against every flagged class in z order
    bool recompute_perturbation = false;  // re-solve s_p between epochs (experimental)
    std::optional<std::uint64_t> seed;
    std::optional<std::uint64_t> ref_seed;
  } removal;

  std::string out_dir = "out";

  std::uint64_t data_seed() const { return data.seed.value_or(mix_seed(seed, 1)); }
  std::uint64_t train_seed() const { return train.seed.value_or(mix_seed(seed, 2)); }
  std::uint64_t removal_seed() const { return removal.seed.value_or(mix_seed(seed, 3)); }
  std::uint64_t attack_seed() const { return attack.seed.value_or(mix_seed(seed, 4)); }
  std::uint64_t ref_seed() const { return removal.ref_seed.value_or(mix_seed(seed, 5)); }

  std::vector<std::size_t> arch() const;

  /// Throws ConfigError on any out-of-range field; called before any compute.
  void validate() const;
};

RunConfig load_config(const std::string& path);
RunConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const RunConfig& cfg);  // resolved seeds included

enum class Status {
  kRemoved = 0,
  kError = 1,
  kClean = 2,       // no backdoor detected, removal skipped
  kInfeasible = 3,  // detected class had no usable perturbation
};

int exit_code(Status s);

struct DefenseReport {
  Status status = Status::kError;
  detect::DetectionReport detection;
  std::vector<qp::PerturbationResult> per_class;
  backdoor::Metrics before;
  std::optional<backdoor::Metrics> after;
  std::optional<double> der;
  std::optional<double> tac_coverage_at_10pct;
  std::optional<std::size_t> removed_class;
  double train_loss = 0.0;
};

struct GeneratedData {
  nn::Dataset train;
  nn::Dataset test;
  Matrix class_means;  // C x d_in
};

struct PipelineResult {
  DefenseReport report;
  nn::MlpParams model;  // as trained (backdoored when the attack is enabled)
  std::optional<nn::MlpParams> model_ft;
  backdoor::Trigger trigger;

  int exit_code() const { return pipeline::exit_code(report.status); }
};

/// Gaussian blobs: class means drawn at norm class_sep, unit noise, balanced
/// labels. Train and test come from one stream of the data seed.
GeneratedData generate_data(const RunConfig& cfg);

backdoor::Trigger make_trigger(const RunConfig& cfg);

/// Uniform sample of round(ref_fraction * n) clean training rows.
nn::Dataset reference_set(const RunConfig& cfg, const nn::Dataset& train);

/// Train on the (poisoned, when enabled) training set.
nn::TrainResult train_model(const RunConfig& cfg, const GeneratedData& data);

std::vector<qp::PerturbationResult> compute_perturbations(const RunConfig& cfg,
                                                          const nn::MlpParams& model,
                                                          const nn::Dataset& ref);

/// The full defense pass; never throws for per-class infeasibility, only for
/// config or training errors.
PipelineResult run_pipeline(const RunConfig& cfg);

/// report.json, metrics.csv (+ full-precision metrics.json), model_bd.json,
/// model_ft.json, perturbations.json, run_meta.json under cfg.out_dir.
void write_artifacts(const RunConfig& cfg, const PipelineResult& result);

/// run_pipeline + write_artifacts; returns the exit code.
int run_and_write(const RunConfig& cfg);

struct SweepRow {
  std::string axis;
  double value = 0.0;
  int code = 1;
  std::string status;  // removed | clean | infeasible | error:<what>
  std::optional<std::size_t> detected_class;
  std::optional<double> z_min;
  std::optional<backdoor::Metrics> before;
  std::optional<backdoor::Metrics> after;
  std::optional<double> der;
};

/// One pipeline run per value, everything else held constant; failures become
/// rows, never aborts. Writes <out_dir>/sweep.csv and per-run subdirectories.
std::vector<SweepRow> sweep(const RunConfig& base, const std::string& axis,
                            const std::vector<double>& values, const std::string& out_dir);

std::string sweep_csv(const std::vector<SweepRow>& rows);

// Phase-file I/O so the CLI subcommands can hand results to each other.
void write_perturbations(const std::string& path,
                         const std::vector<qp::PerturbationResult>& results);
std::vector<qp::PerturbationResult> load_perturbations(const std::string& path);
std::string detection_to_json_text(const detect::DetectionReport& report);

}  // namespace tacdef::pipeline
