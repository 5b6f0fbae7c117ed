// Command-line front end. Phases mirror the defense: train a (possibly
// backdoored) model, compute per-class perturbations, detect the poisoned
// class, remove it by fine-tuning, evaluate. `pipeline` chains them all;
// `sweep` repeats the pipeline along one config axis.
//
// Exit codes: 0 success, 1 error, 2 no backdoor detected, 3 the detected
// class had no usable perturbation.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tacdef/pipeline.hpp"

namespace {

namespace fs = std::filesystem;
using namespace tacdef;

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<double> alpha;
  std::optional<double> beta;
  std::optional<double> ref_fraction;
  std::optional<std::string> mode;
  bool include_bias_in_margins = false;
  bool remove_all = false;
  bool print_config = false;
};

pipeline::RunConfig resolve_config(const CommonFlags& flags) {
  pipeline::RunConfig cfg;
  if (!flags.config_path.empty()) cfg = pipeline::load_config(flags.config_path);
  if (flags.seed) {
    cfg.seed = *flags.seed;
    cfg.data.seed.reset();
    cfg.train.seed.reset();
    cfg.removal.seed.reset();
    cfg.attack.seed.reset();
    cfg.removal.ref_seed.reset();
  }
  if (flags.out) cfg.out_dir = *flags.out;
  if (flags.alpha) cfg.detect.alpha = *flags.alpha;
  if (flags.beta) cfg.removal.beta = *flags.beta;
  if (flags.ref_fraction) cfg.removal.ref_fraction = *flags.ref_fraction;
  if (flags.mode) cfg.removal.mode = *flags.mode;
  if (flags.include_bias_in_margins) cfg.qp.include_bias_in_margins = true;
  if (flags.remove_all) cfg.removal.remove_all = true;
  cfg.validate();
  return cfg;
}

void add_common_flags(CLI::App& app, CommonFlags& flags) {
  app.add_option("--config", flags.config_path, "JSON config file");
  app.add_option("--seed", flags.seed, "master seed (rederives per-block seeds)");
  app.add_option("--out", flags.out, "output directory");
  app.add_option("--alpha", flags.alpha, "detection threshold on z-scores");
  app.add_option("--beta", flags.beta, "removal loss weight");
  app.add_option("--ref-fraction", flags.ref_fraction, "reference-set fraction");
  app.add_option("--mode", flags.mode, "removal mode: pci | nopci")
      ->check(CLI::IsMember({"pci", "nopci"}));
  app.add_flag("--include-bias-in-margins", flags.include_bias_in_margins,
               "add final-layer bias differences to the margin constraints");
  app.add_flag("--remove-all", flags.remove_all,
               "fine-tune against every flagged class, most anomalous first");
  app.add_flag("--print-config", flags.print_config,
               "print the resolved configuration and exit");
}

int cmd_train(const pipeline::RunConfig& cfg) {
  const pipeline::GeneratedData data = pipeline::generate_data(cfg);
  const nn::TrainResult trained = pipeline::train_model(cfg, data);
  const backdoor::Metrics m =
      backdoor::evaluate(trained.params, data.test, pipeline::make_trigger(cfg));
  fs::create_directories(cfg.out_dir);
  nn::save_checkpoint(trained.params, cfg.train_seed(),
                      (fs::path(cfg.out_dir) / "model_bd.json").string());
  std::cout << "trained: loss=" << trained.last_epoch_loss << " acc=" << m.acc
            << " asr=" << m.asr << "\n";
  return 0;
}

int cmd_perturb(const pipeline::RunConfig& cfg, const std::string& model_path) {
  const std::string path =
      model_path.empty() ? (fs::path(cfg.out_dir) / "model_bd.json").string() : model_path;
  const nn::MlpParams model = nn::load_checkpoint(path);
  const pipeline::GeneratedData data = pipeline::generate_data(cfg);
  const nn::Dataset ref = pipeline::reference_set(cfg, data.train);
  const auto results = pipeline::compute_perturbations(cfg, model, ref);
  fs::create_directories(cfg.out_dir);
  pipeline::write_perturbations((fs::path(cfg.out_dir) / "perturbations.json").string(),
                                results);
  for (const auto& r : results) {
    std::cout << "class " << r.target_class << ": ";
    if (r.infeasible)
      std::cout << "infeasible\n";
    else
      std::cout << "norm=" << norm2(r.s) << (r.certified ? " certified" : " UNCERTIFIED")
                << "\n";
  }
  return 0;
}

int cmd_detect(const pipeline::RunConfig& cfg) {
  const auto results = pipeline::load_perturbations(
      (fs::path(cfg.out_dir) / "perturbations.json").string());
  const detect::DetectionReport rep = detect::detect_poisoned(results, cfg.detect.alpha);
  std::ofstream out(fs::path(cfg.out_dir) / "detection.json");
  out << pipeline::detection_to_json_text(rep);
  for (std::size_t k = 0; k < rep.z.size(); ++k)
    std::cout << "class " << k << ": z=" << rep.z[k] << "\n";
  if (rep.poisoned_classes.empty()) {
    std::cout << "no backdoor detected\n";
    return 2;
  }
  std::cout << "poisoned:";
  for (std::size_t k : rep.poisoned_classes) std::cout << " " << k;
  std::cout << "\n";
  return 0;
}

int cmd_remove(const pipeline::RunConfig& cfg, const std::string& model_path) {
  const std::string path =
      model_path.empty() ? (fs::path(cfg.out_dir) / "model_bd.json").string() : model_path;
  const nn::MlpParams model = nn::load_checkpoint(path);
  const auto results = pipeline::load_perturbations(
      (fs::path(cfg.out_dir) / "perturbations.json").string());
  const detect::DetectionReport rep = detect::detect_poisoned(results, cfg.detect.alpha);
  if (rep.poisoned_classes.empty()) {
    std::cout << "no backdoor detected; nothing to remove\n";
    return 2;
  }
  const std::size_t p = rep.poisoned_classes.front();
  if (results[p].infeasible || !results[p].certified) {
    std::cerr << "detected class " << p << " has no usable perturbation\n";
    return 3;
  }
  const pipeline::GeneratedData data = pipeline::generate_data(cfg);
  const nn::Dataset ref = pipeline::reference_set(cfg, data.train);

  removal::RemovalConfig rc;
  rc.beta = cfg.removal.beta;
  rc.epochs = cfg.removal.epochs;
  rc.lr = cfg.removal.lr;
  rc.batch_size = cfg.removal.batch_size;
  rc.seed = cfg.removal_seed();
  rc.stop_gradient_at_latent = cfg.removal.stop_gradient_at_latent;
  rc.zero_final_bias = cfg.train.zero_final_bias;

  nn::MlpParams model_ft;
  if (cfg.removal.mode == "nopci") {
    std::vector<Vector> pool;
    for (const auto& r : results)
      if (!r.infeasible) pool.push_back(r.s);
    model_ft = removal::finetune_remove_nopci(model, ref, pool, rc).params;
  } else {
    model_ft = removal::finetune_remove(model, ref, results[p].s, rc).params;
  }
  nn::save_checkpoint(model_ft, cfg.removal_seed(),
                      (fs::path(cfg.out_dir) / "model_ft.json").string());
  std::cout << "removed backdoor for class " << p << "\n";
  return 0;
}

int cmd_eval(const pipeline::RunConfig& cfg, const std::string& model_path,
             const std::string& phase) {
  const std::string path =
      model_path.empty() ? (fs::path(cfg.out_dir) / "model_ft.json").string() : model_path;
  const nn::MlpParams model = nn::load_checkpoint(path);
  const pipeline::GeneratedData data = pipeline::generate_data(cfg);
  const backdoor::Metrics m = backdoor::evaluate(model, data.test, pipeline::make_trigger(cfg));
  std::cout << "phase,acc,asr\n" << phase << "," << m.acc << "," << m.asr << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Backdoor removal via minimal latent-space perturbations"};
  app.require_subcommand(0, 1);

  CommonFlags flags;
  add_common_flags(app, flags);

  auto* sc_pipeline = app.add_subcommand("pipeline", "train, perturb, detect, remove, eval");
  auto* sc_train = app.add_subcommand("train", "train the (backdoored) model");
  auto* sc_perturb = app.add_subcommand("perturb", "per-class minimal perturbations");
  auto* sc_detect = app.add_subcommand("detect", "identify the poisoned class");
  auto* sc_remove = app.add_subcommand("remove", "fine-tune the backdoor away");
  auto* sc_eval = app.add_subcommand("eval", "clean accuracy and attack success rate");
  auto* sc_sweep = app.add_subcommand("sweep", "repeat the pipeline along one axis");

  std::string model_path;
  std::string eval_phase = "eval";
  sc_perturb->add_option("--model", model_path, "model checkpoint (default <out>/model_bd.json)");
  sc_remove->add_option("--model", model_path, "model checkpoint (default <out>/model_bd.json)");
  sc_eval->add_option("--model", model_path, "model checkpoint (default <out>/model_ft.json)");
  sc_eval->add_option("--phase", eval_phase, "label for the printed metrics row");

  std::string axis;
  std::vector<double> values;
  sc_sweep->add_option("--axis", axis, "beta | alpha | ref_fraction | seed")->required();
  sc_sweep->add_option("--values", values, "axis values, one run each");

  for (auto* sc : {sc_pipeline, sc_train, sc_perturb, sc_detect, sc_remove, sc_eval, sc_sweep})
    sc->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    const pipeline::RunConfig cfg = resolve_config(flags);
    if (flags.print_config) {
      std::cout << pipeline::config_to_json_text(cfg);
      return 0;
    }
    if (sc_pipeline->parsed()) return pipeline::run_and_write(cfg);
    if (sc_train->parsed()) return cmd_train(cfg);
    if (sc_perturb->parsed()) return cmd_perturb(cfg, model_path);
    if (sc_detect->parsed()) return cmd_detect(cfg);
    if (sc_remove->parsed()) return cmd_remove(cfg, model_path);
    if (sc_eval->parsed()) return cmd_eval(cfg, model_path, eval_phase);
    if (sc_sweep->parsed()) {
      pipeline::sweep(cfg, axis, values, cfg.out_dir);
      return 0;
    }
    std::cerr << app.help();
    return 1;
  } catch (const pipeline::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
