#include "tacdef/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

namespace tacdef::pipeline {

using nlohmann::json;

namespace {

// %.17g keeps doubles round-trippable in CSV with a '.' decimal separator.
std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

json finite_or_null(double v) {
  if (std::isfinite(v)) return json(v);
  return json(nullptr);
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

void read_seed(const json& j, const char* key, std::optional<std::uint64_t>& out) {
  if (j.contains(key)) out = j.at(key).get<std::uint64_t>();
}

}  // namespace

std::vector<std::size_t> RunConfig::arch() const {
  std::vector<std::size_t> a;
  a.push_back(data.d_in);
  for (std::size_t h : train.hidden) a.push_back(h);
  a.push_back(train.d_emb);
  a.push_back(data.num_classes);
  return a;
}

void RunConfig::validate() const {
  if (data.n < 2) throw ConfigError("data.n must be >= 2");
  if (data.n_test < 1) throw ConfigError("data.n_test must be >= 1");
  if (data.d_in < 1) throw ConfigError("data.d_in must be >= 1");
  if (data.num_classes < 2) throw ConfigError("data.num_classes must be >= 2");
  if (!(data.class_sep >= 0.0)) throw ConfigError("data.class_sep must be >= 0");
  if (attack.enabled) {
    if (attack.coords > data.d_in) throw ConfigError("attack.coords exceeds d_in");
    if (attack.target_class >= data.num_classes)
      throw ConfigError("attack.target_class out of range");
    if (!(attack.poison_rate > 0.0 && attack.poison_rate < 1.0))
      throw ConfigError("attack.poison_rate must be in (0,1)");
    if (attack.poison_rate * static_cast<double>(data.n) < 1.0)
      throw ConfigError("attack.poison_rate * n must be >= 1");
  }
  if (train.epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (!(train.lr > 0.0)) throw ConfigError("train.lr must be > 0");
  if (train.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (train.d_emb < 1) throw ConfigError("train.d_emb must be >= 1");
  for (std::size_t h : train.hidden)
    if (h < 1) throw ConfigError("train.hidden entries must be >= 1");
  if (!(qp.tol > 0.0) || !(qp.kkt_tol > 0.0)) throw ConfigError("qp tolerances must be > 0");
  if (!std::isfinite(detect.alpha)) throw ConfigError("detect.alpha must be finite");
  if (!(removal.beta >= 0.0)) throw ConfigError("removal.beta must be >= 0");
  if (removal.epochs < 1) throw ConfigError("removal.epochs must be >= 1");
  if (!(removal.lr > 0.0)) throw ConfigError("removal.lr must be > 0");
  if (removal.mode != "pci" && removal.mode != "nopci")
    throw ConfigError("removal.mode must be pci or nopci");
  if (!(removal.ref_fraction > 0.0 && removal.ref_fraction <= 1.0))
    throw ConfigError("removal.ref_fraction must be in (0,1]");
}

RunConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  RunConfig cfg;
  try {
    read_field(j, "seed", cfg.seed);
    read_field(j, "out_dir", cfg.out_dir);
    if (j.contains("data")) {
      const json& d = j.at("data");
      read_field(d, "n", cfg.data.n);
      read_field(d, "n_test", cfg.data.n_test);
      read_field(d, "d_in", cfg.data.d_in);
      read_field(d, "num_classes", cfg.data.num_classes);
      read_field(d, "class_sep", cfg.data.class_sep);
      read_seed(d, "seed", cfg.data.seed);
    }
    if (j.contains("attack")) {
      const json& a = j.at("attack");
      read_field(a, "enabled", cfg.attack.enabled);
      read_field(a, "magnitude", cfg.attack.magnitude);
      read_field(a, "coords", cfg.attack.coords);
      read_field(a, "target_class", cfg.attack.target_class);
      read_field(a, "poison_rate", cfg.attack.poison_rate);
      read_seed(a, "seed", cfg.attack.seed);
    }
    if (j.contains("train")) {
      const json& t = j.at("train");
      read_field(t, "epochs", cfg.train.epochs);
      read_field(t, "lr", cfg.train.lr);
      read_field(t, "batch_size", cfg.train.batch_size);
      read_field(t, "weight_decay", cfg.train.weight_decay);
      read_field(t, "zero_final_bias", cfg.train.zero_final_bias);
      read_field(t, "hidden", cfg.train.hidden);
      read_field(t, "d_emb", cfg.train.d_emb);
      read_seed(t, "seed", cfg.train.seed);
    }
    if (j.contains("qp")) {
      const json& q = j.at("qp");
      read_field(q, "tol", cfg.qp.tol);
      read_field(q, "kkt_tol", cfg.qp.kkt_tol);
      read_field(q, "include_bias_in_margins", cfg.qp.include_bias_in_margins);
    }
    if (j.contains("detect")) read_field(j.at("detect"), "alpha", cfg.detect.alpha);
    if (j.contains("removal")) {
      const json& r = j.at("removal");
      read_field(r, "beta", cfg.removal.beta);
      read_field(r, "epochs", cfg.removal.epochs);
      read_field(r, "lr", cfg.removal.lr);
      read_field(r, "batch_size", cfg.removal.batch_size);
      read_field(r, "mode", cfg.removal.mode);
      read_field(r, "ref_fraction", cfg.removal.ref_fraction);
      read_field(r, "stop_gradient_at_latent", cfg.removal.stop_gradient_at_latent);
      read_field(r, "remove_all", cfg.removal.remove_all);
      read_field(r, "recompute_perturbation", cfg.removal.recompute_perturbation);
      read_seed(r, "seed", cfg.removal.seed);
      read_seed(r, "ref_seed", cfg.removal.ref_seed);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field error: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return config_from_json_text(text);
}

std::string config_to_json_text(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  j["data"] = {{"n", cfg.data.n},
               {"n_test", cfg.data.n_test},
               {"d_in", cfg.data.d_in},
               {"num_classes", cfg.data.num_classes},
               {"class_sep", cfg.data.class_sep},
               {"seed", cfg.data_seed()}};
  j["attack"] = {{"enabled", cfg.attack.enabled},
                 {"magnitude", cfg.attack.magnitude},
                 {"coords", cfg.attack.coords},
                 {"target_class", cfg.attack.target_class},
                 {"poison_rate", cfg.attack.poison_rate},
                 {"seed", cfg.attack_seed()}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"lr", cfg.train.lr},
                {"batch_size", cfg.train.batch_size},
                {"weight_decay", cfg.train.weight_decay},
                {"zero_final_bias", cfg.train.zero_final_bias},
                {"hidden", cfg.train.hidden},
                {"d_emb", cfg.train.d_emb},
                {"seed", cfg.train_seed()}};
  j["qp"] = {{"tol", cfg.qp.tol},
             {"kkt_tol", cfg.qp.kkt_tol},
             {"include_bias_in_margins", cfg.qp.include_bias_in_margins}};
  j["detect"] = {{"alpha", cfg.detect.alpha}};
  j["removal"] = {{"beta", cfg.removal.beta},
                  {"epochs", cfg.removal.epochs},
                  {"lr", cfg.removal.lr},
                  {"batch_size", cfg.removal.batch_size},
                  {"mode", cfg.removal.mode},
                  {"ref_fraction", cfg.removal.ref_fraction},
                  {"stop_gradient_at_latent", cfg.removal.stop_gradient_at_latent},
                  {"remove_all", cfg.removal.remove_all},
                  {"recompute_perturbation", cfg.removal.recompute_perturbation},
                  {"seed", cfg.removal_seed()},
                  {"ref_seed", cfg.ref_seed()}};
  return j.dump(2) + "\n";
}

int exit_code(Status s) { return static_cast<int>(s); }

GeneratedData generate_data(const RunConfig& cfg) {
  Rng rng(cfg.data_seed());
  const std::size_t c = cfg.data.num_classes;
  const std::size_t d = cfg.data.d_in;

  GeneratedData out;
  out.class_means = Matrix(c, d);
  for (std::size_t k = 0; k < c; ++k) {
    auto row = out.class_means.row(k);
    for (double& v : row) v = rng.normal();
    const double n = norm2(row);
    if (n > 0.0)
      for (double& v : row) v *= cfg.data.class_sep / n;
  }

  auto fill = [&](nn::Dataset& ds, std::size_t rows) {
    ds.inputs = Matrix(rows, d);
    ds.labels.resize(rows);
    for (std::size_t i = 0; i < rows; ++i) {
      const std::size_t label = i % c;
      ds.labels[i] = label;
      auto row = ds.inputs.row(i);
      const auto mean = out.class_means.row(label);
      for (std::size_t t = 0; t < d; ++t) row[t] = mean[t] + rng.normal();
    }
  };
  fill(out.train, cfg.data.n);
  fill(out.test, cfg.data.n_test);
  return out;
}

backdoor::Trigger make_trigger(const RunConfig& cfg) {
  return backdoor::make_sparse_trigger(cfg.data.d_in, cfg.attack.coords,
                                       cfg.attack.magnitude, cfg.attack.target_class,
                                       cfg.attack.poison_rate);
}

nn::Dataset reference_set(const RunConfig& cfg, const nn::Dataset& train) {
  const std::size_t n = train.size();
  const std::size_t count = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(cfg.removal.ref_fraction *
                                               static_cast<double>(n))));
  Rng rng(cfg.ref_seed());
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < count; ++i)
    std::swap(idx[i], idx[i + rng.below(n - i)]);

  nn::Dataset ref;
  ref.inputs = Matrix(count, train.inputs.cols());
  ref.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::copy(train.inputs.row(idx[i]).begin(), train.inputs.row(idx[i]).end(),
              ref.inputs.row(i).begin());
    ref.labels[i] = train.labels[idx[i]];
  }
  return ref;
}

nn::TrainResult train_model(const RunConfig& cfg, const GeneratedData& data) {
  nn::TrainConfig tc;
  tc.epochs = cfg.train.epochs;
  tc.lr = cfg.train.lr;
  tc.batch_size = cfg.train.batch_size;
  tc.weight_decay = cfg.train.weight_decay;
  tc.zero_final_bias = cfg.train.zero_final_bias;
  tc.seed = cfg.train_seed();

  if (!cfg.attack.enabled) return nn::train(data.train, cfg.arch(), tc);
  Rng poison_rng(cfg.attack_seed());
  const nn::Dataset poisoned =
      backdoor::poison_dataset(data.train, make_trigger(cfg), poison_rng);
  return nn::train(poisoned, cfg.arch(), tc);
}

std::vector<qp::PerturbationResult> compute_perturbations(const RunConfig& cfg,
                                                          const nn::MlpParams& model,
                                                          const nn::Dataset& ref) {
  qp::SolverConfig sc;
  sc.tol = cfg.qp.tol;
  sc.kkt_tol = cfg.qp.kkt_tol;
  sc.include_bias_in_margins = cfg.qp.include_bias_in_margins;
  const Matrix latents = nn::latent_batch(model, ref.inputs);
  return qp::perturbations_for_all_classes(latents, model.final_layer(), sc);
}

namespace {

removal::RemovalConfig removal_config(const RunConfig& cfg, std::uint64_t seed) {
  removal::RemovalConfig rc;
  rc.beta = cfg.removal.beta;
  rc.epochs = cfg.removal.epochs;
  rc.lr = cfg.removal.lr;
  rc.batch_size = cfg.removal.batch_size;
  rc.seed = seed;
  rc.mode = cfg.removal.mode == "nopci" ? removal::Mode::kNoPciRandom
                                        : removal::Mode::kSinglePerturbation;
  rc.stop_gradient_at_latent = cfg.removal.stop_gradient_at_latent;
  rc.zero_final_bias = cfg.train.zero_final_bias;
  return rc;
}

// Fine-tune against one class's perturbation, optionally re-solving it
// between stages (experimental; off by default).
nn::MlpParams remove_for_class(const RunConfig& cfg, nn::MlpParams model,
                               const nn::Dataset& ref, std::size_t cls, const Vector& s,
                               std::uint64_t seed) {
  if (!cfg.removal.recompute_perturbation) {
    removal::RemovalConfig rc = removal_config(cfg, seed);
    return removal::finetune_remove(model, ref, s, rc).params;
  }
  const std::size_t stages = std::min<std::size_t>(5, cfg.removal.epochs);
  Vector current = s;
  std::size_t done = 0;
  for (std::size_t stage = 0; stage < stages; ++stage) {
    removal::RemovalConfig rc = removal_config(cfg, mix_seed(seed, stage));
    rc.epochs = (cfg.removal.epochs * (stage + 1)) / stages - done;
    if (rc.epochs == 0) continue;
    done += rc.epochs;
    model = removal::finetune_remove(model, ref, current, rc).params;
    if (stage + 1 < stages) {
      const auto results = compute_perturbations(cfg, model, ref);
      if (!results[cls].infeasible) current = results[cls].s;
    }
  }
  return model;
}

}  // namespace

PipelineResult run_pipeline(const RunConfig& cfg) {
  cfg.validate();
  PipelineResult out;
  out.trigger = make_trigger(cfg);

  const GeneratedData data = generate_data(cfg);
  nn::TrainResult trained = train_model(cfg, data);
  out.model = std::move(trained.params);
  out.report.train_loss = trained.last_epoch_loss;
  out.report.before = backdoor::evaluate(out.model, data.test, out.trigger);

  const nn::Dataset ref = reference_set(cfg, data.train);
  out.report.per_class = compute_perturbations(cfg, out.model, ref);
  out.report.detection = detect::detect_poisoned(out.report.per_class, cfg.detect.alpha);

  if (out.report.detection.poisoned_classes.empty()) {
    out.report.status = Status::kClean;
    return out;
  }

  const std::size_t p = out.report.detection.poisoned_classes.front();
  const qp::PerturbationResult& flagged = out.report.per_class[p];
  if (flagged.infeasible || !flagged.certified) {
    out.report.status = Status::kInfeasible;
    out.report.removed_class = p;
    return out;
  }

  nn::MlpParams model_ft;
  if (cfg.removal.mode == "nopci") {
    std::vector<Vector> pool;
    for (const auto& r : out.report.per_class)
      if (!r.infeasible) pool.push_back(r.s);
    removal::RemovalConfig rc = removal_config(cfg, cfg.removal_seed());
    model_ft = removal::finetune_remove_nopci(out.model, ref, pool, rc).params;
  } else if (cfg.removal.remove_all) {
    model_ft = out.model;
    std::size_t stage = 0;
    for (std::size_t cls : out.report.detection.poisoned_classes) {
      if (out.report.per_class[cls].infeasible) continue;
      model_ft = remove_for_class(cfg, std::move(model_ft), ref, cls,
                                  out.report.per_class[cls].s,
                                  mix_seed(cfg.removal_seed(), stage++));
    }
  } else {
    model_ft =
        remove_for_class(cfg, out.model, ref, p, flagged.s, cfg.removal_seed());
  }

  out.report.after = backdoor::evaluate(model_ft, data.test, out.trigger);
  out.report.der = backdoor::der(out.report.before, *out.report.after);
  const backdoor::TacVector tac =
      backdoor::oracle_tac_latent(out.model, data.test.inputs, out.trigger);
  out.report.tac_coverage_at_10pct = backdoor::tac_coverage(flagged.s, tac, 0.10);
  out.report.removed_class = p;
  out.report.status = Status::kRemoved;
  out.model_ft = std::move(model_ft);
  return out;
}

namespace {

json kkt_to_json(const qp::KktReport& k) {
  return {{"stationarity_resid", k.stationarity_resid},
          {"primal_violation", k.primal_violation},
          {"dual_violation", k.dual_violation},
          {"comp_slack_resid", k.comp_slack_resid},
          {"duality_gap", k.duality_gap}};
}

json feasibility_to_json(const qp::FeasibilityReport& f) {
  return {{"rank_of_v", f.rank_of_v},
          {"full_row_rank", f.full_row_rank},
          {"dim_condition", f.dim_condition},
          {"guaranteed_feasible", f.guaranteed_feasible}};
}

json per_class_to_json(const qp::PerturbationResult& r) {
  json j;
  j["class"] = r.target_class;
  j["infeasible"] = r.infeasible;
  j["certified"] = r.certified;
  j["note"] = r.note;
  j["feasibility"] = feasibility_to_json(r.feasibility);
  if (r.infeasible) {
    j["norm"] = nullptr;
    j["s"] = nullptr;
    j["kkt"] = nullptr;
    j["dual"] = nullptr;
  } else {
    j["norm"] = finite_or_null(norm2(r.s));
    j["s"] = r.s;
    j["kkt"] = kkt_to_json(r.kkt);
    j["dual"] = {{"lambda", r.dual.lambda},
                 {"objective", r.dual.objective},
                 {"iterations", r.dual.iterations},
                 {"converged", r.dual.converged},
                 {"frozen_rows", r.dual.frozen_rows}};
  }
  return j;
}

json metrics_to_json(const backdoor::Metrics& m) {
  return {{"acc", m.acc}, {"asr", m.asr}};
}

std::string status_name(Status s) {
  switch (s) {
    case Status::kRemoved: return "removed";
    case Status::kClean: return "clean";
    case Status::kInfeasible: return "infeasible";
    case Status::kError: return "error";
  }
  return "error";
}

json report_to_json(const RunConfig& cfg, const DefenseReport& rep) {
  json j;
  j["status"] = status_name(rep.status);
  j["exit_code"] = exit_code(rep.status);
  j["seed"] = cfg.seed;
  j["train_loss"] = rep.train_loss;

  json det;
  json norms = json::array();
  for (double n : rep.detection.norms) norms.push_back(finite_or_null(n));
  json z = json::array();
  for (double v : rep.detection.z) z.push_back(finite_or_null(v));
  det["norms"] = std::move(norms);
  det["z"] = std::move(z);
  det["mean"] = rep.detection.mean;
  det["std"] = rep.detection.std;
  det["alpha"] = rep.detection.alpha;
  det["poisoned_classes"] = rep.detection.poisoned_classes;
  det["degenerate"] = rep.detection.degenerate;
  j["detection"] = std::move(det);

  json per = json::array();
  for (const auto& r : rep.per_class) per.push_back(per_class_to_json(r));
  j["per_class"] = std::move(per);

  j["metrics"]["before"] = metrics_to_json(rep.before);
  j["metrics"]["after"] = rep.after ? metrics_to_json(*rep.after) : json(nullptr);
  j["metrics"]["der"] = rep.der ? json(*rep.der) : json(nullptr);
  j["tac_coverage_at_10pct"] =
      rep.tac_coverage_at_10pct ? json(*rep.tac_coverage_at_10pct) : json(nullptr);
  j["removed_class"] = rep.removed_class ? json(*rep.removed_class) : json(nullptr);
  return j;
}

}  // namespace

void write_artifacts(const RunConfig& cfg, const PipelineResult& result) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  const fs::path dir(cfg.out_dir);

  {
    std::ofstream out(dir / "report.json");
    out << report_to_json(cfg, result.report).dump(2) << "\n";
  }
  {
    std::ofstream out(dir / "metrics.csv");
    out << "phase,acc,asr,der\n";
    out << "no_defense," << fmt_double(result.report.before.acc) << ","
        << fmt_double(result.report.before.asr) << ",\n";
    if (result.report.after) {
      out << "post_removal," << fmt_double(result.report.after->acc) << ","
          << fmt_double(result.report.after->asr) << ","
          << fmt_double(result.report.der.value()) << "\n";
    }
  }
  {
    json m;
    m["before"] = metrics_to_json(result.report.before);
    m["after"] = result.report.after ? metrics_to_json(*result.report.after) : json(nullptr);
    m["der"] = result.report.der ? json(*result.report.der) : json(nullptr);
    std::ofstream out(dir / "metrics.json");
    out << m.dump(2) << "\n";
  }
  {
    json per = json::array();
    for (const auto& r : result.report.per_class) per.push_back(per_class_to_json(r));
    std::ofstream out(dir / "perturbations.json");
    out << per.dump(2) << "\n";
  }
  nn::save_checkpoint(result.model, cfg.train_seed(), (dir / "model_bd.json").string());
  if (result.model_ft)
    nn::save_checkpoint(*result.model_ft, cfg.removal_seed(),
                        (dir / "model_ft.json").string());
  {
    // Timestamps live here and only here so the reports above stay
    // byte-identical across reruns.
    json meta;
    meta["unix_time"] = static_cast<long long>(std::time(nullptr));
    std::ofstream out(dir / "run_meta.json");
    out << meta.dump(2) << "\n";
  }
}

int run_and_write(const RunConfig& cfg) {
  const PipelineResult result = run_pipeline(cfg);
  write_artifacts(cfg, result);
  return result.exit_code();
}

namespace {

RunConfig apply_axis(RunConfig cfg, const std::string& axis, double value) {
  if (axis == "beta") {
    cfg.removal.beta = value;
  } else if (axis == "alpha") {
    cfg.detect.alpha = value;
  } else if (axis == "ref_fraction") {
    cfg.removal.ref_fraction = value;
  } else if (axis == "seed") {
    cfg.seed = static_cast<std::uint64_t>(value);
    cfg.data.seed.reset();
    cfg.train.seed.reset();
    cfg.removal.seed.reset();
    cfg.attack.seed.reset();
    cfg.removal.ref_seed.reset();
  } else {
    throw ConfigError("sweep axis must be one of beta|alpha|ref_fraction|seed");
  }
  return cfg;
}

std::string short_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return std::string(buf);
}

}  // namespace

std::vector<SweepRow> sweep(const RunConfig& base, const std::string& axis,
                            const std::vector<double>& values, const std::string& out_dir) {
  if (axis != "beta" && axis != "alpha" && axis != "ref_fraction" && axis != "seed")
    throw ConfigError("sweep axis must be one of beta|alpha|ref_fraction|seed");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < values.size(); ++i) {
    SweepRow row;
    row.axis = axis;
    row.value = values[i];
    RunConfig cfg = apply_axis(base, axis, values[i]);
    cfg.out_dir =
        (fs::path(out_dir) / (axis + "_" + std::to_string(i) + "_" + short_double(values[i])))
            .string();
    try {
      const PipelineResult res = run_pipeline(cfg);
      write_artifacts(cfg, res);
      row.code = res.exit_code();
      row.status = status_name(res.report.status);
      if (!res.report.detection.poisoned_classes.empty()) {
        row.detected_class = res.report.detection.poisoned_classes.front();
        row.z_min = res.report.detection.z[*row.detected_class];
      }
      row.before = res.report.before;
      if (res.report.after) row.after = res.report.after;
      row.der = res.report.der;
    } catch (const std::exception& e) {
      row.code = 1;
      row.status = std::string("error:") + e.what();
    }
    rows.push_back(std::move(row));
  }

  std::ofstream out(fs::path(out_dir) / "sweep.csv");
  out << sweep_csv(rows);
  return rows;
}

void write_perturbations(const std::string& path,
                         const std::vector<qp::PerturbationResult>& results) {
  json per = json::array();
  for (const auto& r : results) per.push_back(per_class_to_json(r));
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << per.dump(2) << "\n";
}

std::vector<qp::PerturbationResult> load_perturbations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  const json per = json::parse(in);
  std::vector<qp::PerturbationResult> results;
  for (const auto& j : per) {
    qp::PerturbationResult r;
    r.target_class = j.at("class").get<std::size_t>();
    r.infeasible = j.at("infeasible").get<bool>();
    r.certified = j.at("certified").get<bool>();
    r.note = j.at("note").get<std::string>();
    const json& f = j.at("feasibility");
    r.feasibility.rank_of_v = f.at("rank_of_v").get<std::size_t>();
    r.feasibility.full_row_rank = f.at("full_row_rank").get<bool>();
    r.feasibility.dim_condition = f.at("dim_condition").get<bool>();
    r.feasibility.guaranteed_feasible = f.at("guaranteed_feasible").get<bool>();
    if (!r.infeasible) {
      r.s = j.at("s").get<Vector>();
      const json& k = j.at("kkt");
      r.kkt.stationarity_resid = k.at("stationarity_resid").get<double>();
      r.kkt.primal_violation = k.at("primal_violation").get<double>();
      r.kkt.dual_violation = k.at("dual_violation").get<double>();
      r.kkt.comp_slack_resid = k.at("comp_slack_resid").get<double>();
      r.kkt.duality_gap = k.at("duality_gap").get<double>();
      const json& d = j.at("dual");
      r.dual.lambda = d.at("lambda").get<Vector>();
      r.dual.objective = d.at("objective").get<double>();
      r.dual.iterations = d.at("iterations").get<std::size_t>();
      r.dual.converged = d.at("converged").get<bool>();
      r.dual.frozen_rows = d.at("frozen_rows").get<std::vector<std::size_t>>();
    }
    results.push_back(std::move(r));
  }
  return results;
}

std::string detection_to_json_text(const detect::DetectionReport& report) {
  json det;
  json norms = json::array();
  for (double n : report.norms) norms.push_back(finite_or_null(n));
  json z = json::array();
  for (double v : report.z) z.push_back(finite_or_null(v));
  det["norms"] = std::move(norms);
  det["z"] = std::move(z);
  det["mean"] = report.mean;
  det["std"] = report.std;
  det["alpha"] = report.alpha;
  det["poisoned_classes"] = report.poisoned_classes;
  det["degenerate"] = report.degenerate;
  return det.dump(2) + "\n";
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string csv =
      "axis,value,exit_code,status,detected_class,z_min,acc_before,asr_before,"
      "acc_after,asr_after,der\n";
  for (const auto& r : rows) {
    csv += r.axis + "," + fmt_double(r.value) + "," + std::to_string(r.code) + "," +
           r.status + ",";
    csv += r.detected_class ? std::to_string(*r.detected_class) : "";
    csv += ",";
    csv += r.z_min ? fmt_double(*r.z_min) : "";
    csv += ",";
    csv += r.before ? fmt_double(r.before->acc) : "";
    csv += ",";
    csv += r.before ? fmt_double(r.before->asr) : "";
    csv += ",";
    csv += r.after ? fmt_double(r.after->acc) : "";
    csv += ",";
    csv += r.after ? fmt_double(r.after->asr) : "";
    csv += ",";
    csv += r.der ? fmt_double(*r.der) : "";
    csv += "\n";
  }
  return csv;
}

}  // namespace tacdef::pipeline
