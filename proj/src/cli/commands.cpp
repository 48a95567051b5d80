#include "ninv/commands.hpp"

#include <fstream>
#include <iostream>
#include <memory>
#include <set>

#include "ninv/checkpoint.hpp"
#include "ninv/csv.hpp"
#include "ninv/image_io.hpp"
#include "ninv/inversion.hpp"
#include "ninv/manifest.hpp"
#include "ninv/models.hpp"
#include "ninv/ood.hpp"
#include "ninv/privacy.hpp"
#include "ninv/train.hpp"

namespace ninv {

namespace fs = std::filesystem;

namespace {

std::uint64_t root_seed(const RunConfig& cfg) { return cfg.count("seed"); }

Rng phase_rng(const RunConfig& cfg, const std::string& phase) { return Rng(Rng::derive(root_seed(cfg), phase)); }

void prepare_out_dir(const RunConfig& cfg, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw ConfigError("cannot create output directory '" + out_dir.string() + "'");
  std::ofstream out(out_dir / "config.resolved", std::ios::binary);
  if (!out) throw IoError("cannot write '" + (out_dir / "config.resolved").string() + "'");
  out << cfg.resolved();
}

void require_files(const std::vector<std::pair<std::string, std::string>>& keyed_paths) {
  std::vector<std::string> missing;
  for (const auto& [key, path] : keyed_paths) {
    if (path.empty()) {
      missing.push_back(key + " is not set");
    } else if (!fs::is_regular_file(path)) {
      missing.push_back(key + " = '" + path + "': file not found");
    }
  }
  if (missing.empty()) return;
  std::string msg = std::to_string(missing.size()) + " configuration error" + (missing.size() == 1 ? "" : "s") + ":";
  for (const auto& m : missing) msg += "\n  " + m;
  throw ConfigError(msg);
}

std::string data_name(const RunConfig& cfg) {
  if (!cfg.get("data.name").empty()) return cfg.get("data.name");
  return cfg.get("data.source") == "synth" ? cfg.get("data.family") : "idx";
}

ImageShape configured_shape(const RunConfig& cfg) { return ImageShape::parse(cfg.get("data.shape")); }

OptimConfig adam(double lr, double weight_decay = 0.0) {
  OptimConfig o;
  o.learning_rate = lr;
  o.weight_decay = weight_decay;
  return o;
}

TrainConfig train_config(const RunConfig& cfg, std::size_t epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = cfg.count("train.batch_size");
  t.optim = adam(cfg.real("train.lr"), cfg.real("train.weight_decay"));
  return t;
}

ClassifierSpec classifier_spec(const RunConfig& cfg, const ImageShape& shape, std::size_t classes) {
  ClassifierSpec s = cfg.get("classifier.kind") == "cnn" ? ClassifierSpec::cnn(shape, classes)
                                                        : ClassifierSpec::mlp(shape, classes);
  if (s.kind == ClassifierKind::Cnn) {
    s.hidden = cfg.counts("classifier.cnn_hidden");
    s.filters = cfg.counts("classifier.filters");
    s.kernel = cfg.count("classifier.kernel");
  } else {
    s.hidden = cfg.counts("classifier.mlp_hidden");
  }
  s.slope = cfg.real("classifier.slope");
  try {
    s.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid classifier architecture: ") + e.what());
  }
  return s;
}

GeneratorSpec generator_spec(const RunConfig& cfg, std::size_t classes, const ImageShape& output,
                             const std::string& condition, std::uint64_t condition_seed) {
  GeneratorSpec g;
  g.z_dim = cfg.count("generator.z_dim");
  g.condition = condition == "hot" ? ConditionMode::Hot : ConditionMode::Hidden;
  g.condition_dim = cfg.count("generator.condition_dim");
  g.classes = classes;
  g.dropout = cfg.real("generator.dropout");
  g.output = output;
  g.hidden = cfg.counts("generator.hidden");
  g.slope = cfg.real("generator.slope");
  g.condition_seed = condition_seed;
  try {
    g.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid generator architecture: ") + e.what());
  }
  return g;
}

InversionConfig inversion_config(const RunConfig& cfg) {
  InversionConfig c;
  c.alpha = cfg.real("inversion.alpha");
  c.beta = cfg.real("inversion.beta");
  c.gamma = cfg.real("inversion.gamma");
  c.delta = cfg.real("inversion.delta");
  c.smoothing = cfg.real("inversion.smoothing");
  c.batch_size = cfg.count("inversion.batch_size");
  c.steps = cfg.count("inversion.steps");
  c.optim = adam(cfg.real("inversion.lr"));
  c.target_accuracy = cfg.real("inversion.target_accuracy");
  c.eval_every = cfg.count("inversion.eval_every");
  c.eval_samples = cfg.count("inversion.eval_samples");
  try {
    c.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid inversion settings: ") + e.what());
  }
  return c;
}

ReconConfig recon_config(const RunConfig& cfg) {
  ReconConfig c(inversion_config(cfg));
  c.gamma = cfg.real("recon.gamma");
  c.alpha_pert = cfg.real("recon.alpha_pert");
  c.beta_pert = cfg.real("recon.beta_pert");
  c.eta_var = cfg.real("recon.eta_var");
  c.eta_pix = cfg.real("recon.eta_pix");
  c.eta_grad = cfg.real("recon.eta_grad");
  c.eps_pert = cfg.real("recon.eps_pert");
  c.steps = cfg.count("recon.steps");
  try {
    c.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid reconstruction settings: ") + e.what());
  }
  return c;
}

Classifier load_classifier(const std::string& path, const std::string& key) {
  require_files({{key, path}});
  return classifier_from_checkpoint(load_checkpoint(path));
}

void require_input_shape(const Classifier& clf, const ImageShape& shape, const std::string& what) {
  if (clf.spec().input != shape) {
    throw ConfigError(what + " has image shape " + shape.str() + " but the classifier expects " +
                      clf.spec().input.str());
  }
}

// Class-major grid: row r holds per_class samples of class r.
Tensor class_grid_samples(const Generator& gen, std::size_t per_class, Rng& rng) {
  std::vector<std::size_t> labels;
  for (std::size_t c = 0; c < gen.spec().classes; ++c) labels.insert(labels.end(), per_class, c);
  return gen.sample(labels, Mode::Eval, rng);
}

Dataset noise_set(std::size_t size, const ImageShape& shape, std::size_t classes, Rng& rng) {
  Dataset d;
  d.name = "noise";
  d.split = "test";
  d.images = init_garbage(size, shape, 0, size, rng).images();
  d.labels.assign(size, 0);
  d.classes = classes;
  return d;
}

void write_threshold_rows(const std::vector<CsvRow>& rows, const fs::path& path) {
  const CsvSchema schema{{{"model", CsvType::Text},
                          {"id_dataset", CsvType::Text},
                          {"ood_dataset", CsvType::Text},
                          {"id_correct", CsvType::Integer},
                          {"id_total", CsvType::Integer},
                          {"ood_misrouted", CsvType::Integer},
                          {"ood_total", CsvType::Integer},
                          {"min_id_confidence", CsvType::Text},
                          {"max_ood_confidence", CsvType::Text},
                          {"gap", CsvType::Real},
                          {"violations", CsvType::Integer}}};
  write_csv(rows, schema, path);
}

std::string optional_field(const std::optional<double>& v) { return v ? csv_field(*v) : std::string(); }

}  // namespace

std::pair<Dataset, Dataset> load_configured_data(const RunConfig& cfg) {
  const std::size_t n_train = cfg.count("data.train_size"), n_test = cfg.count("data.test_size");
  std::pair<Dataset, Dataset> out;
  if (cfg.get("data.source") == "synth") {
    if (n_train == 0 || n_test == 0) throw ConfigError("data.train_size and data.test_size must be positive");
    SynthSpec spec;
    spec.family = parse_family(cfg.get("data.family"));
    spec.classes = cfg.count("data.classes");
    spec.shape = configured_shape(cfg);
    spec.noise = cfg.real("data.noise");
    spec.seed = Rng::derive(root_seed(cfg), "data");
    if (spec.classes < 2) throw ConfigError("data.classes must be at least 2");
    out = synth_dataset(spec, n_train, n_test);
  } else {
    require_files({{"data.train_images", cfg.get("data.train_images")},
                   {"data.train_labels", cfg.get("data.train_labels")},
                   {"data.test_images", cfg.get("data.test_images")},
                   {"data.test_labels", cfg.get("data.test_labels")}});
    const std::size_t classes = cfg.count("data.classes");
    out.first = load_idx(cfg.get("data.train_images"), cfg.get("data.train_labels"), classes);
    out.second = load_idx(cfg.get("data.test_images"), cfg.get("data.test_labels"), classes);
    if (n_train > 0) out.first = take(out.first, n_train);
    if (n_test > 0) out.second = take(out.second, n_test);
  }
  out.first.name = out.second.name = data_name(cfg);
  return out;
}

Dataset resolve_dataset(const std::string& token, const RunConfig& cfg, std::size_t size) {
  const ImageShape shape = configured_shape(cfg);
  const std::size_t classes = cfg.count("data.classes");
  if (token == "data") return take(load_configured_data(cfg).second, size);
  if (token == "noise") {
    Rng rng = phase_rng(cfg, "probe:noise");
    return noise_set(size, shape, classes, rng);
  }
  if (token.rfind("idx:", 0) == 0) {
    const auto sep = token.find(':', 4);
    if (sep == std::string::npos) throw ConfigError("dataset '" + token + "': expected idx:<images>:<labels>");
    const std::string images = token.substr(4, sep - 4), labels = token.substr(sep + 1);
    require_files({{token + " images", images}, {token + " labels", labels}});
    Dataset d = take(load_idx(images, labels), size);
    d.name = fs::path(images).stem().string();
    return d;
  }
  SynthSpec spec;
  try {
    spec.family = parse_family(token);
  } catch (const Error&) {
    throw ConfigError("unknown dataset '" + token + "' (expected a synthetic family, noise, data or idx:<images>:<labels>)");
  }
  spec.classes = classes;
  spec.shape = shape;
  spec.noise = cfg.real("data.noise");
  spec.seed = Rng::derive(root_seed(cfg), "probe:" + token);
  Dataset d = synth_dataset(spec, classes, size).second;
  d.name = token;
  return d;
}

void cmd_train_classifier(const RunConfig& cfg, const fs::path& out_dir, std::ostream& log) {
  prepare_out_dir(cfg, out_dir);
  RunManifest manifest("train-classifier", cfg, out_dir);
  manifest.artifact("config.resolved");

  std::pair<Dataset, Dataset> data;
  {
    PhaseTimer t(manifest, "data");
    data = load_configured_data(cfg);
  }
  const auto& [train, test] = data;
  Rng init = phase_rng(cfg, "classifier-init");
  Classifier clf(classifier_spec(cfg, train.image_shape(), train.classes), init);

  double test_accuracy = 0;
  {
    PhaseTimer t(manifest, "train");
    CsvWriter csv(out_dir / "train_log.csv", CsvSchema{{{"epoch", CsvType::Integer},
                                                        {"loss", CsvType::Real},
                                                        {"train_accuracy", CsvType::Real},
                                                        {"test_accuracy", CsvType::Real}}});
    Rng rng = phase_rng(cfg, "classifier-train");
    train_classifier(clf, train, train_config(cfg, cfg.count("train.epochs")), {}, rng, [&](const EpochStats& s) {
      test_accuracy = classifier_accuracy(clf, test);
      csv.write({static_cast<std::int64_t>(s.epoch), s.loss, s.train_accuracy, test_accuracy});
      log << "epoch " << s.epoch << " loss " << s.loss << " test_accuracy " << test_accuracy << "\n";
    });
    if (cfg.count("train.epochs") == 0) test_accuracy = classifier_accuracy(clf, test);
  }
  manifest.artifact("train_log.csv");

  Checkpoint ckpt = to_checkpoint(clf);
  ckpt.seed = root_seed(cfg);
  ckpt.metadata["dataset"] = train.name;
  save_checkpoint(ckpt, out_dir / "classifier.ckpt");
  manifest.artifact("classifier.ckpt");

  manifest.metric("train_size", static_cast<std::int64_t>(train.size()));
  manifest.metric("test_size", static_cast<std::int64_t>(test.size()));
  manifest.metric("test_accuracy", test_accuracy);
  manifest.write();
}

void cmd_invert(const RunConfig& cfg, const fs::path& out_dir, std::ostream& log) {
  Classifier clf = load_classifier(cfg.get("classifier.checkpoint"), "classifier.checkpoint");
  if (cfg.get("data.source") == "synth") require_input_shape(clf, configured_shape(cfg), "data.shape");
  const InversionConfig icfg = inversion_config(cfg);
  prepare_out_dir(cfg, out_dir);
  RunManifest manifest("invert", cfg, out_dir);
  manifest.artifact("config.resolved");
  clf.freeze();

  Rng init = phase_rng(cfg, "generator-init");
  const GeneratorSpec gspec = generator_spec(cfg, clf.spec().classes, clf.spec().input,
                                             cfg.get("generator.condition"), Rng::derive(root_seed(cfg), "condition"));
  Generator gen(gspec, init);

  InversionRun run;
  {
    PhaseTimer t(manifest, "inversion");
    CsvWriter csv(out_dir / "inversion_log.csv", inversion_log_schema());
    Rng rng = phase_rng(cfg, "inversion");
    run = run_inversion(gen, clf, icfg, rng, &csv);
  }
  manifest.artifact("inversion_log.csv");
  log << "inversion accuracy " << run.final_accuracy << "\n";

  Checkpoint ckpt = to_checkpoint(gen);
  ckpt.seed = root_seed(cfg);
  save_checkpoint(ckpt, out_dir / "generator.ckpt");
  manifest.artifact("generator.ckpt");

  {
    PhaseTimer t(manifest, "samples");
    Rng rng = phase_rng(cfg, "samples");
    const std::size_t per_class = cfg.count("inversion.grid_per_class");
    if (per_class > 0) {
      write_pgm_grid(class_grid_samples(gen, per_class, rng), per_class, out_dir / "samples.pgm");
      manifest.artifact("samples.pgm");
    }
  }
  manifest.metric("inversion_accuracy", run.final_accuracy);
  manifest.metric("target_reached", run.final_accuracy >= icfg.target_accuracy);
  manifest.write();
}

void cmd_reconstruct(const RunConfig& cfg, const fs::path& out_dir, std::ostream& log) {
  Classifier clf = load_classifier(cfg.get("classifier.checkpoint"), "classifier.checkpoint");
  const ReconConfig rcfg = recon_config(cfg);
  const std::size_t per_class = cfg.count("recon.per_class");
  if (per_class == 0) throw ConfigError("recon.per_class must be positive");
  prepare_out_dir(cfg, out_dir);
  RunManifest manifest("reconstruct", cfg, out_dir);
  manifest.artifact("config.resolved");

  std::pair<Dataset, Dataset> data;
  {
    PhaseTimer t(manifest, "data");
    data = load_configured_data(cfg);
  }
  const auto& [train, holdout] = data;
  require_input_shape(clf, train.image_shape(), "the reference set");
  clf.freeze();

  Rng init = phase_rng(cfg, "generator-init");
  Generator gen(generator_spec(cfg, clf.spec().classes, clf.spec().input, cfg.get("recon.condition"),
                               Rng::derive(root_seed(cfg), "condition")),
                init);
  ReconstructionResult result;
  {
    PhaseTimer t(manifest, "reconstruction");
    CsvWriter csv(out_dir / "recon_log.csv", inversion_log_schema());
    Rng rng = phase_rng(cfg, "reconstruction");
    result = reconstruct(gen, clf, rcfg, per_class, rng, &csv);
  }
  manifest.artifact("recon_log.csv");
  write_pgm_grid(result.reconstructions, per_class, out_dir / "reconstructions.pgm");
  manifest.artifact("reconstructions.pgm");

  PhaseTimer t(manifest, "privacy");
  const PrivacyReport on_train = privacy_score(result.reconstructions, train.images, train.name + "-train");
  write_privacy_report(on_train, out_dir / "privacy_train.csv");
  manifest.artifact("privacy_train.csv");
  manifest.metric("inversion_accuracy", result.run.final_accuracy);
  manifest.metric("reconstructions", static_cast<std::int64_t>(result.labels.size()));
  manifest.metric("train_mean_ssim", on_train.mean_ssim);
  manifest.metric("train_max_ssim", on_train.max_ssim);
  log << "mean best-match ssim vs train " << on_train.mean_ssim << "\n";
  if (cfg.flag("recon.holdout")) {
    const PrivacyReport on_holdout =
        privacy_score(result.reconstructions, holdout.images, holdout.name + "-holdout");
    write_privacy_report(on_holdout, out_dir / "privacy_holdout.csv");
    manifest.artifact("privacy_holdout.csv");
    const bool train_higher = on_train.mean_ssim > on_holdout.mean_ssim;
    manifest.metric("holdout_mean_ssim", on_holdout.mean_ssim);
    manifest.metric("holdout_max_ssim", on_holdout.max_ssim);
    manifest.metric("train_minus_holdout", on_train.mean_ssim - on_holdout.mean_ssim);
    manifest.metric("train_higher", train_higher);
    log << "mean best-match ssim vs holdout " << on_holdout.mean_ssim << " ("
        << (train_higher ? "train higher" : "train not higher") << ")\n";
  }
  manifest.write();
}

void cmd_ood(const RunConfig& cfg, const fs::path& out_dir, std::ostream& log) {
  OodConfig ocfg;
  ocfg.cycles = cfg.count("ood.cycles");
  ocfg.base_train = train_config(cfg, cfg.count("ood.base_epochs"));
  ocfg.cycle_train = train_config(cfg, cfg.count("ood.cycle_epochs"));
  ocfg.inversion = inversion_config(cfg);
  ocfg.inversion.steps = cfg.count("ood.inversion_steps");
  ocfg.inversion.eval_every = 0;
  ocfg.noise_count = cfg.count("ood.noise_count");
  ocfg.budget = cfg.count("ood.budget");
  ocfg.capacity_factor = cfg.count("ood.capacity_factor");
  ocfg.sample_dropout = cfg.flag("ood.sample_dropout");
  ocfg.warmup_cycles = cfg.count("ood.warmup_cycles");
  try {
    ocfg.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid ood settings: ") + e.what());
  }
  const std::vector<std::string> probe_tokens = cfg.list("ood.probes");
  const std::size_t probe_size = cfg.count("ood.probe_size");
  if (!probe_tokens.empty() && probe_size == 0) throw ConfigError("ood.probe_size must be positive");

  prepare_out_dir(cfg, out_dir);
  RunManifest manifest("ood", cfg, out_dir);
  manifest.artifact("config.resolved");

  std::pair<Dataset, Dataset> data;
  OodProbes probes;
  std::vector<std::string> probe_names;
  {
    PhaseTimer t(manifest, "data");
    data = load_configured_data(cfg);
    probes.id_test = &data.second;
    for (const auto& token : probe_tokens) {
      Dataset d = resolve_dataset(token, cfg, probe_size);
      if (d.image_shape() != data.first.image_shape()) {
        throw ConfigError("probe '" + token + "' has image shape " + d.image_shape().str() + " but the data has " +
                          data.first.image_shape().str());
      }
      probe_names.push_back(d.name);
      probes.probes.push_back(std::move(d));
    }
  }
  const Dataset& train = data.first;
  const std::size_t n = train.classes;
  Rng init = phase_rng(cfg, "classifier-init");
  Classifier clf(classifier_spec(cfg, train.image_shape(), n + 1), init);

  const GeneratorFactory factory = [&](std::size_t, Rng& rng) {
    return Generator(generator_spec(cfg, n + 1, train.image_shape(), cfg.get("generator.condition"), rng.engine()()),
                     rng);
  };
  const std::size_t per_class = cfg.count("ood.grid_per_class");
  CsvWriter csv(out_dir / "cycles.csv", cycle_report_schema(probe_names));
  std::vector<std::string> grids;
  const auto on_cycle = [&](const CycleReport& r, const Tensor* inverted) {
    csv.write(cycle_report_row(r));
    log << "cycle " << r.cycle << " id_train_accuracy " << r.id_train_accuracy << " garbage " << r.garbage_size;
    for (std::size_t i = 0; i < r.probe_routing.size(); ++i) log << " " << probe_names[i] << " " << r.probe_routing[i];
    log << "\n";
    if (inverted == nullptr || per_class == 0) return;
    // Garbage samples cycle through the n+1 labels, so n+1 columns keep one class per column.
    const std::size_t cols = n + 1, count = std::min(inverted->shape()[0], cols * per_class);
    const ImageShape& shape = train.image_shape();
    const auto px = inverted->data().first(count * shape.numel());
    const Tensor head({count, shape.channels, shape.height, shape.width}, std::vector<float>(px.begin(), px.end()));
    const std::string name = "cycle_" + std::to_string(r.cycle) + ".pgm";
    write_pgm_grid(head, cols, out_dir / name);
    grids.push_back(name);
  };

  Rng rng = phase_rng(cfg, "ood");
  std::optional<OodResult> result;
  {
    PhaseTimer t(manifest, "cycles");
    try {
      result.emplace(ood_training_cycle(clf, factory, train, ocfg, rng, probes, on_cycle));
    } catch (const DivergenceError& e) {
      manifest.artifact("cycles.csv");
      for (const auto& g : grids) manifest.artifact(g);
      manifest.metric("diverged", true);
      manifest.metric("diagnostic", e.diagnostic());
      manifest.write();
      throw;
    }
  }
  manifest.artifact("cycles.csv");
  for (const auto& g : grids) manifest.artifact(g);

  Checkpoint ckpt = to_checkpoint(clf);
  ckpt.seed = root_seed(cfg);
  ckpt.metadata["dataset"] = train.name;
  ckpt.metadata["garbage_class"] = std::to_string(n);
  save_checkpoint(ckpt, out_dir / "classifier.ckpt");
  manifest.artifact("classifier.ckpt");

  const CycleReport& last = result->reports.back();
  manifest.metric("diverged", false);
  manifest.metric("cycles", static_cast<std::int64_t>(ocfg.cycles));
  manifest.metric("garbage_size", static_cast<std::int64_t>(last.garbage_size));
  manifest.metric("id_train_accuracy", last.id_train_accuracy);
  if (last.id_test_accuracy) manifest.metric("id_test_accuracy", *last.id_test_accuracy);
  for (std::size_t i = 0; i < probe_names.size(); ++i) {
    manifest.metric("routing_" + probe_names[i], last.probe_routing[i]);
  }
  if (last.threshold) {
    manifest.metric("threshold_gap", csv_field(last.threshold->gap));
    manifest.metric("threshold_violations", static_cast<std::int64_t>(last.threshold->violations));
  }
  manifest.write();
}

void cmd_evaluate(const RunConfig& cfg, const fs::path& out_dir, std::ostream& log) {
  const auto model_paths = cfg.list("evaluate.models");
  const auto trained_on = cfg.list("evaluate.trained_on");
  const auto tokens = cfg.list("evaluate.datasets");
  std::vector<std::string> errors;
  if (model_paths.empty()) errors.push_back("evaluate.models is empty");
  if (tokens.empty()) errors.push_back("evaluate.datasets is empty");
  if (trained_on.size() != model_paths.size()) {
    errors.push_back("evaluate.trained_on lists " + std::to_string(trained_on.size()) + " entries for " +
                     std::to_string(model_paths.size()) + " models");
  }
  for (std::size_t i = 0; i < model_paths.size(); ++i) {
    if (!fs::is_regular_file(model_paths[i])) errors.push_back("model '" + model_paths[i] + "': file not found");
  }
  if (!errors.empty()) {
    std::string msg = std::to_string(errors.size()) + " configuration error" + (errors.size() == 1 ? "" : "s") + ":";
    for (const auto& m : errors) msg += "\n  " + m;
    throw ConfigError(msg);
  }
  prepare_out_dir(cfg, out_dir);
  RunManifest manifest("evaluate", cfg, out_dir);
  manifest.artifact("config.resolved");

  std::vector<Classifier> models;
  std::vector<Dataset> datasets;
  {
    PhaseTimer t(manifest, "load");
    for (const auto& p : model_paths) models.push_back(classifier_from_checkpoint(load_checkpoint(p)));
    const std::size_t size = cfg.count("data.test_size");
    if (size == 0) throw ConfigError("data.test_size must be positive");
    std::set<std::string> names;
    for (const auto& token : tokens) {
      datasets.push_back(resolve_dataset(token, cfg, size));
      if (!names.insert(datasets.back().name).second) {
        throw ConfigError("dataset name '" + datasets.back().name + "' appears twice in evaluate.datasets");
      }
    }
  }
  std::vector<GridModel> grid;
  std::set<std::string> row_names;
  for (std::size_t i = 0; i < models.size(); ++i) {
    std::string name = fs::path(model_paths[i]).parent_path().filename().string();
    if (name.empty() || !row_names.insert(name).second) name = model_paths[i];
    row_names.insert(name);
    for (const auto& d : datasets) {
      if (d.image_shape() != models[i].spec().input) {
        throw ConfigError("model '" + model_paths[i] + "' expects " + models[i].spec().input.str() + " but dataset '" +
                          d.name + "' has " + d.image_shape().str());
      }
      if (d.name == trained_on[i] && d.classes + 1 != models[i].spec().classes) {
        throw ConfigError("model '" + model_paths[i] + "' has " + std::to_string(models[i].spec().classes) +
                          " outputs but its dataset '" + d.name + "' has " + std::to_string(d.classes) +
                          " classes plus garbage");
      }
    }
    grid.push_back({name, trained_on[i], &models[i]});
  }

  AccuracyMatrix matrix;
  {
    PhaseTimer t(manifest, "grid");
    matrix = evaluate_grid(grid, datasets);
  }
  write_accuracy_matrix(matrix, out_dir / "accuracy_matrix.csv");
  manifest.artifact("accuracy_matrix.csv");

  // One threshold row per model: its own test set against each other set,
  // or only against evaluate.threshold_ood when that is given.
  const std::string only_ood = cfg.get("evaluate.threshold_ood");
  std::vector<CsvRow> rows;
  {
    PhaseTimer t(manifest, "threshold");
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const Dataset* id = nullptr;
      for (const auto& d : datasets) {
        if (d.name == grid[i].trained_on) id = &d;
      }
      for (const auto& ood : datasets) {
        if (&ood == id || id == nullptr) continue;
        if (!only_ood.empty() && ood.name != only_ood) continue;
        const ThresholdReport r = threshold_report(models[i], *id, ood);
        rows.push_back({grid[i].name, id->name, ood.name, static_cast<std::int64_t>(r.id_correct),
                        static_cast<std::int64_t>(r.id_total), static_cast<std::int64_t>(r.ood_misrouted),
                        static_cast<std::int64_t>(r.ood_total), optional_field(r.min_id_confidence),
                        optional_field(r.max_ood_confidence), r.gap, static_cast<std::int64_t>(r.violations)});
        log << grid[i].name << " " << id->name << " vs " << ood.name << ": gap " << r.gap << " violations "
            << r.violations << "\n";
      }
    }
  }
  write_threshold_rows(rows, out_dir / "threshold.csv");
  manifest.artifact("threshold.csv");
  for (std::size_t r = 0; r < matrix.rows.size(); ++r) {
    for (std::size_t c = 0; c < matrix.columns.size(); ++c) {
      manifest.metric(matrix.rows[r] + "/" + matrix.columns[c], matrix.values[r][c]);
    }
  }
  manifest.write();
}

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"train-classifier", "invert", "reconstruct", "ood", "evaluate"};
  return names;
}

int run_command(const std::string& command, const fs::path& config_path, const fs::path& out_dir,
                std::optional<std::uint64_t> seed, std::ostream& log, std::ostream& err) {
  try {
    RunConfig cfg = RunConfig::load(config_path);
    if (seed) cfg.set("seed", std::to_string(*seed));
    if (command == "train-classifier") {
      cmd_train_classifier(cfg, out_dir, log);
    } else if (command == "invert") {
      cmd_invert(cfg, out_dir, log);
    } else if (command == "reconstruct") {
      cmd_reconstruct(cfg, out_dir, log);
    } else if (command == "ood") {
      cmd_ood(cfg, out_dir, log);
    } else if (command == "evaluate") {
      cmd_evaluate(cfg, out_dir, log);
    } else {
      throw ConfigError("unknown command '" + command + "'");
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DivergenceError& e) {
    err << "diverged: " << e.what() << "\n  " << e.diagnostic() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace ninv
