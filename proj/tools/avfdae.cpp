// Command-line front end: one subcommand per pipeline stage plus the
// experiment-matrix runner. Data artifacts go to the workdir (or the cohort
// directory for `synth`); progress goes to stderr.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "avfdae/avfdae.hpp"

namespace fs = std::filesystem;
using namespace avfdae;

namespace {

struct Globals {
  std::string config_file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> shortcuts;  // dotted key -> value
  bool force = false;
  bool quiet = false;
};

std::ostream* logger(const Globals& g) { return g.quiet ? nullptr : &std::cerr; }

nlohmann::json read_json_file(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw ConfigError(std::string(what) + ": cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(what) + ": " + path + ": " + e.what());
  }
}

// File, then shortcut flags, then --set overrides, then validation.
PipelineConfig load_config(const Globals& g) {
  nlohmann::json tree = nlohmann::json::object();
  if (!g.config_file.empty()) tree = read_json_file(g.config_file, "config");
  if (!tree.is_object()) throw ConfigError("config: top level must be an object");
  for (const auto& [key, value] : g.shortcuts) set_config_value(tree, key, value);
  for (const auto& s : g.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + s + "'");
    set_config_value(tree, s.substr(0, eq), s.substr(eq + 1));
  }
  auto c = config_from_json(tree);
  validate(c);
  return c;
}

bool non_empty_dir(const fs::path& p) { return fs::exists(p) && (!fs::is_directory(p) || !fs::is_empty(p)); }

std::string snr_tag(double snr) {
  std::ostringstream s;
  s << snr << "dB";
  return s.str();
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::string synth_config;
  int n_patients = -1;
  long long seed = -1;
};

int cmd_synth(const Globals& g, const SynthArgs& a) {
  const auto pc = load_config(g);
  SynthConfig sc;
  if (!a.synth_config.empty()) apply_json(sc, read_json_file(a.synth_config, "synth config"));
  if (a.n_patients >= 0) sc.n_patients = a.n_patients;
  if (a.seed >= 0) sc.seed = static_cast<std::uint64_t>(a.seed);
  sc.validate();
  const fs::path out = a.out.empty() ? fs::path(pc.cohort) : fs::path(a.out);
  if (non_empty_dir(out)) {
    if (!g.force) throw DataError("output " + out.string() + " is not empty (pass --force to overwrite)");
    fs::remove_all(out);
  }
  if (auto* log = logger(g)) *log << "synthesizing " << sc.n_patients << " patients into " << out.string() << '\n';
  write_synth_cohort(sc, out);
  const auto j = to_json(sc);
  write_json(out / "synth.json", {{"config_hash", hex64(fnv1a(j.dump()))}, {"seed", sc.seed}, {"config", j}});
  std::cout << out.string() << '\n';
  return 0;
}

int cmd_preprocess(const Globals& g) {
  const auto c = load_config(g);
  const auto cohort = prepare_cohort(c, logger(g));
  const fs::path dir = fs::path(c.workdir) / "preprocessed";
  fs::create_directories(dir);
  nlohmann::json files = nlohmann::json::array();
  for (const auto& p : cohort.patients)
    for (const auto* rec : {&p.site2, &p.site3}) {
      const std::string name = p.patient.patient_id + "_site" + std::to_string(static_cast<int>(rec->site)) + ".wav";
      write_wav(dir / name, *rec);
      files.push_back(name);
    }
  auto meta = provenance_json(c);
  meta["patients"] = cohort.patients.size();
  meta["exclusions"] = cohort.exclusions;
  meta["files"] = files;
  write_json(dir / "preprocess.json", meta);
  std::cout << cohort.patients.size() << " patients preprocessed, " << cohort.exclusions.size() << " excluded\n";
  return 0;
}

// Mixtures may exceed [-1, 1]. Each WAV is divided by its `wav_scale`
// (at least 1) so the PCM export never clips; the index records the scale.
int cmd_augment(const Globals& g, bool write_audio) {
  const auto c = load_config(g);
  const auto cohort = prepare_cohort(c, logger(g));
  const fs::path dir = fs::path(c.workdir) / "augmented";
  fs::create_directories(dir);
  std::ostringstream index;
  index << "patient_id,site,kind,snr_db,noise_gain,wav_scale,file\n";
  std::size_t count = 0;
  for (const auto& p : cohort.patients)
    for (const auto* rec : {&p.site2, &p.site3})
      for (auto& v : noisy_variants(*rec, c)) {
        double peak = 1.0;
        for (double x : v.samples) peak = std::max(peak, std::abs(x));
        const std::string name = v.patient_id + "_site" + std::to_string(static_cast<int>(v.site)) + "_" +
                                 to_string(v.noise.kind) + "_" + snr_tag(v.snr_db) + ".wav";
        if (write_audio) {
          Recording out{v.samples, rec->sample_rate_hz, v.site, v.patient_id};
          for (double& x : out.samples) x /= peak;
          write_wav(dir / name, out);
        }
        index << v.patient_id << ",site" << static_cast<int>(v.site) << ',' << to_string(v.noise.kind) << ',' << v.snr_db << ','
              << v.noise_gain << ',' << peak << ',' << (write_audio ? name : "") << '\n';
        ++count;
      }
  write_text(dir / "index.csv", index.str());
  auto meta = provenance_json(c);
  meta["recordings"] = cohort.patients.size() * 2;
  meta["variants"] = count;
  meta["snr_db"] = c.snr_db;
  write_json(dir / "augment.json", meta);
  std::cout << count << " noisy variants from " << cohort.patients.size() * 2 << " recordings\n";
  return 0;
}

int cmd_pretrain(const Globals& g) {
  const auto c = load_config(g);
  const auto path = checkpoint_path(c);
  if (fs::exists(path) && !g.force) throw DataError("checkpoint " + path.string() + " exists (pass --force to retrain)");
  const auto cohort = prepare_cohort(c, logger(g));
  const auto r = pretrain(cohort, c, logger(g));
  save_pretrained(c, r);
  std::cout << path.string() << '\n';
  return 0;
}

int cmd_extract(const Globals& g, bool allow_train) {
  const auto c = load_config(g);
  const auto cohort = prepare_cohort(c, logger(g));
  const auto model = obtain_model(cohort, c, allow_train, "extract", logger(g));
  const auto split = pretrain_split(cohort, c.pretrain_test_fraction, c.seed);
  const auto latents = combine(extract_site_latents(cohort, split.test, model, c), c.site);
  const std::string stem = checkpoint_path(c).stem().string() + "_" + site_name(c.site) + "_" + to_string(resolved_inputs(c));
  const fs::path dir = fs::path(c.workdir) / "latents";
  std::ostringstream csv;
  write_latents_csv(csv, latents);
  write_text(dir / (stem + ".csv"), csv.str());
  auto meta = provenance_json(c);
  meta["rows"] = latents.size();
  meta["dim"] = latents.empty() ? 0 : latents.front().dim();
  meta["patients"] = split.test.size();
  write_json(dir / (stem + ".json"), meta);
  std::cout << (dir / (stem + ".csv")).string() << '\n';
  return 0;
}

int cmd_train_downstream(const Globals& g, bool allow_train) {
  const auto c = load_config(g);
  const auto cohort = prepare_cohort(c, logger(g));
  PipelineCache cache;
  const std::string cell = "downstream_" + config_hash(c);
  const auto report = run_cell(cohort, c, cache, allow_train, cell, logger(g));
  const auto path = fs::path(c.workdir) / "reports" / (cell + ".json");
  write_json(path, cell_report_json(cell, c, report));
  std::cout << render_markdown_table(std::string(to_string(c.classifier)) + ", " + site_name(c.site) + ", " + to_string(c.target),
                                     {level_column(c.level)}, {&report});
  if (auto* log = logger(g)) *log << "report: " << path.string() << '\n';
  return 0;
}

int cmd_run_matrix(const Globals& g, const std::string& preset, bool allow_train) {
  const auto c = load_config(g);
  const auto out = run_matrix(preset, c, allow_train, logger(g));
  std::cout << render_matrix_summary(out.manifest, preset_dir(c, preset));
  if (out.failures > 0) {
    std::cerr << out.failures << " cell(s) failed; see " << (preset_dir(c, preset) / "manifest.json").string() << '\n';
    return static_cast<int>(out.first_failure);
  }
  return 0;
}

int cmd_report(const Globals& g, const std::string& preset) {
  const auto c = load_config(g);
  (void)make_preset(preset, c);
  const auto dir = preset_dir(c, preset);
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("no manifest in " + dir.string() + " (run `avfdae run-matrix --preset " + preset + "` first)");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt manifest: " + std::string(e.what()));
  }
  const auto md = render_matrix_summary(manifest, dir);
  write_text(dir / "summary.md", md);
  std::cout << md;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Denoising-autoencoder pipeline for AVF auscultation audio"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("-c,--config", g.config_file, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--set", g.sets, "Override a config key, e.g. --set pretrain.epochs=20 (repeatable)");
  app.add_flag("--force", g.force, "Overwrite existing outputs");
  app.add_flag("-q,--quiet", g.quiet, "No progress output");

  // Shortcuts for the most common keys; --set reaches every key.
  const std::pair<const char*, const char*> shortcuts[]{
      {"--cohort", "paths.cohort"},         {"--workdir", "paths.workdir"},      {"--seed", "seed"},
      {"--level", "feature.level"},         {"--view", "feature.view"},          {"--scheme", "pretrain.scheme"},
      {"--epochs", "pretrain.epochs"},      {"--lr", "pretrain.learning_rate"},  {"--site", "downstream.site_combination"},
      {"--target", "downstream.target"},    {"--classifier", "downstream.classifier"},
      {"--dim", "downstream.condensed_dim"}, {"--runs", "downstream.n_runs"}};
  for (const auto& [flag, key] : shortcuts) {
    const std::string k = key;
    app.add_option_function<std::string>(flag, [&g, k](const std::string& v) { g.shortcuts[k] = v; }, "Sets " + k);
  }

  SynthArgs synth;
  auto* s_synth = app.add_subcommand("synth", "Write a synthetic cohort (metadata.csv + WAVs)");
  s_synth->add_option("--out", synth.out, "Cohort directory (default: paths.cohort)");
  s_synth->add_option("--n-patients", synth.n_patients, "Number of patients")->check(CLI::NonNegativeNumber);
  s_synth->add_option("--synth-seed", synth.seed, "Generator seed")->check(CLI::NonNegativeNumber);
  s_synth->add_option("--synth-config", synth.synth_config, "JSON file overriding generator settings")->check(CLI::ExistingFile);

  auto* s_pre = app.add_subcommand("preprocess", "Trim, segment and normalize every recording");
  bool no_audio = false;
  auto* s_aug = app.add_subcommand("augment", "Write the noise-mixed variants and their index");
  s_aug->add_flag("--no-audio", no_audio, "Write the index only");
  auto* s_pt = app.add_subcommand("pretrain", "Train the autoencoder and save a checkpoint");
  bool allow_train = false;
  auto* s_ex = app.add_subcommand("extract", "Encode the held-out patients and write latents");
  s_ex->add_flag("--train", allow_train, "Pretrain when the checkpoint is missing");
  auto* s_ds = app.add_subcommand("train-downstream", "Run the repeated downstream classification for one cell");
  s_ds->add_flag("--train", allow_train, "Pretrain when the checkpoint is missing");
  std::string preset;
  std::string preset_help = "One of:";
  for (const auto& n : preset_names()) preset_help += " " + n;
  auto* s_mx = app.add_subcommand("run-matrix", "Run every cell of an experiment preset");
  s_mx->add_option("--preset", preset, preset_help)->required();
  s_mx->add_flag("--train", allow_train, "Pretrain missing checkpoints");
  auto* s_rp = app.add_subcommand("report", "Re-render a preset's Markdown summary from its manifest");
  s_rp->add_option("--preset", preset, preset_help)->required();

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::Config);
  }

  try {
    if (s_synth->parsed()) return cmd_synth(g, synth);
    if (s_pre->parsed()) return cmd_preprocess(g);
    if (s_aug->parsed()) return cmd_augment(g, !no_audio);
    if (s_pt->parsed()) return cmd_pretrain(g);
    if (s_ex->parsed()) return cmd_extract(g, allow_train);
    if (s_ds->parsed()) return cmd_train_downstream(g, allow_train);
    if (s_mx->parsed()) return cmd_run_matrix(g, preset, allow_train);
    if (s_rp->parsed()) return cmd_report(g, preset);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::Data);
  }
  return 0;
}
