#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "avfdae/augment.hpp"
#include "avfdae/error.hpp"
#include "avfdae/experiment.hpp"
#include "avfdae/latent.hpp"
#include "avfdae/nnet.hpp"
#include "avfdae/rng.hpp"
#include "avfdae/signal_io.hpp"
#include "avfdae/synthdata.hpp"
#include "avfdae/transforms.hpp"

namespace avfdae {

enum class FeatureView { Waveform, Fft, Stft };
enum class Target { Flow, Gender, Htn, Dm };
// Which encoder inputs feed the downstream set. Auto: clean recordings for a
// clean-to-clean model, the noisy variants otherwise.
enum class InputSource { Auto, Clean, Noisy };

struct PipelineConfig {
  std::string cohort = "cohort";
  std::string workdir = "work";

  int level = 1;
  FeatureView view = FeatureView::Waveform;
  std::string wavelet = "bior3.1";
  StftParams stft;
  PreprocessOptions preprocess;
  std::vector<double> snr_db{kDefaultSnrDb.begin(), kDefaultSnrDb.end()};

  nn::TrainScheme scheme = nn::TrainScheme::NoisyToClean;
  std::optional<nn::Arch> arch;  // unset: dense for waveform/fft, conv1d for stft
  std::vector<int> widths{5000, 1000, 100};
  std::vector<int> filters{64, 32, 16};
  int kernel = 3;
  double leaky_slope = 0.01;
  int epochs = 100;
  int batch_size = 32;
  double learning_rate = 1e-4;
  double pretrain_test_fraction = 0.2;

  SiteTag site = SiteTag::Subtract23;
  Target target = Target::Flow;
  InputSource inputs = InputSource::Auto;
  ClassifierKind classifier = ClassifierKind::Svm;
  SvmConfig svm;
  int knn_k = 3;
  GbtConfig gbt;
  int condensed_dim = 0;  // 0 keeps the full latent
  bool fusion = false;
  int n_runs = 10;
  double train_fraction = 0.7;

  std::uint64_t seed = 1;

  nn::Arch resolved_arch() const {
    if (arch) return *arch;
    return view == FeatureView::Stft ? nn::Arch::Conv1D : nn::Arch::Dense;
  }
  std::size_t segment_samples() const {
    return static_cast<std::size_t>(std::llround(preprocess.segment_seconds * kPipelineSampleRate));
  }
};

// ---------------------------------------------------------------------------
// Enum names

namespace detail {

template <typename E>
struct EnumName {
  E value;
  const char* name;
};

inline constexpr EnumName<FeatureView> kViews[]{
    {FeatureView::Waveform, "waveform"}, {FeatureView::Fft, "fft"}, {FeatureView::Stft, "stft"}};
inline constexpr EnumName<Target> kTargets[]{
    {Target::Flow, "flow"}, {Target::Gender, "gender"}, {Target::Htn, "htn"}, {Target::Dm, "dm"}};
inline constexpr EnumName<InputSource> kSources[]{
    {InputSource::Auto, "auto"}, {InputSource::Clean, "clean"}, {InputSource::Noisy, "noisy"}};
inline constexpr EnumName<nn::TrainScheme> kSchemes[]{{nn::TrainScheme::CleanToClean, "clean-to-clean"},
                                                      {nn::TrainScheme::NoisyToNoisy, "noisy-to-noisy"},
                                                      {nn::TrainScheme::NoisyToClean, "noisy-to-clean"}};
inline constexpr EnumName<SiteTag> kSites[]{{SiteTag::Site2, "site2"},
                                            {SiteTag::Site3, "site3"},
                                            {SiteTag::Subtract23, "site2-3"},
                                            {SiteTag::Add23, "site2+3"},
                                            {SiteTag::Concat23, "site2|3"}};
inline constexpr EnumName<ClassifierKind> kClassifiers[]{
    {ClassifierKind::Svm, "svm"}, {ClassifierKind::Knn, "knn"}, {ClassifierKind::Gbt, "gbt"}};
inline constexpr EnumName<nn::Arch> kArchs[]{{nn::Arch::Dense, "dense"}, {nn::Arch::Conv1D, "conv1d"}};
inline constexpr EnumName<Multiclass> kMulticlass[]{{Multiclass::OneVsRest, "ovr"}, {Multiclass::OneVsOne, "ovo"}};

template <typename E, std::size_t N>
const char* name_of(const EnumName<E> (&table)[N], E v) {
  for (const auto& e : table)
    if (e.value == v) return e.name;
  return "?";
}

template <typename E, std::size_t N>
E parse_enum(const EnumName<E> (&table)[N], const std::string& s, const char* what) {
  for (const auto& e : table)
    if (s == e.name) return e.value;
  std::string allowed;
  for (const auto& e : table) allowed += std::string(allowed.empty() ? "" : ", ") + e.name;
  throw ConfigError(std::string(what) + ": unknown value '" + s + "' (expected one of " + allowed + ")");
}

}  // namespace detail

inline const char* to_string(FeatureView v) { return detail::name_of(detail::kViews, v); }
inline const char* to_string(Target t) { return detail::name_of(detail::kTargets, t); }
inline const char* to_string(InputSource s) { return detail::name_of(detail::kSources, s); }
inline const char* site_name(SiteTag s) { return detail::name_of(detail::kSites, s); }
inline const char* arch_name(nn::Arch a) { return detail::name_of(detail::kArchs, a); }

// ---------------------------------------------------------------------------
// Config tree <-> struct

inline nlohmann::json to_json(const PipelineConfig& c) {
  using nlohmann::json;
  using detail::name_of;
  return json{
      {"paths", {{"cohort", c.cohort}, {"workdir", c.workdir}}},
      {"feature",
       {{"level", c.level},
        {"view", name_of(detail::kViews, c.view)},
        {"wavelet", c.wavelet},
        {"stft_window", c.stft.window_len},
        {"stft_hop", c.stft.hop}}},
      {"preprocess",
       {{"segment_seconds", c.preprocess.segment_seconds},
        {"rms_window_seconds", c.preprocess.rms_window_seconds},
        {"silence_fraction", c.preprocess.silence_fraction}}},
      {"augment", {{"snr_db", c.snr_db}}},
      {"pretrain",
       {{"scheme", name_of(detail::kSchemes, c.scheme)},
        {"architecture", c.arch ? name_of(detail::kArchs, *c.arch) : "auto"},
        {"widths", c.widths},
        {"filters", c.filters},
        {"kernel", c.kernel},
        {"leaky_slope", c.leaky_slope},
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"learning_rate", c.learning_rate},
        {"test_fraction", c.pretrain_test_fraction}}},
      {"downstream",
       {{"site_combination", name_of(detail::kSites, c.site)},
        {"target", name_of(detail::kTargets, c.target)},
        {"inputs", name_of(detail::kSources, c.inputs)},
        {"classifier", name_of(detail::kClassifiers, c.classifier)},
        {"svm",
         {{"C", c.svm.C},
          {"gamma", c.svm.gamma},
          {"multiclass", name_of(detail::kMulticlass, c.svm.multiclass)},
          {"tolerance", c.svm.tolerance},
          {"max_iter", c.svm.max_iter}}},
        {"knn", {{"k", c.knn_k}}},
        {"gbt",
         {{"trees", c.gbt.n_trees},
          {"learning_rate", c.gbt.learning_rate},
          {"max_depth", c.gbt.max_depth},
          {"min_leaf", c.gbt.min_samples_leaf},
          {"l2", c.gbt.l2}}},
        {"condensed_dim", c.condensed_dim},
        {"fusion", c.fusion},
        {"n_runs", c.n_runs},
        {"train_fraction", c.train_fraction}}},
      {"seed", c.seed}};
}

namespace detail {

// Every key of `given` must exist in `schema`; nested objects recurse.
inline void check_keys(const nlohmann::json& given, const nlohmann::json& schema, const std::string& prefix) {
  if (!given.is_object()) throw ConfigError("config: '" + prefix + "' must be an object");
  for (const auto& [key, value] : given.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!schema.contains(key)) throw ConfigError("config: unknown key '" + path + "'");
    if (schema[key].is_object()) check_keys(value, schema[key], path);
  }
}

inline void merge_into(nlohmann::json& base, const nlohmann::json& patch) {
  for (const auto& [key, value] : patch.items()) {
    if (value.is_object() && base.contains(key) && base[key].is_object()) merge_into(base[key], value);
    else base[key] = value;
  }
}

}  // namespace detail

// Builds a config from defaults overlaid with `tree`. Unknown keys, wrong
// types and out-of-range values are config errors.
inline PipelineConfig config_from_json(const nlohmann::json& tree) {
  using detail::parse_enum;
  const PipelineConfig defaults;
  nlohmann::json j = to_json(defaults);
  detail::check_keys(tree, j, "");
  detail::merge_into(j, tree);
  PipelineConfig c;
  try {
    c.cohort = j["paths"]["cohort"].get<std::string>();
    c.workdir = j["paths"]["workdir"].get<std::string>();
    const auto& f = j["feature"];
    c.level = f["level"].get<int>();
    c.view = parse_enum(detail::kViews, f["view"].get<std::string>(), "feature.view");
    c.wavelet = f["wavelet"].get<std::string>();
    c.stft.window_len = f["stft_window"].get<std::size_t>();
    c.stft.hop = f["stft_hop"].get<std::size_t>();
    const auto& pp = j["preprocess"];
    c.preprocess.segment_seconds = pp["segment_seconds"].get<double>();
    c.preprocess.rms_window_seconds = pp["rms_window_seconds"].get<double>();
    c.preprocess.silence_fraction = pp["silence_fraction"].get<double>();
    c.snr_db = j["augment"]["snr_db"].get<std::vector<double>>();
    const auto& pt = j["pretrain"];
    c.scheme = parse_enum(detail::kSchemes, pt["scheme"].get<std::string>(), "pretrain.scheme");
    const auto arch = pt["architecture"].get<std::string>();
    if (arch == "auto") c.arch.reset();
    else c.arch = parse_enum(detail::kArchs, arch, "pretrain.architecture");
    c.widths = pt["widths"].get<std::vector<int>>();
    c.filters = pt["filters"].get<std::vector<int>>();
    c.kernel = pt["kernel"].get<int>();
    c.leaky_slope = pt["leaky_slope"].get<double>();
    c.epochs = pt["epochs"].get<int>();
    c.batch_size = pt["batch_size"].get<int>();
    c.learning_rate = pt["learning_rate"].get<double>();
    c.pretrain_test_fraction = pt["test_fraction"].get<double>();
    const auto& d = j["downstream"];
    c.site = parse_enum(detail::kSites, d["site_combination"].get<std::string>(), "downstream.site_combination");
    c.target = parse_enum(detail::kTargets, d["target"].get<std::string>(), "downstream.target");
    c.inputs = parse_enum(detail::kSources, d["inputs"].get<std::string>(), "downstream.inputs");
    c.classifier = parse_enum(detail::kClassifiers, d["classifier"].get<std::string>(), "downstream.classifier");
    c.svm.C = d["svm"]["C"].get<double>();
    c.svm.gamma = d["svm"]["gamma"].get<double>();
    c.svm.multiclass = parse_enum(detail::kMulticlass, d["svm"]["multiclass"].get<std::string>(), "downstream.svm.multiclass");
    c.svm.tolerance = d["svm"]["tolerance"].get<double>();
    c.svm.max_iter = d["svm"]["max_iter"].get<long>();
    c.knn_k = d["knn"]["k"].get<int>();
    c.gbt.n_trees = d["gbt"]["trees"].get<int>();
    c.gbt.learning_rate = d["gbt"]["learning_rate"].get<double>();
    c.gbt.max_depth = d["gbt"]["max_depth"].get<int>();
    c.gbt.min_samples_leaf = d["gbt"]["min_leaf"].get<int>();
    c.gbt.l2 = d["gbt"]["l2"].get<double>();
    c.condensed_dim = d["condensed_dim"].get<int>();
    c.fusion = d["fusion"].get<bool>();
    c.n_runs = d["n_runs"].get<int>();
    c.train_fraction = d["train_fraction"].get<double>();
    c.seed = j["seed"].get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline void validate(const PipelineConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
  if (c.level < 0 || c.level > 3) fail("feature.level must be 0..3, got " + std::to_string(c.level));
  if (c.level > 0) (void)make_wavelet(c.wavelet);
  if (c.preprocess.segment_seconds <= 0.0 || c.preprocess.rms_window_seconds <= 0.0) fail("preprocess durations must be positive");
  if (c.preprocess.silence_fraction < 0.0 || c.preprocess.silence_fraction >= 1.0) fail("preprocess.silence_fraction must be in [0,1)");
  if (c.segment_samples() % (std::size_t{1} << c.level) != 0) fail("segment length must be divisible by 2^level");
  if (c.stft.window_len < 2 || c.stft.hop == 0 || c.stft.hop > c.stft.window_len) fail("bad STFT window/hop");
  if (c.view == FeatureView::Stft && (c.segment_samples() >> c.level) < c.stft.window_len) fail("STFT window longer than the level signal");
  if (c.snr_db.size() != 2) fail("augment.snr_db needs exactly two levels");
  if (c.widths.empty() || c.filters.empty()) fail("pretrain widths/filters must be non-empty");
  for (int w : c.widths)
    if (w < 1) fail("pretrain.widths must be positive");
  for (int f : c.filters)
    if (f < 1) fail("pretrain.filters must be positive");
  if (c.kernel < 1 || c.kernel % 2 == 0) fail("pretrain.kernel must be odd and positive");
  if (!(c.leaky_slope > 0.0 && c.leaky_slope < 1.0)) fail("pretrain.leaky_slope must be in (0,1)");
  if (c.epochs < 0) fail("pretrain.epochs must be >= 0");
  if (c.batch_size < 1) fail("pretrain.batch_size must be >= 1");
  if (!(c.learning_rate > 0.0)) fail("pretrain.learning_rate must be positive");
  if (!(c.pretrain_test_fraction > 0.0 && c.pretrain_test_fraction < 1.0)) fail("pretrain.test_fraction must be in (0,1)");
  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0)) fail("downstream.train_fraction must be in (0,1)");
  if (c.n_runs < 1) fail("downstream.n_runs must be >= 1");
  if (c.condensed_dim < 0) fail("downstream.condensed_dim must be >= 0");
  if (!(c.svm.C > 0.0)) fail("downstream.svm.C must be positive");
  if (c.knn_k < 1) fail("downstream.knn.k must be >= 1");
  if (c.gbt.n_trees < 1 || c.gbt.max_depth < 1 || c.gbt.min_samples_leaf < 1 || !(c.gbt.learning_rate > 0.0) || c.gbt.l2 < 0.0)
    fail("bad downstream.gbt settings");
}

// Sets a dotted key ("pretrain.epochs") from command-line text. The text is
// read as JSON when it parses, otherwise as a string.
inline void set_config_value(nlohmann::json& tree, const std::string& dotted, const std::string& text) {
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }
  nlohmann::json* node = &tree;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("config: malformed key '" + dotted + "'");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    if (!node->contains(key)) (*node)[key] = nlohmann::json::object();
    node = &(*node)[key];
    start = dot + 1;
  }
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string config_hash(const PipelineConfig& c) { return hex64(fnv1a(to_json(c).dump())); }

// Hash over what determines a pretrained model.
inline std::string pretrain_hash(const PipelineConfig& c) {
  auto j = to_json(c);
  nlohmann::json sub{{"cohort", j["paths"]["cohort"]}, {"feature", j["feature"]},      {"preprocess", j["preprocess"]},
                     {"augment", j["augment"]},        {"pretrain", j["pretrain"]},    {"seed", j["seed"]}};
  sub["pretrain"]["architecture"] = arch_name(c.resolved_arch());
  return hex64(fnv1a(sub.dump()));
}

// ---------------------------------------------------------------------------
// Cohort preparation

struct PreparedPatient {
  PatientRecord patient;
  Recording site2;
  Recording site3;
};

struct PreparedCohort {
  std::vector<PreparedPatient> patients;
  std::vector<std::string> exclusions;
};

inline std::filesystem::path cohort_metadata_path(const PipelineConfig& c) {
  return std::filesystem::path(c.cohort) / kCohortMetadataName;
}

// Loads the cohort and applies trimming, segmentation and normalization to
// both sites. A recording that cannot be preprocessed excludes its patient.
inline PreparedCohort prepare_cohort(const PipelineConfig& c, std::ostream* log = &std::cerr) {
  auto loaded = load_cohort(cohort_metadata_path(c), c.cohort, log);
  PreparedCohort out;
  out.exclusions = loaded.exclusions;
  for (auto& e : loaded.entries) {
    try {
      PreparedPatient p{e.patient, preprocess(e.site2, c.preprocess), preprocess(e.site3, c.preprocess)};
      out.patients.push_back(std::move(p));
    } catch (const PreprocessError& err) {
      out.exclusions.push_back(e.patient.patient_id + ": " + err.what());
      if (log) *log << "excluded patient " << e.patient.patient_id << ": " << err.what() << '\n';
    }
  }
  if (out.patients.empty()) throw DataError("no patient survived preprocessing");
  return out;
}

struct PatientSplit {
  std::vector<std::size_t> train;  // indices into PreparedCohort::patients
  std::vector<std::size_t> test;
};

// Patient-level pretraining split, stratified by flow class.
inline PatientSplit pretrain_split(const PreparedCohort& cohort, double test_fraction, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(3);
  for (std::size_t i = 0; i < cohort.patients.size(); ++i)
    by_class[static_cast<std::size_t>(cohort.patients[i].patient.flow_class())].push_back(i);
  PatientSplit s;
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    auto& ids = by_class[k];
    Rng rng(derive_seed(seed, fnv1a("pretrain-split"), k));
    shuffle_in_place(ids, rng);
    auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(ids.size())));
    if (ids.size() >= 2) n_test = std::clamp<std::size_t>(n_test, 1, ids.size() - 1);
    s.test.insert(s.test.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));
    s.train.insert(s.train.end(), ids.begin() + static_cast<std::ptrdiff_t>(n_test), ids.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

// ---------------------------------------------------------------------------
// Features

// Low-pass coefficients at `level` (level 0: the signal itself), truncated or
// zero-padded to segment_samples / 2^level.
inline std::vector<double> level_signal(std::span<const double> samples, const PipelineConfig& c) {
  std::vector<double> out;
  if (c.level == 0) out.assign(samples.begin(), samples.end());
  else out = dwt_decompose(samples, c.level, c.wavelet).low(c.level);
  out.resize(c.segment_samples() >> c.level, 0.0);
  return out;
}

struct InputLayout {
  nn::Arch arch = nn::Arch::Dense;
  int channels = 1;
  int length = 0;  // dense: feature width; conv: padded temporal length
  int frames = 0;  // stft frames before padding

  int width() const { return channels * length; }
};

inline InputLayout input_layout(const PipelineConfig& c) {
  InputLayout l;
  l.arch = c.resolved_arch();
  const std::size_t n = c.segment_samples() >> c.level;
  int channels = 1, length = 0;
  switch (c.view) {
    case FeatureView::Waveform: length = static_cast<int>(n); break;
    case FeatureView::Fft: length = static_cast<int>(n / 2 + 1); break;
    case FeatureView::Stft:
      channels = static_cast<int>(c.stft.window_len / 2 + 1);
      length = static_cast<int>(stft_frame_count(n, c.stft));
      break;
  }
  l.frames = length;
  if (l.arch == nn::Arch::Dense) {
    l.channels = 1;
    l.length = channels * length;
  } else {
    const int m = 1 << c.filters.size();
    l.channels = channels;
    l.length = (length + m - 1) / m * m;
  }
  return l;
}

inline nn::ArchSpec arch_spec(const PipelineConfig& c) {
  const auto l = input_layout(c);
  if (l.arch == nn::Arch::Dense) return nn::dense_spec(l.length, c.widths, c.leaky_slope);
  auto s = nn::conv_spec(l.channels, l.length, c.filters, c.kernel);
  s.leaky_slope = c.leaky_slope;
  return s;
}

// Model input for one recording, laid out for the resolved architecture
// (conv inputs are channel-major, STFT bins as channels).
inline std::vector<float> feature_vector(std::span<const double> samples, const PipelineConfig& c) {
  const auto sig = level_signal(samples, c);
  const auto layout = input_layout(c);
  std::vector<float> out(static_cast<std::size_t>(layout.width()), 0.0f);
  switch (c.view) {
    case FeatureView::Waveform:
      for (std::size_t i = 0; i < sig.size(); ++i) out[i] = static_cast<float>(sig[i]);
      break;
    case FeatureView::Fft: {
      const auto t = fft_magnitude(sig, c.level);
      for (std::size_t i = 0; i < t.data.size(); ++i) out[i] = static_cast<float>(t.data[i]);
      break;
    }
    case FeatureView::Stft: {
      const auto t = stft_magnitude(sig, c.stft, c.level);
      for (std::size_t r = 0; r < t.rows; ++r)
        for (std::size_t b = 0; b < t.cols; ++b) {
          const std::size_t idx = layout.arch == nn::Arch::Dense ? r * t.cols + b : b * static_cast<std::size_t>(layout.length) + r;
          out[idx] = static_cast<float>(t.at(r, b));
        }
      break;
    }
  }
  return out;
}

inline void put_column(nn::Mat<float>& m, Eigen::Index col, const std::vector<float>& v) {
  m.col(col) = Eigen::Map<const Eigen::VectorXf>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::vector<NoisyVariant> noisy_variants(const Recording& clean, const PipelineConfig& c) {
  return augment_recording(clean, c.snr_db, derive_seed(c.seed, fnv1a("augment")));
}

// ---------------------------------------------------------------------------
// Pretraining

inline nn::TrainingSet<float> build_training_set(const PreparedCohort& cohort, std::span<const std::size_t> patients,
                                                 const PipelineConfig& c) {
  const auto width = static_cast<Eigen::Index>(input_layout(c).width());
  const bool noisy_inputs = c.scheme != nn::TrainScheme::CleanToClean;
  const Eigen::Index n_clean = static_cast<Eigen::Index>(patients.size() * 2);
  const Eigen::Index n_noisy = noisy_inputs ? n_clean * static_cast<Eigen::Index>(kAllNoiseKinds.size() * c.snr_db.size()) : 0;

  nn::TrainingSet<float> set;
  if (!noisy_inputs) {
    set.inputs.resize(width, n_clean);
    Eigen::Index col = 0;
    for (auto p : patients)
      for (const auto* rec : {&cohort.patients[p].site2, &cohort.patients[p].site3})
        put_column(set.inputs, col++, feature_vector(rec->samples, c));
    return set;
  }
  set.inputs.resize(width, n_noisy);
  if (c.scheme == nn::TrainScheme::NoisyToClean) set.targets.resize(width, n_clean);
  Eigen::Index col = 0, clean_col = 0;
  for (auto p : patients) {
    for (const auto* rec : {&cohort.patients[p].site2, &cohort.patients[p].site3}) {
      if (c.scheme == nn::TrainScheme::NoisyToClean) put_column(set.targets, clean_col, feature_vector(rec->samples, c));
      for (const auto& v : noisy_variants(*rec, c)) {
        put_column(set.inputs, col++, feature_vector(v.samples, c));
        set.target_index.push_back(static_cast<std::size_t>(clean_col));
      }
      ++clean_col;
    }
  }
  if (c.scheme != nn::TrainScheme::NoisyToClean) set.target_index.clear();
  return set;
}

// Same settings as pretrain_hash minus the cohort path, so a model does not
// depend on where the cohort lives.
inline std::uint64_t pretrain_seed(const PipelineConfig& c) {
  PipelineConfig anywhere = c;
  anywhere.cohort.clear();
  return derive_seed(c.seed, fnv1a("pretrain"), fnv1a(pretrain_hash(anywhere)));
}

struct PretrainResult {
  nn::AutoencoderModel<float> model;
  nn::TrainResult training;
  PatientSplit split;
  std::size_t training_samples = 0;
};

inline PretrainResult pretrain(const PreparedCohort& cohort, const PipelineConfig& c, std::ostream* log = &std::cerr) {
  PretrainResult r;
  r.split = pretrain_split(cohort, c.pretrain_test_fraction, c.seed);
  const auto set = build_training_set(cohort, r.split.train, c);
  r.training_samples = set.size();
  const auto seed = pretrain_seed(c);
  r.model = nn::make_autoencoder<float>(arch_spec(c), derive_seed(seed, fnv1a("init")));
  if (log)
    *log << "pretrain " << nn::to_string(c.scheme) << " level " << c.level << " " << to_string(c.view) << " ("
         << arch_name(c.resolved_arch()) << ", " << r.model.param_count() << " params) on " << set.size() << " samples, "
         << c.epochs << " epochs\n";
  nn::TrainOptions opt{c.epochs, c.batch_size, c.learning_rate, derive_seed(seed, fnv1a("shuffle"))};
  r.training = nn::train(r.model, set, c.scheme, opt, log);
  return r;
}

inline std::filesystem::path checkpoint_path(const PipelineConfig& c) {
  return std::filesystem::path(c.workdir) / "checkpoints" /
         (std::string(nn::to_string(c.scheme)) + "_L" + std::to_string(c.level) + "_" + to_string(c.view) + "_" +
          arch_name(c.resolved_arch()) + "_" + pretrain_hash(c) + ".ckpt");
}

inline nlohmann::json provenance_json(const PipelineConfig& c) {
  return {{"config_hash", config_hash(c)}, {"seed", c.seed}};
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

inline void save_pretrained(const PipelineConfig& c, const PretrainResult& r) {
  const auto path = checkpoint_path(c);
  std::filesystem::create_directories(path.parent_path());
  auto meta = provenance_json(c);
  meta["pretrain_hash"] = pretrain_hash(c);
  meta["config"] = to_json(c);
  nn::save_checkpoint(path, r.model, meta.dump());
  meta.erase("config");
  meta["training_samples"] = r.training_samples;
  meta["loss_curve"] = r.training.loss_curve;
  write_json(std::filesystem::path(path).replace_extension(".loss.json"), meta);
}

// Loads the checkpoint for `c`, training it first when allowed.
inline nn::AutoencoderModel<float> obtain_model(const PreparedCohort& cohort, const PipelineConfig& c, bool allow_train,
                                                const std::string& cell, std::ostream* log) {
  const auto path = checkpoint_path(c);
  if (std::filesystem::exists(path)) {
    auto m = nn::load_checkpoint<float>(path);
    if (static_cast<int>(m.input_width()) != input_layout(c).width())
      throw DataError("checkpoint " + path.string() + " does not match the configured feature width");
    return m;
  }
  if (!allow_train)
    throw DataError("cell '" + cell + "': missing checkpoint " + path.string() + " (run `avfdae pretrain` with the cell's " +
                    "scheme/level/view, or allow training)");
  auto r = pretrain(cohort, c, log);
  save_pretrained(c, r);
  return std::move(r.model);
}

// ---------------------------------------------------------------------------
// Latents and downstream sets

// Per-site latents of the pretraining test patients. Clean inputs carry
// variant -1; noisy inputs are numbered 0..13 in augmentation order.
struct SiteLatents {
  std::vector<LatentVector> site2;
  std::vector<LatentVector> site3;
};

inline InputSource resolved_inputs(const PipelineConfig& c) {
  if (c.inputs != InputSource::Auto) return c.inputs;
  return c.scheme == nn::TrainScheme::CleanToClean ? InputSource::Clean : InputSource::Noisy;
}

inline SiteLatents extract_site_latents(const PreparedCohort& cohort, std::span<const std::size_t> patients,
                                        const nn::AutoencoderModel<float>& model, const PipelineConfig& c) {
  const bool noisy = resolved_inputs(c) == InputSource::Noisy;
  const auto width = static_cast<Eigen::Index>(input_layout(c).width());
  SiteLatents out;
  for (int s = 0; s < 2; ++s) {
    std::vector<Provenance> prov;
    std::vector<std::vector<float>> cols;
    for (auto p : patients) {
      const auto& pp = cohort.patients[p];
      const Recording& rec = s == 0 ? pp.site2 : pp.site3;
      Provenance base{pp.patient.patient_id, s == 0 ? SiteTag::Site2 : SiteTag::Site3, c.level, nn::to_string(c.scheme), -1};
      if (!noisy) {
        prov.push_back(base);
        cols.push_back(feature_vector(rec.samples, c));
        continue;
      }
      int k = 0;
      for (const auto& v : noisy_variants(rec, c)) {
        base.variant = k++;
        prov.push_back(base);
        cols.push_back(feature_vector(v.samples, c));
      }
    }
    nn::Mat<float> x(width, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i) put_column(x, static_cast<Eigen::Index>(i), cols[i]);
    (s == 0 ? out.site2 : out.site3) = extract_latents(model, x, prov);
  }
  return out;
}

inline std::vector<LatentVector> combine(const SiteLatents& l, SiteTag site) {
  if (site == SiteTag::Site2) return l.site2;
  if (site == SiteTag::Site3) return l.site3;
  if (l.site2.size() != l.site3.size()) throw DataError("site latent counts differ");
  const SiteOp op = site == SiteTag::Subtract23 ? SiteOp::Subtract : site == SiteTag::Add23 ? SiteOp::Add : SiteOp::Concat;
  std::vector<LatentVector> out;
  out.reserve(l.site2.size());
  for (std::size_t i = 0; i < l.site2.size(); ++i) out.push_back(combine_sites(l.site2[i], l.site3[i], op));
  return out;
}

inline int target_label(const PatientRecord& p, Target t) {
  switch (t) {
    case Target::Flow: return static_cast<int>(p.flow_class());
    case Target::Gender: return p.gender == Gender::Male ? 1 : 0;
    case Target::Htn: return p.htn ? 1 : 0;
    case Target::Dm: return p.dm ? 1 : 0;
  }
  return 0;
}

inline int target_classes(Target t) { return t == Target::Flow ? 3 : 2; }

inline Dataset make_dataset(std::span<const LatentVector> latents, const PreparedCohort& cohort, Target target) {
  std::map<std::string, const PatientRecord*> by_id;
  for (const auto& p : cohort.patients) by_id[p.patient.patient_id] = &p.patient;
  Dataset d;
  d.classes = target_classes(target);
  d.x = to_matrix(latents);
  for (const auto& l : latents) {
    const auto it = by_id.find(l.provenance.patient_id);
    if (it == by_id.end()) throw DataError("latent for unknown patient " + l.provenance.patient_id);
    d.y.push_back(target_label(*it->second, target));
    d.group.push_back(l.provenance.patient_id);
    d.patient.push_back(*it->second);
  }
  return d;
}

inline ExperimentConfig experiment_config(const PipelineConfig& c) {
  ExperimentConfig e;
  e.classifier = c.classifier;
  e.svm = c.svm;
  e.gbt = c.gbt;
  e.knn_k = c.knn_k;
  e.n_runs = c.n_runs;
  e.seed = derive_seed(c.seed, fnv1a("downstream"));
  e.train_fraction = c.train_fraction;
  if (c.condensed_dim > 0) e.pca_dim = c.condensed_dim;
  e.fuse_demographics = c.fusion;
  return e;
}

// Pretrained models and latents reused across cells with equal pretraining.
class PipelineCache {
 public:
  const SiteLatents& latents(const PreparedCohort& cohort, const PipelineConfig& c, bool allow_train, const std::string& cell,
                             std::ostream* log) {
    const std::string key = pretrain_hash(c) + "/" + to_string(resolved_inputs(c));
    auto it = latents_.find(key);
    if (it != latents_.end()) return it->second;
    const auto model = obtain_model(cohort, c, allow_train, cell, log);
    const auto split = pretrain_split(cohort, c.pretrain_test_fraction, c.seed);
    return latents_.emplace(key, extract_site_latents(cohort, split.test, model, c)).first->second;
  }

 private:
  std::map<std::string, SiteLatents> latents_;
};

inline MetricReport run_cell(const PreparedCohort& cohort, const PipelineConfig& c, PipelineCache& cache, bool allow_train,
                             const std::string& cell, std::ostream* log = &std::cerr) {
  const auto& l = cache.latents(cohort, c, allow_train, cell, log);
  const auto latents = combine(l, c.site);
  const auto data = make_dataset(latents, cohort, c.target);
  return run_experiment(data, experiment_config(c));
}

inline nlohmann::json cell_report_json(const std::string& cell, const PipelineConfig& c, const MetricReport& r) {
  auto j = provenance_json(c);
  j["cell"] = cell;
  j["config"] = to_json(c);
  j["metrics"] = to_json(r);
  if (c.fusion && !r.feature_importance.empty()) {
    nlohmann::json imp = nlohmann::json::object();
    const auto names = fused_feature_names(r.feature_importance.size() - kDemographicWidth);
    for (std::size_t i = 0; i < names.size(); ++i) imp[names[i]] = r.feature_importance[i];
    j["metrics"]["feature_importance_named"] = imp;
  }
  return j;
}

// ---------------------------------------------------------------------------
// Experiment matrix presets

struct MatrixCell {
  std::string name;
  std::string block;
  std::string column;
  PipelineConfig config;
};

struct MatrixPreset {
  std::string name;
  std::string title;
  std::vector<MatrixCell> cells;
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"table2", "table3", "table5b", "table5c", "table5d", "table5e"};
  return names;
}

inline std::string level_column(int level) { return level == 0 ? "Original" : "w_L" + std::to_string(level); }

// Cells derive from `base`; only the varied settings change. Tables 5b-e
// start from the noisy-to-clean w_L1 waveform model with site 2-3
// subtraction.
inline MatrixPreset make_preset(const std::string& name, const PipelineConfig& base) {
  MatrixPreset p;
  p.name = name;
  PipelineConfig reference = base;
  reference.scheme = nn::TrainScheme::NoisyToClean;
  reference.level = 1;
  reference.view = FeatureView::Waveform;
  reference.arch.reset();
  reference.site = SiteTag::Subtract23;
  reference.target = Target::Flow;
  reference.inputs = InputSource::Auto;
  reference.classifier = ClassifierKind::Svm;
  reference.condensed_dim = 0;
  reference.fusion = false;

  if (name == "table2") {
    p.title = "Effect of noise mixing and autoencoder scheme (site 2-3, waveform)";
    const std::pair<nn::TrainScheme, const char*> schemes[]{{nn::TrainScheme::CleanToClean, "AE waveform (clean to clean)"},
                                                           {nn::TrainScheme::NoisyToNoisy, "AE waveform (noisy to noisy)"},
                                                           {nn::TrainScheme::NoisyToClean, "DAE waveform (noisy to clean)"}};
    for (const auto& [scheme, block] : schemes)
      for (int level = 0; level <= 3; ++level) {
        auto c = reference;
        c.scheme = scheme;
        c.level = level;
        p.cells.push_back({std::string(nn::to_string(scheme)) + "_L" + std::to_string(level), block, level_column(level), c});
      }
  } else if (name == "table3") {
    p.title = "Feature views of the DAE (site 2-3)";
    const std::pair<FeatureView, const char*> views[]{{FeatureView::Fft, "DAE + FFT"}, {FeatureView::Stft, "DAE + STFT"}};
    for (const auto& [view, block] : views)
      for (int level = 0; level <= 3; ++level) {
        auto c = reference;
        c.view = view;
        c.level = level;
        p.cells.push_back({std::string(to_string(view)) + "_L" + std::to_string(level), block, level_column(level), c});
      }
  } else if (name == "table5b") {
    p.title = "Site representations (DAE, w_L1)";
    const std::pair<SiteTag, const char*> sites[]{{SiteTag::Site2, "Site 2"}, {SiteTag::Site3, "Site 3"}, {SiteTag::Subtract23, "Site 2-3"}};
    for (const auto& [site, column] : sites) {
      auto c = reference;
      c.site = site;
      p.cells.push_back({site_name(site), "Site combination", column, c});
    }
  } else if (name == "table5c") {
    p.title = "Classification of patient information (DAE, w_L1, site 2-3)";
    const std::pair<Target, const char*> targets[]{{Target::Gender, "Gender"}, {Target::Htn, "HTN"}, {Target::Dm, "DM"}};
    for (const auto& [target, column] : targets) {
      auto c = reference;
      c.target = target;
      p.cells.push_back({to_string(target), "Target", column, c});
    }
  } else if (name == "table5d") {
    p.title = "PCA condensation (DAE, w_L1, site 2-3)";
    for (int dim : {5, 4, 2}) {
      auto c = reference;
      c.condensed_dim = dim;
      p.cells.push_back({"dim" + std::to_string(dim), "Condensed dimensionality", "dim = " + std::to_string(dim), c});
    }
  } else if (name == "table5e") {
    p.title = "dim = 2 concatenated with demographics (DAE, w_L1, site 2-3)";
    const std::pair<ClassifierKind, const char*> classifiers[]{
        {ClassifierKind::Svm, "SVM"}, {ClassifierKind::Knn, "KNN"}, {ClassifierKind::Gbt, "GBT"}};
    for (const auto& [k, column] : classifiers) {
      auto c = reference;
      c.condensed_dim = 2;
      c.fusion = true;
      c.classifier = k;
      p.cells.push_back({to_string(k), "Classifier", column, c});
    }
  } else {
    std::string allowed;
    for (const auto& n : preset_names()) allowed += (allowed.empty() ? "" : ", ") + n;
    throw ConfigError("unknown preset '" + name + "' (expected one of " + allowed + ")");
  }
  return p;
}

inline std::filesystem::path preset_dir(const PipelineConfig& base, const std::string& preset) {
  return std::filesystem::path(base.workdir) / "reports" / preset;
}

// Renders the Markdown summary from a manifest and the cell reports it names.
inline std::string render_matrix_summary(const nlohmann::json& manifest, const std::filesystem::path& dir) {
  std::ostringstream out;
  out << "## " << manifest.at("title").get<std::string>() << "\n\n"
      << "config hash `" << manifest.at("config_hash").get<std::string>() << "`, seed "
      << manifest.at("seed").get<std::uint64_t>() << "\n\n";
  std::vector<std::string> blocks;
  for (const auto& cell : manifest.at("cells")) {
    const auto b = cell.at("block").get<std::string>();
    if (std::find(blocks.begin(), blocks.end(), b) == blocks.end()) blocks.push_back(b);
  }
  for (const auto& b : blocks) {
    std::vector<std::string> columns;
    std::vector<MetricReport> reports;
    std::vector<bool> ok;
    for (const auto& cell : manifest.at("cells")) {
      if (cell.at("block").get<std::string>() != b) continue;
      columns.push_back(cell.at("column").get<std::string>());
      const bool good = cell.at("status").get<std::string>() == "ok";
      ok.push_back(good);
      if (good) {
        std::ifstream in(dir / cell.at("report").get<std::string>());
        if (!in) throw DataError("missing cell report " + (dir / cell.at("report").get<std::string>()).string());
        reports.push_back(metric_report_from_json(nlohmann::json::parse(in).at("metrics")));
      } else {
        reports.emplace_back();
      }
    }
    std::vector<const MetricReport*> ptrs;
    for (std::size_t i = 0; i < reports.size(); ++i) ptrs.push_back(ok[i] ? &reports[i] : nullptr);
    out << render_markdown_table(b, columns, ptrs) << '\n';
  }
  return out.str();
}

struct MatrixOutcome {
  nlohmann::json manifest;
  int failures = 0;
  ExitCode first_failure = ExitCode::Ok;
};

// Runs every cell in order. A failing cell is recorded in the manifest and
// the remaining cells still run.
inline MatrixOutcome run_matrix(const std::string& preset_name, const PipelineConfig& base, bool allow_train,
                                std::ostream* log = &std::cerr) {
  validate(base);
  const auto preset = make_preset(preset_name, base);
  const auto dir = preset_dir(base, preset_name);
  std::filesystem::create_directories(dir);
  const auto cohort = prepare_cohort(base, log);
  PipelineCache cache;
  MatrixOutcome out;
  auto& m = out.manifest;
  m = provenance_json(base);
  m["preset"] = preset.name;
  m["title"] = preset.title;
  m["cells"] = nlohmann::json::array();
  for (const auto& cell : preset.cells) {
    nlohmann::json entry{{"name", cell.name}, {"block", cell.block}, {"column", cell.column},
                         {"config_hash", config_hash(cell.config)}};
    if (log) *log << "[" << preset.name << "] cell " << cell.name << '\n';
    try {
      validate(cell.config);
      const auto report = run_cell(cohort, cell.config, cache, allow_train, cell.name, log);
      const std::string file = cell.name + ".json";
      write_json(dir / file, cell_report_json(cell.name, cell.config, report));
      entry["status"] = "ok";
      entry["report"] = file;
    } catch (const Error& e) {
      entry["status"] = "failed";
      entry["error"] = e.what();
      if (out.failures++ == 0) out.first_failure = e.code();
      if (log) *log << "  cell " << cell.name << " failed: " << e.what() << '\n';
    }
    m["cells"].push_back(entry);
  }
  write_json(dir / "manifest.json", m);
  write_text(dir / "summary.md", render_matrix_summary(m, dir));
  return out;
}

}  // namespace avfdae
