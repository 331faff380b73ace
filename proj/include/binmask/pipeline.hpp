// Copyright 2026 The binmask Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

// Batch pipeline over a corpus: scene synthesis, target masks, features,
// training, enhancement and evaluation. Artifacts live under one output
// directory and are tracked by a JSON manifest with content and config hashes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "binmask/audio_io.hpp"
#include "binmask/binary_io.hpp"
#include "binmask/enhance.hpp"
#include "binmask/error.hpp"
#include "binmask/features.hpp"
#include "binmask/metrics.hpp"
#include "binmask/neural.hpp"
#include "binmask/spatial.hpp"
#include "binmask/synthetic.hpp"
#include "binmask/target_mask.hpp"
#include "json.hpp"

namespace binmask {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Run configuration.

struct CorpusConfig {
  std::string dir;            // mono WAV files, taken in name order
  int synthetic_count = 0;    // >0: generate speech-like utterances instead
  double synthetic_seconds = 2.0;
  double speech_level_db = -26.0;
};

struct SceneGrid {
  std::vector<double> source_azimuths{30.0};
  double noise_azimuth = 0.0;
  std::vector<double> snrs_db{0.0};
  std::vector<std::string> noise_kinds{"white"};
};

enum class MaskSource { model, oracle, identity };

struct NetworkConfig {
  std::vector<int> hidden{500, 500, 500, 500};
  double dropout = 0.2;
};

struct RunConfig {
  CorpusConfig corpus;
  std::string hrir_dir;  // empty: synthetic spherical-head responses
  std::string output_dir = "binmask_out";
  std::uint64_t seed = 1;
  StftConfig stft;
  SceneGrid scenes;
  TargetMaskConfig target_mask;
  FeatureConfig features;
  NetworkConfig network;
  TrainConfig train;
  OmlsaConfig enhance;
  MaskSource mask_source = MaskSource::model;
  MetricConfig evaluate;
  bool plots = true;
};

namespace detail {

template <class E>
struct EnumNames {
  static const std::vector<std::pair<E, const char*>>& get();
};

template <>
inline const std::vector<std::pair<MaskSource, const char*>>& EnumNames<MaskSource>::get() {
  static const std::vector<std::pair<MaskSource, const char*>> v{
      {MaskSource::model, "model"}, {MaskSource::oracle, "oracle"}, {MaskSource::identity, "identity"}};
  return v;
}
template <>
inline const std::vector<std::pair<ReferenceChannel, const char*>>& EnumNames<ReferenceChannel>::get() {
  static const std::vector<std::pair<ReferenceChannel, const char*>> v{
      {ReferenceChannel::better_ear, "better-ear"},
      {ReferenceChannel::average, "average"},
      {ReferenceChannel::left, "left"}};
  return v;
}
template <>
inline const std::vector<std::pair<SppMode, const char*>>& EnumNames<SppMode>::get() {
  static const std::vector<std::pair<SppMode, const char*>> v{{SppMode::direct, "direct"},
                                                              {SppMode::absence_prior, "absence-prior"}};
  return v;
}
template <>
inline const std::vector<std::pair<WeightProvider, const char*>>& EnumNames<WeightProvider>::get() {
  static const std::vector<std::pair<WeightProvider, const char*>> v{
      {WeightProvider::uniform, "uniform"}, {WeightProvider::clean_energy, "clean-energy"}};
  return v;
}
template <>
inline const std::vector<std::pair<LossNormalization, const char*>>& EnumNames<LossNormalization>::get() {
  static const std::vector<std::pair<LossNormalization, const char*>> v{
      {LossNormalization::as_printed, "as-printed"},
      {LossNormalization::sum_weights_only, "sum-weights-only"}};
  return v;
}

template <class E>
const char* enum_name(E e) {
  for (const auto& [v, n] : EnumNames<E>::get())
    if (v == e) return n;
  throw InvalidArgument("unnamed enum value");
}

template <class E>
E enum_from(const std::string& s, const std::string& key) {
  std::string options;
  for (const auto& [v, n] : EnumNames<E>::get()) {
    if (s == n) return v;
    options += options.empty() ? n : std::string(", ") + n;
  }
  throw InvalidArgument("config key '" + key + "': unknown value '" + s + "' (expected " + options + ")");
}

/// Reads keys from one JSON object and rejects any it did not consume.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw InvalidArgument("config key '" + path_ + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw InvalidArgument("config key '" + full(key) + "' has the wrong type: " + j_.at(key).dump());
    }
  }

  template <class E>
  void get_enum(const char* key, E& out) {
    std::string s;
    get(key, s);
    if (j_.contains(key)) out = enum_from<E>(s, full(key));
  }

  std::optional<ObjectReader> child(const char* key) {
    if (!j_.contains(key)) return std::nullopt;
    seen_.insert(key);
    return ObjectReader(j_.at(key), full(key));
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw InvalidArgument("unknown config key '" + full(item.key()) + "'");
  }

  std::string full(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline Json to_json(const RunConfig& c) {
  using detail::enum_name;
  Json j;
  j["corpus"] = {{"dir", c.corpus.dir},
                 {"synthetic_count", c.corpus.synthetic_count},
                 {"synthetic_seconds", c.corpus.synthetic_seconds},
                 {"speech_level_db", c.corpus.speech_level_db}};
  j["hrir_dir"] = c.hrir_dir;
  j["output_dir"] = c.output_dir;
  j["seed"] = c.seed;
  j["stft"] = {{"rate", c.stft.rate}, {"window_ms", c.stft.window_ms}, {"overlap", c.stft.overlap},
               {"fft_len", c.stft.fft_len}};
  j["scenes"] = {{"source_azimuths", c.scenes.source_azimuths},
                 {"noise_azimuth", c.scenes.noise_azimuth},
                 {"snrs_db", c.scenes.snrs_db},
                 {"noise_kinds", c.scenes.noise_kinds}};
  const TargetMaskConfig& t = c.target_mask;
  j["target_mask"] = {{"modulation_frames", t.modulation_frames}, {"lambda", t.lambda},
                      {"beam_width", t.beam_width}, {"silence_range_db", t.silence_range_db},
                      {"weights", enum_name(t.weights)}, {"realizations", t.realizations}};
  const FeatureConfig& f = c.features;
  j["features"] = {{"bands", f.bands},
                   {"target_level_db", f.target_level_db},
                   {"alpha_dd", f.logmmse.alpha_dd},
                   {"xi_min_db", f.logmmse.xi_min_db},
                   {"pitch_f0_min", f.pitch.f0_min},
                   {"pitch_f0_max", f.pitch.f0_max},
                   {"pitch_window_ms", f.pitch.window_ms},
                   {"vssnr_floor_db", f.pitch.floor_db},
                   {"vssnr_ceiling_db", f.pitch.ceiling_db}};
  j["network"] = {{"hidden", c.network.hidden}, {"dropout", c.network.dropout}};
  const TrainConfig& tr = c.train;
  j["train"] = {{"learning_rate", tr.learning_rate}, {"momentum", tr.momentum},
                {"batch", tr.batch},                 {"epochs", tr.epochs},
                {"patience", tr.patience},           {"val_split", tr.val_split},
                {"loss", enum_name(tr.normalization)}, {"max_seconds", tr.max_seconds}};
  const OmlsaConfig& e = c.enhance;
  j["enhance"] = {{"mask_source", enum_name(c.mask_source)},
                  {"g_min_db", db_from_amplitude(e.g_min)},
                  {"alpha_dd", e.alpha_dd},
                  {"xi_min_db", e.xi_min_db},
                  {"p_min", e.p_min},
                  {"p_max", e.p_max},
                  {"reference_channel", enum_name(e.reference)},
                  {"spp_mode", enum_name(e.spp_mode)}};
  j["evaluate"] = {{"weights", enum_name(c.evaluate.weights)},
                   {"ild_activity_range_db", c.evaluate.ild_activity_range_db},
                   {"plots", c.plots}};
  return j;
}

/// Strict parse: every key must be known; missing keys keep their defaults.
inline RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  detail::ObjectReader r(j, "");
  if (auto o = r.child("corpus")) {
    o->get("dir", c.corpus.dir);
    o->get("synthetic_count", c.corpus.synthetic_count);
    o->get("synthetic_seconds", c.corpus.synthetic_seconds);
    o->get("speech_level_db", c.corpus.speech_level_db);
    o->finish();
  }
  r.get("hrir_dir", c.hrir_dir);
  r.get("output_dir", c.output_dir);
  r.get("seed", c.seed);
  if (auto o = r.child("stft")) {
    o->get("rate", c.stft.rate);
    o->get("window_ms", c.stft.window_ms);
    o->get("overlap", c.stft.overlap);
    o->get("fft_len", c.stft.fft_len);
    o->finish();
  }
  if (auto o = r.child("scenes")) {
    o->get("source_azimuths", c.scenes.source_azimuths);
    o->get("noise_azimuth", c.scenes.noise_azimuth);
    o->get("snrs_db", c.scenes.snrs_db);
    o->get("noise_kinds", c.scenes.noise_kinds);
    o->finish();
  }
  if (auto o = r.child("target_mask")) {
    TargetMaskConfig& t = c.target_mask;
    o->get("modulation_frames", t.modulation_frames);
    o->get("lambda", t.lambda);
    o->get("beam_width", t.beam_width);
    o->get("silence_range_db", t.silence_range_db);
    o->get_enum("weights", t.weights);
    o->get("realizations", t.realizations);
    o->finish();
  }
  if (auto o = r.child("features")) {
    FeatureConfig& f = c.features;
    o->get("bands", f.bands);
    o->get("target_level_db", f.target_level_db);
    o->get("alpha_dd", f.logmmse.alpha_dd);
    o->get("xi_min_db", f.logmmse.xi_min_db);
    o->get("pitch_f0_min", f.pitch.f0_min);
    o->get("pitch_f0_max", f.pitch.f0_max);
    o->get("pitch_window_ms", f.pitch.window_ms);
    o->get("vssnr_floor_db", f.pitch.floor_db);
    o->get("vssnr_ceiling_db", f.pitch.ceiling_db);
    o->finish();
  }
  if (auto o = r.child("network")) {
    o->get("hidden", c.network.hidden);
    o->get("dropout", c.network.dropout);
    o->finish();
  }
  if (auto o = r.child("train")) {
    TrainConfig& t = c.train;
    o->get("learning_rate", t.learning_rate);
    o->get("momentum", t.momentum);
    o->get("batch", t.batch);
    o->get("epochs", t.epochs);
    o->get("patience", t.patience);
    o->get("val_split", t.val_split);
    o->get_enum("loss", t.normalization);
    o->get("max_seconds", t.max_seconds);
    o->finish();
  }
  if (auto o = r.child("enhance")) {
    OmlsaConfig& e = c.enhance;
    o->get_enum("mask_source", c.mask_source);
    double g_min_db = db_from_amplitude(e.g_min);
    o->get("g_min_db", g_min_db);
    e.g_min = amplitude_from_db(g_min_db);
    o->get("alpha_dd", e.alpha_dd);
    o->get("xi_min_db", e.xi_min_db);
    o->get("p_min", e.p_min);
    o->get("p_max", e.p_max);
    o->get_enum("reference_channel", e.reference);
    o->get_enum("spp_mode", e.spp_mode);
    o->finish();
  }
  if (auto o = r.child("evaluate")) {
    o->get_enum("weights", c.evaluate.weights);
    o->get("ild_activity_range_db", c.evaluate.ild_activity_range_db);
    o->get("plots", c.plots);
    o->finish();
  }
  r.finish();

  // One STFT and seed everywhere.
  c.target_mask.stft = c.features.stft = c.stft;
  c.evaluate.intelligibility.stft = c.evaluate.segsnr.stft = c.stft;
  c.target_mask.seed = c.seed;
  c.train.seed = c.seed;

  validate(c.stft);
  validate(c.enhance);
  detail::require(!c.output_dir.empty(), "output_dir must not be empty");
  detail::require(c.corpus.synthetic_count >= 0, "corpus.synthetic_count must be >= 0");
  detail::require(c.corpus.synthetic_count > 0 || !c.corpus.dir.empty(),
                  "corpus needs a dir or a synthetic_count");
  detail::require(c.corpus.synthetic_seconds > 0.0, "corpus.synthetic_seconds must be positive");
  detail::require(!c.scenes.source_azimuths.empty() && !c.scenes.snrs_db.empty() &&
                      !c.scenes.noise_kinds.empty(),
                  "scenes needs at least one azimuth, SNR and noise kind");
  for (const auto& k : c.scenes.noise_kinds)
    detail::require(k == "white" || k == "pink", "unknown noise kind '" + k + "'");
  detail::require(c.target_mask.beam_width >= 1, "target_mask.beam_width must be >= 1");
  detail::require(c.target_mask.modulation_frames >= 2, "target_mask.modulation_frames must be >= 2");
  detail::require(c.target_mask.realizations >= 1, "target_mask.realizations must be >= 1");
  detail::require(c.network.dropout >= 0.0 && c.network.dropout < 1.0, "network.dropout must be in [0, 1)");
  for (int h : c.network.hidden) detail::require(h >= 1, "network.hidden sizes must be positive");
  detail::require(c.train.val_split > 0.0 && c.train.val_split < 1.0, "train.val_split must be in (0, 1)");
  return c;
}

/// "a.b.c=value": value parsed as JSON when possible, else taken as a string.
inline void apply_override(Json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw InvalidArgument("override must look like key.path=value: " + assignment);
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  Json* node = &j;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    Json& next = (*node)[parts[i]];
    if (next.is_null()) next = Json::object();
    node = &next;
  }
  (*node)[parts.back()] = value;
}

inline Json load_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded()) throw FormatError(path.string() + ": not valid JSON");
  return j;
}

inline void save_json_file(const fs::path& path, const Json& j) {
  std::ostringstream s;
  s << j.dump(2) << "\n";
  const fs::path tmp = path.string() + ".part";
  detail::write_bytes(tmp, s.str());
  fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Manifest.

struct Artifact {
  std::string path;  // relative to the output directory
  std::uint64_t hash = 0;
  std::uint64_t config = 0;
};

struct ManifestRow {
  std::string id;
  std::string utterance;
  std::string source;
  SceneSpec scene;
  std::map<std::string, Artifact> artifacts;
  Json extra = Json::object();
};

struct Manifest {
  std::vector<ManifestRow> rows;
  std::optional<Artifact> model;
  Json model_info = Json::object();

  ManifestRow* find(const std::string& id) {
    for (auto& r : rows)
      if (r.id == id) return &r;
    return nullptr;
  }
};

inline constexpr int kManifestVersion = 1;

namespace detail {

inline Json artifact_json(const Artifact& a) {
  return {{"path", a.path}, {"hash", hex64(a.hash)}, {"config", hex64(a.config)}};
}

inline std::uint64_t parse_hex64(const std::string& s) {
  if (s.size() != 16 || s.find_first_not_of("0123456789abcdef") != std::string::npos)
    throw FormatError("manifest: bad hash '" + s + "'");
  return std::stoull(s, nullptr, 16);
}

inline Artifact artifact_from(const Json& j) {
  return {j.at("path").get<std::string>(), parse_hex64(j.at("hash").get<std::string>()),
          parse_hex64(j.at("config").get<std::string>())};
}

}  // namespace detail

inline Json to_json(const Manifest& m) {
  Json j;
  j["version"] = kManifestVersion;
  Json rows = Json::array();
  for (const auto& r : m.rows) {
    Json row;
    row["id"] = r.id;
    row["utterance"] = r.utterance;
    row["source"] = r.source;
    row["scene"] = {{"source_azimuth", r.scene.source_azimuth},
                    {"noise_azimuth", r.scene.noise_azimuth},
                    {"snr_db", r.scene.snr_db},
                    {"noise_kind", r.scene.noise_kind}};
    Json arts = Json::object();
    for (const auto& [k, a] : r.artifacts) arts[k] = detail::artifact_json(a);
    row["artifacts"] = arts;
    if (!r.extra.empty()) row["extra"] = r.extra;
    rows.push_back(row);
  }
  j["rows"] = rows;
  if (m.model) {
    j["model"] = detail::artifact_json(*m.model);
    j["model_info"] = m.model_info;
  }
  return j;
}

inline Manifest manifest_from_json(const Json& j) {
  try {
    if (j.at("version").get<int>() != kManifestVersion)
      throw FormatError("manifest version " + j.at("version").dump() + " is not supported");
    Manifest m;
    std::set<std::string> ids;
    for (const auto& row : j.at("rows")) {
      ManifestRow r;
      r.id = row.at("id").get<std::string>();
      if (!ids.insert(r.id).second) throw FormatError("manifest: duplicate row id " + r.id);
      r.utterance = row.at("utterance").get<std::string>();
      r.source = row.at("source").get<std::string>();
      const Json& s = row.at("scene");
      r.scene = {s.at("source_azimuth").get<double>(), s.at("noise_azimuth").get<double>(),
                 s.at("snr_db").get<double>(), s.at("noise_kind").get<std::string>()};
      for (const auto& item : row.at("artifacts").items())
        r.artifacts[item.key()] = detail::artifact_from(item.value());
      if (row.contains("extra")) r.extra = row.at("extra");
      m.rows.push_back(std::move(r));
    }
    if (j.contains("model")) {
      m.model = detail::artifact_from(j.at("model"));
      m.model_info = j.value("model_info", Json::object());
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
}

inline std::uint64_t file_hash(const fs::path& path) {
  const auto bytes = detail::slurp(path);
  return fnv1a(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

// ---------------------------------------------------------------------------
// Stage plumbing.

struct StageOptions {
  bool force = false;
  std::ostream* log = &std::cerr;
};

struct StageReport {
  int computed = 0;
  int skipped = 0;
  int failed = 0;
  std::vector<std::string> warnings;
};

class Workspace {
 public:
  explicit Workspace(RunConfig cfg) : cfg_(std::move(cfg)), root_(cfg_.output_dir) {}

  const RunConfig& config() const { return cfg_; }
  const fs::path& root() const { return root_; }
  fs::path manifest_path() const { return root_ / "manifest.json"; }

  Manifest load_manifest() const {
    if (!fs::exists(manifest_path())) return {};
    return manifest_from_json(load_json_file(manifest_path()));
  }
  void save_manifest(const Manifest& m) const {
    fs::create_directories(root_);
    save_json_file(manifest_path(), to_json(m));
    save_json_file(root_ / "config.json", to_json(cfg_));
  }

  fs::path abs(const std::string& rel) const { return root_ / rel; }

  /// Writes through `write(path)` and returns the recorded artifact.
  template <class Write>
  Artifact produce(const std::string& rel, std::uint64_t config, Write write) const {
    const fs::path p = abs(rel);
    fs::create_directories(p.parent_path());
    fs::path tmp = p;
    tmp.replace_filename(p.stem().string() + ".part" + p.extension().string());
    write(tmp);
    fs::rename(tmp, p);
    return {rel, file_hash(p), config};
  }

  enum class State { missing, fresh, stale };

  State state(const Artifact* a, std::uint64_t expected_config) const {
    if (a == nullptr || !fs::exists(abs(a->path))) return State::missing;
    if (a->config != expected_config || file_hash(abs(a->path)) != a->hash) return State::stale;
    return State::fresh;
  }

  // -- Config hashes per stage -------------------------------------------

  std::uint64_t scene_hash(const ManifestRow& r, std::uint64_t source_hash) const {
    const Json j = to_json(cfg_);
    Json s{{"corpus", j["corpus"]}, {"hrir_dir", j["hrir_dir"]}, {"seed", j["seed"]},
           {"stft", j["stft"]},     {"noise_azimuth", j["scenes"]["noise_azimuth"]},
           {"row", r.id},           {"source", hex64(source_hash)}};
    return fnv1a(s.dump());
  }
  std::uint64_t mask_hash(const ManifestRow& r) const {
    return fnv1a(to_json(cfg_)["target_mask"].dump(), upstream(r, "noisy"));
  }
  std::uint64_t feature_hash(const ManifestRow& r) const {
    return fnv1a(to_json(cfg_)["features"].dump(), upstream(r, "noisy"));
  }
  std::uint64_t train_hash(const Manifest& m) const {
    const Json j = to_json(cfg_);
    std::uint64_t h = fnv1a(j["train"].dump() + j["network"].dump());
    for (const auto& r : m.rows) {
      for (const char* k : {"mask_left", "mask_right", "features_left", "features_right"}) {
        auto it = r.artifacts.find(k);
        if (it != r.artifacts.end()) h = fnv1a(hex64(it->second.config), h);
      }
    }
    return h;
  }
  std::uint64_t enhance_hash(const ManifestRow& r, const Manifest& m) const {
    std::uint64_t h = fnv1a(to_json(cfg_)["enhance"].dump(), upstream(r, "noisy"));
    switch (cfg_.mask_source) {
      case MaskSource::model:
        h = fnv1a(m.model ? hex64(m.model->config) : "no-model", h);
        h = fnv1a(hex64(upstream(r, "features_left")) + hex64(upstream(r, "features_right")), h);
        break;
      case MaskSource::oracle:
        h = fnv1a(hex64(upstream(r, "mask_left")) + hex64(upstream(r, "mask_right")), h);
        break;
      case MaskSource::identity:
        break;
    }
    return h;
  }

 private:
  static std::uint64_t upstream(const ManifestRow& r, const std::string& key) {
    auto it = r.artifacts.find(key);
    return it == r.artifacts.end() ? 0 : it->second.config;
  }

  RunConfig cfg_;
  fs::path root_;
};

namespace detail {

inline std::string format_number(double v) {
  std::ostringstream s;
  s << std::noshowpos << v;
  return s.str();
}

inline std::string row_id(const std::string& utt, const SceneSpec& s) {
  std::ostringstream o;
  o << utt << "__" << s.noise_kind << "_snr" << (s.snr_db >= 0 ? "+" : "") << format_number(s.snr_db)
    << "_az" << format_number(s.source_azimuth);
  return o.str();
}

struct Utterance {
  std::string id;
  std::string source;
  std::uint64_t hash = 0;
  Signal signal;
};

inline std::vector<Utterance> load_corpus(const RunConfig& c, StageReport& rep, std::ostream& log) {
  std::vector<Utterance> out;
  if (c.corpus.synthetic_count > 0) {
    SpeechLikeConfig sc;
    sc.seconds = c.corpus.synthetic_seconds;
    sc.rate = c.stft.rate;
    for (int i = 0; i < c.corpus.synthetic_count; ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "syn%03d", i);
      const std::uint64_t seed = fnv1a(id, c.seed);
      out.push_back({id, "synthetic:" + std::string(id), seed, speech_like(seed, sc)});
    }
    return out;
  }
  const fs::path dir(c.corpus.dir);
  if (!fs::is_directory(dir)) throw IoError("corpus directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    try {
      Signal s = read_wav_mono(p);
      if (s.rate != c.stft.rate)
        throw InvalidArgument("rate " + std::to_string(s.rate) + " Hz, pipeline expects " +
                              std::to_string(c.stft.rate) + " Hz");
      out.push_back({p.stem().string(), fs::absolute(p).string(), file_hash(p), std::move(s)});
    } catch (const Error& e) {
      rep.warnings.push_back(p.string() + ": " + e.what());
      log << "warning: skipping " << p.string() << ": " << e.what() << "\n";
      ++rep.failed;
    }
  }
  return out;
}

inline void refuse_stale(const std::string& stage, const std::vector<std::string>& ids) {
  if (ids.empty()) return;
  std::string list;
  for (std::size_t i = 0; i < ids.size() && i < 3; ++i) list += (i ? ", " : "") + ids[i];
  if (ids.size() > 3) list += ", ...";
  throw PipelineError(stage + ": " + std::to_string(ids.size()) +
                      " artifact(s) were produced with a different config or changed on disk (" +
                      list + "); rerun with --force to rebuild them");
}

inline BinauralSignal read_binaural(const Workspace& ws, const ManifestRow& r, const std::string& key) {
  auto it = r.artifacts.find(key);
  if (it == r.artifacts.end()) throw PipelineError(r.id + ": no " + key + " artifact; run the earlier stage first");
  return read_wav_binaural(ws.abs(it->second.path));
}

inline void require_fresh(const Workspace& ws, const ManifestRow& r, const std::string& key,
                          std::uint64_t expected, const std::string& stage) {
  auto it = r.artifacts.find(key);
  const Artifact* a = it == r.artifacts.end() ? nullptr : &it->second;
  switch (ws.state(a, expected)) {
    case Workspace::State::fresh:
      return;
    case Workspace::State::missing:
      throw PipelineError(r.id + ": " + key + " is missing; run " + stage + " first");
    case Workspace::State::stale:
      throw PipelineError(r.id + ": " + key + " is stale; rerun " + stage);
  }
}

/// Runs `body` per row, counting results; per-row errors are logged and the
/// run continues.
template <class Body>
void for_rows(Manifest& m, StageReport& rep, std::ostream& log, const std::string& stage, Body body) {
  for (auto& r : m.rows) {
    try {
      if (body(r))
        ++rep.computed;
      else
        ++rep.skipped;
    } catch (const Error& e) {
      ++rep.failed;
      rep.warnings.push_back(r.id + ": " + e.what());
      log << stage << ": " << r.id << " failed: " << e.what() << "\n";
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stages.

inline StageReport run_spatialize(const Workspace& ws, const StageOptions& opt = {}) {
  const RunConfig& c = ws.config();
  std::ostream& log = *opt.log;
  StageReport rep;
  auto corpus = detail::load_corpus(c, rep, log);
  if (corpus.empty()) throw InvalidArgument("corpus is empty");

  Manifest old = ws.load_manifest();
  Manifest m;
  m.model = old.model;
  m.model_info = old.model_info;
  struct Job {
    std::size_t utt;
    ManifestRow row;
    std::uint64_t hash;
    bool needed;
  };
  std::vector<Job> jobs;
  std::vector<std::string> stale;
  for (std::size_t u = 0; u < corpus.size(); ++u)
    for (const auto& kind : c.scenes.noise_kinds)
      for (double snr : c.scenes.snrs_db)
        for (double az : c.scenes.source_azimuths) {
          ManifestRow r;
          r.scene = {az, c.scenes.noise_azimuth, snr, kind};
          r.utterance = corpus[u].id;
          r.source = corpus[u].source;
          r.id = detail::row_id(r.utterance, r.scene);
          const std::uint64_t h = ws.scene_hash(r, corpus[u].hash);
          bool needed = true;
          if (const ManifestRow* prev = old.find(r.id)) {
            r.artifacts = prev->artifacts;
            r.extra = prev->extra;
            auto state = [&](const char* k) {
              auto it = prev->artifacts.find(k);
              return ws.state(it == prev->artifacts.end() ? nullptr : &it->second, h);
            };
            const auto sc = state("clean"), sn = state("noisy");
            if (sc == Workspace::State::fresh && sn == Workspace::State::fresh)
              needed = false;
            else if (sc == Workspace::State::stale || sn == Workspace::State::stale)
              stale.push_back(r.id);
          }
          jobs.push_back({u, std::move(r), h, needed});
        }
  if (!opt.force) detail::refuse_stale("spatialize", stale);

  std::map<double, std::optional<HrirPair>> hrirs;
  auto hrir = [&](double az) -> const std::optional<HrirPair>& {
    auto it = hrirs.find(az);
    if (it != hrirs.end()) return it->second;
    std::optional<HrirPair> h;
    if (c.hrir_dir.empty()) {
      h = synth_hrir(az, c.stft.rate);
    } else {
      try {
        h = load_hrir(c.hrir_dir, az, c.stft.rate);
      } catch (const IoError& e) {
        log << "warning: " << e.what() << "\n";
      }
    }
    return hrirs.emplace(az, std::move(h)).first->second;
  };

  for (auto& job : jobs) {
    ManifestRow& r = job.row;
    const auto& hs = hrir(r.scene.source_azimuth);
    const auto& hn = hrir(r.scene.noise_azimuth);
    if (!hs || !hn) {
      rep.warnings.push_back(r.id + ": missing HRIR, scene skipped");
      log << "warning: " << r.id << ": missing HRIR, scene skipped\n";
      continue;
    }
    if (!job.needed) {
      ++rep.skipped;
      m.rows.push_back(std::move(r));
      continue;
    }
    try {
      const Signal speech = normalize_active_level(corpus[job.utt].signal, c.corpus.speech_level_db);
      const Scene s = make_scene(speech, r.scene, *hs, *hn, fnv1a(r.id, c.seed));
      const std::string dir = "scenes/" + r.id + "/";
      r.artifacts.clear();
      r.extra = Json::object();
      r.artifacts["clean"] = ws.produce(dir + "clean.wav", job.hash, [&](const fs::path& p) {
        write_wav(s.clean, p, SampleFormat::float32);
      });
      r.artifacts["noisy"] = ws.produce(dir + "noisy.wav", job.hash, [&](const fs::path& p) {
        if (write_wav(s.noisy, p, SampleFormat::float32).clipped)
          log << "warning: " << r.id << ": noisy mixture clipped\n";
      });
      ++rep.computed;
      m.rows.push_back(std::move(r));
    } catch (const Error& e) {
      ++rep.failed;
      rep.warnings.push_back(r.id + ": " + e.what());
      log << "spatialize: " << r.id << " failed: " << e.what() << "\n";
    }
  }
  ws.save_manifest(m);
  return rep;
}

inline StageReport run_target_mask(const Workspace& ws, const StageOptions& opt = {}) {
  const RunConfig& c = ws.config();
  Manifest m = ws.load_manifest();
  if (m.rows.empty()) throw PipelineError("manifest has no rows; run spatialize first");
  std::vector<std::string> stale;
  for (const auto& r : m.rows) {
    const std::uint64_t h = ws.mask_hash(r);
    for (const char* k : {"mask_left", "mask_right"}) {
      auto it = r.artifacts.find(k);
      if (it != r.artifacts.end() && ws.state(&it->second, h) == Workspace::State::stale) {
        stale.push_back(r.id);
        break;
      }
    }
  }
  if (!opt.force) detail::refuse_stale("target-mask", stale);
  StageReport rep;
  detail::for_rows(m, rep, *opt.log, "target-mask", [&](ManifestRow& r) {
    const std::uint64_t h = ws.mask_hash(r);
    auto st = [&](const char* k) {
      auto it = r.artifacts.find(k);
      return ws.state(it == r.artifacts.end() ? nullptr : &it->second, h);
    };
    if (st("mask_left") == Workspace::State::fresh && st("mask_right") == Workspace::State::fresh)
      return false;
    const auto [bl, br] =
        compute_hswobm(detail::read_binaural(ws, r, "clean"), detail::read_binaural(ws, r, "noisy"),
                       c.target_mask);
    r.artifacts["mask_left"] = ws.produce("masks/" + r.id + ".L.bwmask", h,
                                          [&](const fs::path& p) { write_mask(p, bl, h); });
    r.artifacts["mask_right"] = ws.produce("masks/" + r.id + ".R.bwmask", h,
                                           [&](const fs::path& p) { write_mask(p, br, h); });
    return true;
  });
  ws.save_manifest(m);
  return rep;
}

inline StageReport run_features(const Workspace& ws, const StageOptions& opt = {}) {
  const RunConfig& c = ws.config();
  Manifest m = ws.load_manifest();
  if (m.rows.empty()) throw PipelineError("manifest has no rows; run spatialize first");
  std::vector<std::string> stale;
  for (const auto& r : m.rows) {
    const std::uint64_t h = ws.feature_hash(r);
    for (const char* k : {"features_left", "features_right"}) {
      auto it = r.artifacts.find(k);
      if (it != r.artifacts.end() && ws.state(&it->second, h) == Workspace::State::stale) {
        stale.push_back(r.id);
        break;
      }
    }
  }
  if (!opt.force) detail::refuse_stale("features", stale);
  StageReport rep;
  detail::for_rows(m, rep, *opt.log, "features", [&](ManifestRow& r) {
    const std::uint64_t h = ws.feature_hash(r);
    auto st = [&](const char* k) {
      auto it = r.artifacts.find(k);
      return ws.state(it == r.artifacts.end() ? nullptr : &it->second, h);
    };
    if (st("features_left") == Workspace::State::fresh && st("features_right") == Workspace::State::fresh)
      return false;
    const BinauralSignal noisy = detail::read_binaural(ws, r, "noisy");
    const FeatureMatrix fl = extract_features(noisy.left, c.features);
    const FeatureMatrix fr = extract_features(noisy.right, c.features);
    r.artifacts["features_left"] = ws.produce("features/" + r.id + ".L.bwfeat", h,
                                              [&](const fs::path& p) { write_features(p, fl, h); });
    r.artifacts["features_right"] = ws.produce("features/" + r.id + ".R.bwfeat", h,
                                               [&](const fs::path& p) { write_features(p, fr, h); });
    return true;
  });
  ws.save_manifest(m);
  return rep;
}

/// Utterance-level split: an utterance goes to validation when its id hash
/// falls in the lowest `val_split` fraction of the hash range.
inline bool is_validation_utterance(const std::string& utterance, double val_split) {
  const std::uint64_t h = fnv1a(utterance);
  return double(h % 1000000ull) / 1e6 < val_split;
}

namespace detail {

/// Pairs of one ear of one row: features, target mask columns, weights.
inline TrainingSet row_pairs(const Workspace& ws, const ManifestRow& r, const char* ear) {
  const RunConfig& c = ws.config();
  const std::string side(ear);
  const FeatureFile ff = read_features(ws.abs(r.artifacts.at("features_" + side).path));
  const MaskFile mf = read_mask(ws.abs(r.artifacts.at("mask_" + side).path));
  if (mf.values.cols() != ff.features.rows())
    throw DimensionError(r.id + ": mask and feature frame counts differ");
  TrainingSet s;
  s.features = ff.features.cast<float>();
  s.targets = mf.values.transpose().matrix().cast<float>();
  if (c.target_mask.weights == WeightProvider::uniform) {
    s.weights = Eigen::MatrixXf::Ones(s.targets.rows(), s.targets.cols());
  } else {
    const BinauralSignal clean = read_binaural(ws, r, "clean");
    const WeightGrid w =
        make_weights(side == "left" ? clean.left : clean.right, c.target_mask.weights, c.stft);
    s.weights = w.I.transpose().matrix().cast<float>();
  }
  return s;
}

}  // namespace detail

inline std::vector<int> network_dims(const RunConfig& c) {
  std::vector<int> dims{3 * c.features.bands};
  dims.insert(dims.end(), c.network.hidden.begin(), c.network.hidden.end());
  dims.push_back(c.stft.bins());
  return dims;
}

inline StageReport run_train(const Workspace& ws, const StageOptions& opt = {}) {
  const RunConfig& c = ws.config();
  std::ostream& log = *opt.log;
  Manifest m = ws.load_manifest();
  if (m.rows.empty()) throw PipelineError("manifest has no rows; run spatialize first");
  StageReport rep;
  const std::uint64_t h = ws.train_hash(m);
  switch (ws.state(m.model ? &*m.model : nullptr, h)) {
    case Workspace::State::fresh:
      ++rep.skipped;
      return rep;
    case Workspace::State::stale:
      if (!opt.force) detail::refuse_stale("train", {"model"});
      break;
    case Workspace::State::missing:
      break;
  }

  std::vector<TrainingSet> tr_parts, val_parts;
  std::set<std::string> tr_utts, val_utts;
  for (const auto& r : m.rows) {
    for (const char* k : {"mask_left", "mask_right"})
      detail::require_fresh(ws, r, k, ws.mask_hash(r), "target-mask");
    for (const char* k : {"features_left", "features_right"})
      detail::require_fresh(ws, r, k, ws.feature_hash(r), "features");
    const bool val = is_validation_utterance(r.utterance, c.train.val_split);
    (val ? val_utts : tr_utts).insert(r.utterance);
    for (const char* ear : {"left", "right"}) (val ? val_parts : tr_parts).push_back(detail::row_pairs(ws, r, ear));
  }
  if (tr_parts.empty() || val_parts.empty())
    throw PipelineError("the utterance split left an empty " + std::string(tr_parts.empty() ? "training" : "validation") +
                        " set; add utterances or change train.val_split");
  TrainingSet tr = concatenate(tr_parts), val = concatenate(val_parts);
  const InputScaling scaling = fit_input_scaling(tr.features);
  tr.features = apply_scaling(tr.features, scaling);
  val.features = apply_scaling(val.features, scaling);
  log << "train: " << tr.size() << " training pairs from " << tr_utts.size() << " utterance(s), "
      << val.size() << " validation pairs from " << val_utts.size() << "\n";

  auto res = train(init_model<float>(c.seed, network_dims(c), c.network.dropout), tr, val, c.train);
  fold_input_scaling(res.model, scaling);

  // Constant 0.5 predictor on the validation pairs.
  const double baseline =
      weighted_mse(Eigen::MatrixXd::Constant(val.targets.rows(), val.targets.cols(), 0.5),
                   Eigen::MatrixXd(val.targets.cast<double>()), Eigen::MatrixXd(val.weights.cast<double>()),
                   c.train.normalization);
  const double best = res.history[std::size_t(res.best_epoch)].val_loss;
  log << "train: best validation loss " << best << " at epoch " << res.best_epoch
      << " (constant 0.5 predictor: " << baseline << ")\n";

  m.model = ws.produce("model/model.bwmlp", h, [&](const fs::path& p) { save_model(p, res.model, h); });
  Json hist = Json::array();
  for (const auto& e : res.history)
    hist.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
  m.model_info = {{"best_epoch", res.best_epoch},
                  {"best_val_loss", best},
                  {"constant_half_val_loss", baseline},
                  {"train_pairs", tr.size()},
                  {"val_pairs", val.size()},
                  {"train_utterances", std::vector<std::string>(tr_utts.begin(), tr_utts.end())},
                  {"val_utterances", std::vector<std::string>(val_utts.begin(), val_utts.end())},
                  {"history", hist}};
  ++rep.computed;
  ws.save_manifest(m);
  return rep;
}

/// Continuous mask of one ear from a model: bins x frames.
inline Grid estimate_mask(const MlpModel<float>& model, const FeatureMatrix& features) {
  const Eigen::MatrixXf X = features.transpose().cast<float>();
  return forward_batch(model, X, Mode::infer).cast<double>().array();
}

inline StageReport run_enhance(const Workspace& ws, const StageOptions& opt = {}) {
  const RunConfig& c = ws.config();
  Manifest m = ws.load_manifest();
  if (m.rows.empty()) throw PipelineError("manifest has no rows; run spatialize first");
  std::optional<MlpModel<float>> model;
  if (c.mask_source == MaskSource::model) {
    if (ws.state(m.model ? &*m.model : nullptr, ws.train_hash(m)) != Workspace::State::fresh)
      throw PipelineError("enhance: no up-to-date model; run train first or use --mask-source oracle");
    model = load_model<float>(ws.abs(m.model->path), network_dims(c)).model;
  }
  std::vector<std::string> stale;
  for (const auto& r : m.rows) {
    auto it = r.artifacts.find("enhanced");
    if (it != r.artifacts.end() && ws.state(&it->second, ws.enhance_hash(r, m)) == Workspace::State::stale)
      stale.push_back(r.id);
  }
  if (!opt.force) detail::refuse_stale("enhance", stale);

  OmlsaConfig oc = c.enhance;
  oc.bypass = c.mask_source == MaskSource::identity;
  StageReport rep;
  detail::for_rows(m, rep, *opt.log, "enhance", [&](ManifestRow& r) {
    const std::uint64_t h = ws.enhance_hash(r, m);
    auto it = r.artifacts.find("enhanced");
    if (ws.state(it == r.artifacts.end() ? nullptr : &it->second, h) == Workspace::State::fresh) return false;
    const BinauralSignal noisy = detail::read_binaural(ws, r, "noisy");
    Grid ml, mr;
    switch (c.mask_source) {
      case MaskSource::model:
        detail::require_fresh(ws, r, "features_left", ws.feature_hash(r), "features");
        detail::require_fresh(ws, r, "features_right", ws.feature_hash(r), "features");
        ml = estimate_mask(*model, read_features(ws.abs(r.artifacts.at("features_left").path)).features);
        mr = estimate_mask(*model, read_features(ws.abs(r.artifacts.at("features_right").path)).features);
        break;
      case MaskSource::oracle:
        detail::require_fresh(ws, r, "mask_left", ws.mask_hash(r), "target-mask");
        detail::require_fresh(ws, r, "mask_right", ws.mask_hash(r), "target-mask");
        ml = read_mask(ws.abs(r.artifacts.at("mask_left").path)).values;
        mr = read_mask(ws.abs(r.artifacts.at("mask_right").path)).values;
        break;
      case MaskSource::identity: {
        const Eigen::Index frames = Eigen::Index(frame_count(noisy.size(), c.stft));
        ml = mr = Grid::Ones(c.stft.bins(), frames);
        break;
      }
    }
    const EnhancementResult e = enhance_binaural(noisy, ml, mr, oc, c.stft);
    const TFGrid nl = stft(noisy.left, c.stft), nr = stft(noisy.right, c.stft);
    const bool phase = phase_preserved(nl, e.left) && phase_preserved(nr, e.right);
    // ILD of the gain-applied spectra, before resynthesis.
    const BoolGrid active = speech_activity_mask(detail::read_binaural(ws, r, "clean"), c.stft,
                                                 c.evaluate.ild_activity_range_db);
    const double ild_tf = rms_ild_error(ild_map(nl, nr), ild_map(e.left, e.right), active).mean;
    r.artifacts["enhanced"] = ws.produce("enhanced/" + r.id + ".wav", h, [&](const fs::path& p) {
      write_wav(e.signal, p, SampleFormat::float32);
    });
    r.extra["phase_preserved"] = phase;
    r.extra["rms_ild_error_tf"] = ild_tf;
    r.extra["mean_gain_db"] = db_from_amplitude(e.gain.mean());
    return true;
  });
  ws.save_manifest(m);
  return rep;
}

// ---------------------------------------------------------------------------
// Evaluation.

struct Stat {
  int n = 0;
  double mean = 0.0;
  double sd = 0.0;
};

inline Stat mean_sd(const std::vector<double>& v) {
  Stat s;
  s.n = int(v.size());
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= double(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / double(v.size() - 1));
  }
  return s;
}

inline Json to_json(const MetricReport& r) {
  return {{"stoi_left", r.stoi_left},
          {"stoi_right", r.stoi_right},
          {"stoi_better_ear", r.stoi_better_ear},
          {"wstoi_left", r.wstoi_left},
          {"wstoi_right", r.wstoi_right},
          {"wstoi_better_ear", r.wstoi_better_ear},
          {"fw_segsnr_left", r.fw_segsnr_left},
          {"fw_segsnr_right", r.fw_segsnr_right},
          {"rms_ild_error", r.rms_ild_error}};
}

namespace detail {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

/// Static line chart.
inline std::string svg_plot(const std::string& title, const std::string& xlabel,
                            const std::string& ylabel, const std::vector<Series>& series) {
  const double W = 640, H = 400, L = 70, R = 150, T = 40, B = 60;
  double x0 = 1e300, x1 = -1e300, y0 = 0.0, y1 = -1e300;
  for (const auto& s : series)
    for (auto [x, y] : s.points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  if (x0 > x1) x0 = 0, x1 = 1;
  if (x1 - x0 < 1e-9) x0 -= 1, x1 += 1;
  if (y1 - y0 < 1e-9) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::ostringstream o;
  o << std::fixed << std::setprecision(2);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4, yv = y0 + (y1 - y0) * i / 4;
    o << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">"
      << format_number(std::round(xv * 100) / 100) << "</text>\n";
    o << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">"
      << format_number(std::round(yv * 100) / 100) << "</text>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << py(yv) << "\" x2=\"" << W - R << "\" y2=\"" << py(yv)
      << "\" stroke=\"#ddd\"/>\n";
  }
  if (y0 < 0 && y1 > 0)
    o << "<line x1=\"" << L << "\" y1=\"" << py(0) << "\" x2=\"" << W - R << "\" y2=\"" << py(0)
      << "\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>\n";
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">" << xlabel
    << "</text>\n";
  o << "<text transform=\"translate(18," << (T + H - B) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << ylabel << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* col = colors[i % 6];
    std::string pts;
    for (auto [x, y] : series[i].points) {
      std::ostringstream p;
      p << std::fixed << std::setprecision(2) << px(x) << "," << py(y) << " ";
      pts += p.str();
      o << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"3\" fill=\"" << col << "\"/>\n";
    }
    o << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"2\" points=\"" << pts << "\"/>\n";
    o << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * (i + 1) << "\" fill=\"" << col << "\">"
      << series[i].name << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace detail

struct EvaluationSummary {
  StageReport report;
  Json groups = Json::array();
};

inline EvaluationSummary run_evaluate(const Workspace& ws, const StageOptions& opt = {}) {
  const RunConfig& c = ws.config();
  std::ostream& log = *opt.log;
  Manifest m = ws.load_manifest();
  if (m.rows.empty()) throw PipelineError("manifest has no rows; run spatialize first");

  // All enhanced files must come from the current enhance configuration.
  std::vector<std::string> mixed;
  for (const auto& r : m.rows) {
    auto it = r.artifacts.find("enhanced");
    if (it != r.artifacts.end() && it->second.config != ws.enhance_hash(r, m)) mixed.push_back(r.id);
  }
  if (!mixed.empty())
    throw PipelineError("evaluate: " + std::to_string(mixed.size()) +
                        " enhanced file(s) come from a different configuration (first: " + mixed.front() +
                        "); rerun enhance");

  EvaluationSummary out;
  StageReport& rep = out.report;
  std::ostringstream lines;
  struct Key {
    std::string kind;
    double snr, az;
    bool operator<(const Key& o) const { return std::tie(kind, snr, az) < std::tie(o.kind, o.snr, o.az); }
  };
  struct Acc {
    std::vector<double> d_stoi, d_wstoi, d_seg_l, d_seg_r, ild;
  };
  std::map<Key, Acc> groups;
  for (const auto& r : m.rows) {
    Json row{{"id", r.id},
             {"utterance", r.utterance},
             {"noise_kind", r.scene.noise_kind},
             {"snr_db", r.scene.snr_db},
             {"source_azimuth", r.scene.source_azimuth}};
    try {
      if (!r.artifacts.count("enhanced")) throw PipelineError("not enhanced yet");
      const BinauralSignal clean = detail::read_binaural(ws, r, "clean");
      const BinauralSignal noisy = detail::read_binaural(ws, r, "noisy");
      const BinauralSignal enh = detail::read_binaural(ws, r, "enhanced");
      if (enh.size() != clean.size())
        throw DimensionError("enhanced length " + std::to_string(enh.size()) + " differs from clean length " +
                             std::to_string(clean.size()));
      const MetricReport before = measure(clean, noisy, noisy, c.evaluate);
      const MetricReport after = measure(clean, noisy, enh, c.evaluate);
      const bool phase = r.extra.value("phase_preserved", false);
      Json imp{{"stoi_better_ear", after.stoi_better_ear - before.stoi_better_ear},
               {"wstoi_better_ear", after.wstoi_better_ear - before.wstoi_better_ear},
               {"fw_segsnr_left", after.fw_segsnr_left - before.fw_segsnr_left},
               {"fw_segsnr_right", after.fw_segsnr_right - before.fw_segsnr_right}};
      row["status"] = "ok";
      row["noisy"] = to_json(before);
      row["enhanced"] = to_json(after);
      row["improvement"] = imp;
      row["rms_ild_error"] = after.rms_ild_error;
      row["rms_ild_error_tf"] = r.extra.value("rms_ild_error_tf", std::nan(""));
      row["phase_preserved"] = phase;
      Acc& a = groups[{r.scene.noise_kind, r.scene.snr_db, r.scene.source_azimuth}];
      a.d_stoi.push_back(imp["stoi_better_ear"]);
      a.d_wstoi.push_back(imp["wstoi_better_ear"]);
      a.d_seg_l.push_back(imp["fw_segsnr_left"]);
      a.d_seg_r.push_back(imp["fw_segsnr_right"]);
      a.ild.push_back(after.rms_ild_error);
      ++rep.computed;
    } catch (const Error& e) {
      row["status"] = "failed";
      row["error"] = e.what();
      ++rep.failed;
      rep.warnings.push_back(r.id + ": " + e.what());
      log << "evaluate: " << r.id << " failed: " << e.what() << "\n";
    }
    lines << row.dump() << "\n";
  }

  const fs::path dir = ws.root() / "reports";
  fs::create_directories(dir);
  detail::write_bytes(dir / "metrics.jsonl", lines.str());

  auto cell = [](const Stat& s, int prec) {
    std::ostringstream o;
    o << std::fixed << std::setprecision(prec) << s.mean << " ± " << s.sd;
    return o.str();
  };
  std::ostringstream md;
  md << "| noise | SNR (dB) | azimuth | n | ΔSTOI better ear | ΔWSTOI better ear | ΔfwSegSNR L (dB) | "
        "ΔfwSegSNR R (dB) | RMS ILD error (dB) |\n";
  md << "|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& [k, a] : groups) {
    const Stat s1 = mean_sd(a.d_stoi), s2 = mean_sd(a.d_wstoi), s3 = mean_sd(a.d_seg_l),
               s4 = mean_sd(a.d_seg_r), s5 = mean_sd(a.ild);
    md << "| " << k.kind << " | " << detail::format_number(k.snr) << " | " << detail::format_number(k.az)
       << " | " << s1.n << " | " << cell(s1, 4) << " | " << cell(s2, 4) << " | " << cell(s3, 2) << " | "
       << cell(s4, 2) << " | " << cell(s5, 3) << " |\n";
    auto js = [](const Stat& s) { return Json{{"mean", s.mean}, {"sd", s.sd}}; };
    out.groups.push_back({{"noise_kind", k.kind},
                          {"snr_db", k.snr},
                          {"source_azimuth", k.az},
                          {"n", s1.n},
                          {"stoi_better_ear_improvement", js(s1)},
                          {"wstoi_better_ear_improvement", js(s2)},
                          {"fw_segsnr_left_improvement", js(s3)},
                          {"fw_segsnr_right_improvement", js(s4)},
                          {"rms_ild_error", js(s5)}});
  }
  detail::write_bytes(dir / "summary.md", md.str());
  save_json_file(dir / "summary.json", out.groups);

  if (c.plots) {
    // Improvement against SNR per noise kind (averaged over azimuths), ILD
    // error against azimuth per noise kind (averaged over SNRs).
    std::map<std::string, std::map<double, std::vector<double>>> seg, stoi_imp, ild;
    for (const auto& [k, a] : groups) {
      auto& s = seg[k.kind][k.snr];
      for (std::size_t i = 0; i < a.d_seg_l.size(); ++i) s.push_back(0.5 * (a.d_seg_l[i] + a.d_seg_r[i]));
      auto& t = stoi_imp[k.kind][k.snr];
      t.insert(t.end(), a.d_stoi.begin(), a.d_stoi.end());
      auto& l = ild[k.kind][k.az];
      l.insert(l.end(), a.ild.begin(), a.ild.end());
    }
    auto series = [](const std::map<std::string, std::map<double, std::vector<double>>>& src) {
      std::vector<detail::Series> out;
      for (const auto& [kind, pts] : src) {
        detail::Series s{kind, {}};
        for (const auto& [x, v] : pts) s.points.emplace_back(x, mean_sd(v).mean);
        out.push_back(std::move(s));
      }
      return out;
    };
    detail::write_bytes(dir / "segsnr_improvement_vs_snr.svg",
                        detail::svg_plot("fw-segSNR improvement (ear average)", "input SNR (dB)",
                                         "improvement (dB)", series(seg)));
    detail::write_bytes(dir / "stoi_improvement_vs_snr.svg",
                        detail::svg_plot("Better-ear STOI improvement", "input SNR (dB)", "ΔSTOI",
                                         series(stoi_imp)));
    detail::write_bytes(dir / "ild_error_vs_azimuth.svg",
                        detail::svg_plot("RMS ILD error", "source azimuth (deg)", "error (dB)", series(ild)));
  }
  log << "evaluate: " << rep.computed << " row(s) scored, " << rep.failed << " failed; summary in "
      << (dir / "summary.md").string() << "\n";
  return out;
}

}  // namespace binmask
