// Copyright 2026 The binmask Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <sstream>
#include <sys/wait.h>

#include "binmask/pipeline.hpp"
#include "test_support.hpp"

using namespace binmask;

namespace {

Json small_config(const fs::path& out, int utterances = 2) {
  Json j;
  j["corpus"] = {{"synthetic_count", utterances}, {"synthetic_seconds", 1.2}};
  j["output_dir"] = out.string();
  return j;
}

Workspace workspace(const Json& j) { return Workspace(run_config_from_json(j)); }

std::map<std::string, std::uint64_t> content_hashes(const Manifest& m) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& r : m.rows)
    for (const auto& [k, a] : r.artifacts) out[r.id + "/" + k] = a.hash;
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(BINMASK_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

StageOptions quiet(std::ostringstream& sink, bool force = false) { return {force, &sink}; }

}  // namespace

TEST_CASE("run configuration", "[cli]") {
  SECTION("defaults round-trip") {
    const RunConfig c = run_config_from_json(small_config("x"));
    const RunConfig d = run_config_from_json(to_json(c));
    CHECK(to_json(c) == to_json(d));
    CHECK(c.target_mask.beam_width == 64);
    CHECK(c.train.learning_rate == 1e-3);
    CHECK(c.enhance.g_min == Catch::Approx(0.1).epsilon(1e-12));
    CHECK(c.scenes.source_azimuths == std::vector<double>{30.0});
  }
  SECTION("unknown keys are rejected at every level") {
    Json j = small_config("x");
    j["colour"] = "blue";
    CHECK_THROWS_WITH(run_config_from_json(j), Catch::Matchers::ContainsSubstring("colour"));
    j = small_config("x");
    j["train"] = {{"epochs", 3}, {"learnin_rate", 0.1}};
    CHECK_THROWS_WITH(run_config_from_json(j), Catch::Matchers::ContainsSubstring("train.learnin_rate"));
  }
  SECTION("type and value errors") {
    Json j = small_config("x");
    j["train"] = {{"epochs", "many"}};
    CHECK_THROWS_AS(run_config_from_json(j), InvalidArgument);
    j = small_config("x");
    j["enhance"] = {{"mask_source", "crystal-ball"}};
    CHECK_THROWS_WITH(run_config_from_json(j), Catch::Matchers::ContainsSubstring("oracle"));
    j = small_config("x");
    j["scenes"] = {{"noise_kinds", {"babble"}}};
    CHECK_THROWS_AS(run_config_from_json(j), InvalidArgument);
  }
  SECTION("overrides") {
    Json j = small_config("x");
    apply_override(j, "train.epochs=7");
    apply_override(j, "enhance.mask_source=oracle");
    apply_override(j, "scenes.snrs_db=[-5,0,5]");
    const RunConfig c = run_config_from_json(j);
    CHECK(c.train.epochs == 7);
    CHECK(c.mask_source == MaskSource::oracle);
    CHECK(c.scenes.snrs_db.size() == 3);
    CHECK_THROWS_AS(apply_override(j, "no-equals-sign"), InvalidArgument);
  }
}

TEST_CASE("spatialize", "[cli]") {
  testing::TempDir dir("spat");
  std::ostringstream log;
  Json j = small_config(dir.path());
  j["scenes"] = {{"snrs_db", {-5, 0, 5}}};

  const StageReport first = run_spatialize(workspace(j), quiet(log));
  const Manifest m = workspace(j).load_manifest();
  CHECK(first.computed == 6);
  CHECK(m.rows.size() == 6);
  std::set<std::string> ids;
  for (const auto& r : m.rows) ids.insert(r.id);
  CHECK(ids.size() == 6);

  SECTION("re-run skips and leaves files unchanged") {
    const StageReport again = run_spatialize(workspace(j), quiet(log));
    CHECK(again.computed == 0);
    CHECK(again.skipped == 6);
    CHECK(content_hashes(workspace(j).load_manifest()) == content_hashes(m));
  }
  SECTION("same seed elsewhere gives identical files") {
    testing::TempDir other("spat2");
    Json k = j;
    k["output_dir"] = other.path().string();
    run_spatialize(workspace(k), quiet(log));
    CHECK(content_hashes(workspace(k).load_manifest()) == content_hashes(m));
  }
  SECTION("config change is refused without --force") {
    Json k = j;
    k["seed"] = 99;
    CHECK_THROWS_WITH(run_spatialize(workspace(k), quiet(log)), Catch::Matchers::ContainsSubstring("--force"));
    const StageReport forced = run_spatialize(workspace(k), quiet(log, true));
    CHECK(forced.computed == 6);
    CHECK(content_hashes(workspace(k).load_manifest()) != content_hashes(m));
  }
  SECTION("edited files count as stale") {
    detail::write_bytes(dir / m.rows[0].artifacts.at("noisy").path, "garbage");
    CHECK_THROWS_AS(run_spatialize(workspace(j), quiet(log)), PipelineError);
  }
}

TEST_CASE("scene grid and corpus handling", "[cli]") {
  std::ostringstream log;
  SECTION("seven SNRs per utterance") {
    testing::TempDir dir("grid");
    Json j = small_config(dir.path(), 1);
    j["scenes"] = {{"snrs_db", {-15, -10, -5, 0, 5, 10, 15}}};
    CHECK(run_spatialize(workspace(j), quiet(log)).computed == 7);
  }
  SECTION("missing HRIR skips the scene") {
    testing::TempDir dir("hrir");
    fs::create_directories(dir / "hrirs");
    BinauralSignal h{Signal{std::vector<double>(64, 0.0), 10000}, Signal{std::vector<double>(64, 0.0), 10000}};
    h.left.samples[0] = h.right.samples[0] = 1.0;
    write_wav(h, dir / "hrirs" / "az+0.wav", SampleFormat::float32);
    Json j = small_config(dir.path() / "out", 1);
    j["hrir_dir"] = (dir / "hrirs").string();
    j["scenes"] = {{"source_azimuths", {0, 30}}};
    const StageReport rep = run_spatialize(workspace(j), quiet(log));
    CHECK(rep.computed == 1);
    CHECK(rep.warnings.size() == 1);
    CHECK(workspace(j).load_manifest().rows.size() == 1);
  }
  SECTION("empty corpus") {
    testing::TempDir dir("empty");
    fs::create_directories(dir / "corpus");
    Json j;
    j["corpus"] = {{"dir", (dir / "corpus").string()}};
    j["output_dir"] = (dir / "out").string();
    CHECK_THROWS_AS(run_spatialize(workspace(j), quiet(log)), InvalidArgument);
  }
  SECTION("WAV corpus") {
    testing::TempDir dir("wavs");
    fs::create_directories(dir / "corpus");
    SpeechLikeConfig sc;
    sc.seconds = 1.2;
    write_wav(speech_like(5, sc), dir / "corpus" / "b.wav", SampleFormat::float32);
    write_wav(speech_like(6, sc), dir / "corpus" / "a.wav", SampleFormat::float32);
    Json j;
    j["corpus"] = {{"dir", (dir / "corpus").string()}};
    j["output_dir"] = (dir / "out").string();
    run_spatialize(workspace(j), quiet(log));
    const Manifest m = workspace(j).load_manifest();
    REQUIRE(m.rows.size() == 2);
    CHECK(m.rows[0].utterance == "a");
  }
}

TEST_CASE("downstream stages", "[cli]") {
  testing::TempDir dir("stages");
  std::ostringstream log;
  Json j = small_config(dir.path(), 4);
  j["train"] = {{"epochs", 2}, {"batch", 32}};
  j["network"] = {{"hidden", {16, 16}}};
  run_spatialize(workspace(j), quiet(log));

  SECTION("target masks and features are idempotent") {
    CHECK(run_target_mask(workspace(j), quiet(log)).computed == 4);
    CHECK(run_target_mask(workspace(j), quiet(log)).skipped == 4);
    CHECK(run_features(workspace(j), quiet(log)).computed == 4);
    CHECK(run_features(workspace(j), quiet(log)).skipped == 4);
    const Manifest m = workspace(j).load_manifest();
    const MaskFile mf = read_mask(dir / m.rows[0].artifacts.at("mask_left").path);
    CHECK(mf.config_hash == m.rows[0].artifacts.at("mask_left").config);
    CHECK(read_features(dir / m.rows[0].artifacts.at("features_right").path).config_hash ==
          m.rows[0].artifacts.at("features_right").config);

    Json k = j;
    k["target_mask"] = {{"beam_width", 8}};
    CHECK_THROWS_AS(run_target_mask(workspace(k), quiet(log)), PipelineError);
    CHECK(run_features(workspace(k), quiet(log)).skipped == 4);
  }

  SECTION("training splits by utterance") {
    run_target_mask(workspace(j), quiet(log));
    run_features(workspace(j), quiet(log));
    Json k = j;
    k["train"]["val_split"] = 0.5;
    CHECK(run_train(workspace(k), quiet(log)).computed == 1);
    const Manifest m = workspace(k).load_manifest();
    REQUIRE(m.model);
    std::set<std::string> tr, val;
    for (const auto& u : m.model_info["train_utterances"]) tr.insert(u.get<std::string>());
    for (const auto& u : m.model_info["val_utterances"]) val.insert(u.get<std::string>());
    CHECK(tr.size() + val.size() == 4);
    for (const auto& u : val) CHECK(is_validation_utterance(u, 0.5));
    for (const auto& u : tr) CHECK(!is_validation_utterance(u, 0.5));
    CHECK(run_train(workspace(k), quiet(log)).skipped == 1);
    CHECK(load_model<float>(dir / m.model->path).config_hash == m.model->config);

    CHECK(run_enhance(workspace(k), quiet(log)).computed == 4);
    const EvaluationSummary s = run_evaluate(workspace(k), quiet(log));
    CHECK(s.report.computed == 4);
  }

  SECTION("oracle enhancement needs no model") {
    run_target_mask(workspace(j), quiet(log));
    Json k = j;
    k["enhance"] = {{"mask_source", "oracle"}};
    CHECK(run_enhance(workspace(k), quiet(log)).computed == 4);
    CHECK(!workspace(k).load_manifest().model);
    const EvaluationSummary s = run_evaluate(workspace(k), quiet(log));
    CHECK(s.report.computed == 4);
    for (const auto& g : s.groups) CHECK(g["fw_segsnr_left_improvement"]["mean"].get<double>() > 0.0);

    Json changed = k;
    changed["enhance"]["g_min_db"] = -15.0;
    CHECK_THROWS_WITH(run_evaluate(workspace(changed), quiet(log)),
                      Catch::Matchers::ContainsSubstring("different configuration"));
    CHECK_THROWS_AS(run_enhance(workspace(changed), quiet(log)), PipelineError);
    CHECK(run_enhance(workspace(changed), quiet(log, true)).computed == 4);
  }

  SECTION("model source without a model is refused") {
    CHECK_THROWS_AS(run_enhance(workspace(j), quiet(log)), PipelineError);
  }

  SECTION("identity pipeline changes nothing") {
    Json k = j;
    k["enhance"] = {{"mask_source", "identity"}};
    run_enhance(workspace(k), quiet(log));
    run_evaluate(workspace(k), quiet(log));
    std::ifstream in(dir / "reports" / "metrics.jsonl");
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) {
      const Json r = Json::parse(line);
      ++rows;
      CHECK(r["status"] == "ok");
      CHECK(std::abs(r["improvement"]["fw_segsnr_left"].get<double>()) < 1e-6);
      CHECK(std::abs(r["improvement"]["fw_segsnr_right"].get<double>()) < 1e-6);
      CHECK(std::abs(r["rms_ild_error"].get<double>()) < 1e-6);
      CHECK(r["phase_preserved"] == true);
    }
    CHECK(rows == 4);
    CHECK(fs::exists(dir / "reports" / "summary.md"));
    CHECK(fs::exists(dir / "reports" / "ild_error_vs_azimuth.svg"));
  }

  SECTION("a broken row fails alone") {
    Json k = j;
    k["enhance"] = {{"mask_source", "identity"}};
    run_enhance(workspace(k), quiet(log));
    Manifest m = workspace(k).load_manifest();
    const fs::path enh = dir / m.rows[1].artifacts.at("enhanced").path;
    BinauralSignal e = read_wav_binaural(enh);
    const std::size_t n = e.size() - 100;
    e.left.samples.resize(n);
    e.right.samples.resize(n);
    write_wav(e, enh, SampleFormat::float32);
    const EvaluationSummary s = run_evaluate(workspace(k), quiet(log));
    CHECK(s.report.failed == 1);
    CHECK(s.report.computed == 3);
  }
}

TEST_CASE("command line", "[cli]") {
  testing::TempDir dir("exe");
  save_json_file(dir / "run.json", small_config(dir / "out", 2));
  const std::string cfg = "-c " + (dir / "run.json").string();
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("print-config " + cfg) == 0);
  CHECK(run_cli("print-config " + cfg + " --set bogus.key=1") == 1);
  CHECK(run_cli("no-such-stage") == 1);
  CHECK(run_cli("target-mask " + cfg) == 1);  // nothing spatialized yet
  CHECK(run_cli("run " + cfg + " --mask-source identity") == 0);
  CHECK(fs::exists(dir / "out" / "reports" / "metrics.jsonl"));
  CHECK(fs::exists(dir / "out" / "config.json"));

  Manifest m = manifest_from_json(load_json_file(dir / "out" / "manifest.json"));
  const fs::path enh = dir / "out" / m.rows[0].artifacts.at("enhanced").path;
  BinauralSignal e = read_wav_binaural(enh);
  e.left.samples.resize(300);
  e.right.samples.resize(300);
  write_wav(e, enh, SampleFormat::float32);
  CHECK(run_cli("evaluate " + cfg + " --set enhance.mask_source=identity") == 2);
}
