// Copyright 2026 The binmask Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "binmask/audio_io.hpp"
#include "test_support.hpp"

using namespace binmask;
using Catch::Approx;

namespace {

void write_raw(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary).write(bytes.data(), std::streamsize(bytes.size()));
}

std::string pcm16_header(std::uint16_t format, std::uint16_t channels, std::uint16_t bits,
                         std::uint32_t data_len) {
  std::string h = "RIFF";
  detail::put<std::uint32_t>(h, 36 + data_len);
  h += "WAVEfmt ";
  detail::put<std::uint32_t>(h, 16);
  detail::put<std::uint16_t>(h, format);
  detail::put<std::uint16_t>(h, channels);
  detail::put<std::uint32_t>(h, 10000);
  detail::put<std::uint32_t>(h, 10000u * channels * bits / 8);
  detail::put<std::uint16_t>(h, std::uint16_t(channels * bits / 8));
  detail::put<std::uint16_t>(h, bits);
  h += "data";
  detail::put<std::uint32_t>(h, data_len);
  return h;
}

}  // namespace

TEST_CASE("read_wav decodes 16-bit PCM", "[audio_io]") {
  testing::TempDir dir("wav");

  SECTION("one second of silence") {
    std::string bytes = pcm16_header(1, 1, 16, 20000) + std::string(20000, '\0');
    write_raw(dir / "silence.wav", bytes);
    Signal s = read_wav_mono(dir / "silence.wav");
    CHECK(s.rate == 10000);
    REQUIRE(s.size() == 10000);
    for (double v : s.samples) CHECK(v == 0.0);
  }

  SECTION("full-scale positive sample") {
    std::string bytes = pcm16_header(1, 1, 16, 2);
    detail::put<std::int16_t>(bytes, 32767);
    write_raw(dir / "fs.wav", bytes);
    CHECK(read_wav_mono(dir / "fs.wav").samples.at(0) == 32767.0 / 32768.0);
  }

  SECTION("stereo maps channel 0 to left") {
    std::string bytes = pcm16_header(1, 2, 16, 8);
    for (std::int16_t v : {100, -200, 300, -400}) detail::put<std::int16_t>(bytes, v);
    write_raw(dir / "st.wav", bytes);
    BinauralSignal b = read_wav_binaural(dir / "st.wav");
    CHECK(b.left.samples == std::vector<double>{100 / 32768.0, 300 / 32768.0});
    CHECK(b.right.samples == std::vector<double>{-200 / 32768.0, -400 / 32768.0});
  }
}

TEST_CASE("read_wav rejects bad input", "[audio_io]") {
  testing::TempDir dir("wavbad");
  write_raw(dir / "junk.wav", "not a wave file at all");
  CHECK_THROWS_AS(read_wav(dir / "junk.wav"), FormatError);

  std::string trunc = pcm16_header(1, 1, 16, 4).substr(0, 30);
  write_raw(dir / "trunc.wav", trunc);
  CHECK_THROWS_AS(read_wav(dir / "trunc.wav"), FormatError);

  std::string mulaw = pcm16_header(7, 1, 8, 2) + "\x01\x02";
  write_raw(dir / "mulaw.wav", mulaw);
  CHECK_THROWS_AS(read_wav(dir / "mulaw.wav"), UnsupportedError);

  std::string pcm24 = pcm16_header(1, 1, 24, 3) + "\x01\x02\x03";
  write_raw(dir / "pcm24.wav", pcm24);
  CHECK_THROWS_AS(read_wav(dir / "pcm24.wav"), UnsupportedError);

  CHECK_THROWS_AS(read_wav(dir / "missing.wav"), IoError);
}

TEST_CASE("write_wav round trips", "[audio_io]") {
  testing::TempDir dir("wavrt");

  SECTION("16-bit round trip stays within one quantization step") {
    Signal s = testing::tone(440.0, 0.9, 0.5);
    auto report = write_wav(s, dir / "tone.wav");
    CHECK_FALSE(report.clipped);
    Signal r = read_wav_mono(dir / "tone.wav");
    REQUIRE(r.size() == s.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) worst = std::max(worst, std::abs(r.samples[i] - s.samples[i]));
    CHECK(worst <= std::ldexp(1.0, -15));
  }

  SECTION("float round trip is exact to float precision") {
    Signal s = testing::white_noise(0.2, 0.2, 3);
    write_wav(s, dir / "f.wav", SampleFormat::float32);
    Signal r = read_wav_mono(dir / "f.wav");
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(r.samples[i] == double(float(s.samples[i])));
  }

  SECTION("out-of-range input saturates with a warning") {
    Signal s{{1.5, -2.0, 0.25}, 10000};
    auto report = write_wav(s, dir / "clip.wav");
    CHECK(report.clipped);
    CHECK(report.clipped_samples == 2);
    Signal r = read_wav_mono(dir / "clip.wav");
    CHECK(r.samples[0] == Approx(1.0).margin(std::ldexp(1.0, -15)));
    CHECK(r.samples[1] == -1.0);
  }

  SECTION("empty signal gives a valid zero-length file") {
    write_wav(Signal{{}, 10000}, dir / "empty.wav");
    Signal r = read_wav_mono(dir / "empty.wav");
    CHECK(r.empty());
    CHECK(r.rate == 10000);
  }

  SECTION("stereo") {
    BinauralSignal b{testing::tone(300, 0.5, 0.1), testing::tone(500, 0.25, 0.1)};
    write_wav(b, dir / "b.wav");
    BinauralSignal r = read_wav_binaural(dir / "b.wav");
    CHECK(r.left.samples[10] == Approx(b.left.samples[10]).margin(1e-4));
    CHECK(r.right.samples[10] == Approx(b.right.samples[10]).margin(1e-4));
  }

  SECTION("unwritable path") {
    CHECK_THROWS_AS(write_wav(Signal{{0.0}, 10000}, dir / "no" / "such" / "x.wav"), IoError);
  }
}

TEST_CASE("active_level follows P.56", "[audio_io][p56]") {
  SECTION("full-scale square wave is 0 dB") {
    Signal s{std::vector<double>(20000), 10000};
    for (std::size_t i = 0; i < s.size(); ++i) s.samples[i] = (i / 25) % 2 ? 1.0 : -1.0;
    CHECK(active_level(s) == Approx(0.0).margin(0.2));
  }

  SECTION("tone at amplitude 0.1 sits 20 dB under a full-scale tone") {
    // Levels are dB re unit RMS, so a full-scale sine reads -3.01 dB.
    double full = active_level(testing::tone(440, 1.0, 2.0));
    double tenth = active_level(testing::tone(440, 0.1, 2.0));
    CHECK(full == Approx(10 * std::log10(0.5)).margin(0.5));
    CHECK(tenth - full == Approx(-20.0).margin(0.5));
    CHECK(tenth == Approx(-23.0103).margin(0.5));
  }

  SECTION("leading silence is gated out") {
    Signal s = testing::white_noise(0.1, 2.0, 7);
    std::fill(s.samples.begin(), s.samples.begin() + 10000, 0.0);
    double active = active_level(s);
    CHECK(active > rms_level(s));
    CHECK(active == Approx(20 * std::log10(0.1)).margin(0.5));
  }

  SECTION("gain equivariance") {
    Signal s = testing::white_noise(0.05, 1.5, 11);
    std::fill(s.samples.begin() + 3000, s.samples.begin() + 8000, 0.0);
    double base = active_level(s);
    for (double g : {0.013, 0.5, 3.7, 40.0}) {
      Signal t = s;
      for (double& v : t.samples) v *= g;
      CHECK(active_level(t) == Approx(base + 20 * std::log10(g)).margin(0.1));
    }
  }

  SECTION("errors") {
    CHECK_THROWS_AS(active_level(Signal{std::vector<double>(5000, 0.0), 10000}), UndefinedLevelError);
    CHECK_THROWS_AS(active_level(Signal{std::vector<double>(500, 0.1), 10000}), InvalidArgument);
  }
}

TEST_CASE("normalize_active_level is a pure gain", "[audio_io][p56]") {
  Signal s = testing::white_noise(0.1, 1.0, 5);
  const double level = active_level(s);

  SECTION("gain arithmetic") {
    Signal t = s;
    for (double& v : t.samples) v *= amplitude_from_db(-20.0 - level);
    Signal n = normalize_active_level(t, 0.0);
    CHECK(n.samples[100] / t.samples[100] == Approx(10.0).epsilon(1e-6));
  }

  SECTION("already at target is identity") {
    Signal n = normalize_active_level(s, level);
    for (std::size_t i = 0; i < s.size(); i += 97) CHECK(n.samples[i] == Approx(s.samples[i]).epsilon(1e-6));
  }

  SECTION("re-measure hits the target and the ratio is constant") {
    Signal n = normalize_active_level(s, -26.0);
    CHECK(active_level(n) == Approx(-26.0).margin(0.1));
    const double ratio = n.samples[0] / s.samples[0];
    CHECK(ratio > 0.0);
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s.samples[i] != 0.0) CHECK(n.samples[i] / s.samples[i] == Approx(ratio).epsilon(1e-12));
  }

  SECTION("binaural normalization keeps the level difference") {
    BinauralSignal b{s, s};
    for (double& v : b.right.samples) v *= 0.5;
    BinauralSignal n = normalize_active_level(b, 0.0);
    CHECK(active_level(n.left) == Approx(0.0).margin(0.1));
    CHECK(n.left.samples[10] / n.right.samples[10] == Approx(2.0).epsilon(1e-12));
  }

  SECTION("silent input propagates the error") {
    CHECK_THROWS_AS(normalize_active_level(Signal{std::vector<double>(5000, 0.0), 10000}, 0.0),
                    UndefinedLevelError);
  }
}
