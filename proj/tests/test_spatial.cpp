// Copyright 2026 The binmask Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch2/catch_amalgamated.hpp>

#include <complex>

#include "binmask/spatial.hpp"
#include "binmask/synthetic.hpp"
#include "test_support.hpp"

using namespace binmask;
using Catch::Approx;

namespace {

std::complex<double> response(const std::vector<double>& h, double f, int rate) {
  std::complex<double> acc = 0.0;
  for (std::size_t n = 0; n < h.size(); ++n)
    acc += h[n] * std::polar(1.0, -2.0 * std::numbers::pi * f * double(n) / rate);
  return acc;
}

// Mean low-frequency phase delay of left relative to right, in seconds.
double measured_itd(const HrirPair& h) {
  double sum = 0.0;
  int count = 0;
  for (double f = 100.0; f <= 600.0; f += 50.0) {
    auto ratio = response(h.left, f, h.rate) / response(h.right, f, h.rate);
    sum += -std::arg(ratio) / (2.0 * std::numbers::pi * f);
    ++count;
  }
  return sum / count;
}

}  // namespace

TEST_CASE("synthetic HRIRs", "[spatial]") {
  SECTION("frontal source is symmetric") {
    HrirPair h = synth_hrir(0.0, 10000);
    CHECK(h.left == h.right);
    CHECK(h.left[16] == Approx(1.0).epsilon(1e-15));
  }

  SECTION("30 degrees: right ear leads by the Woodworth delay") {
    // (0.0875 / 343) * (pi/6 + 0.5), evaluated independently: 261.122 us.
    CHECK(woodworth_itd(30.0) * 1e6 == Approx(261.122136632).epsilon(1e-9));
    HrirPair h = synth_hrir(30.0, 10000);
    CHECK(measured_itd(h) * 1e6 == Approx(261.122).margin(2.0));
    // ILD of 0.15 dB per degree, right louder.
    double l = std::abs(response(h.left, 500.0, 10000));
    double r = std::abs(response(h.right, 500.0, 10000));
    CHECK(20 * std::log10(r / l) == Approx(4.5).margin(0.05));
  }

  SECTION("mirror symmetry") {
    for (double az : {5.0, 30.0, 65.0, 90.0}) {
      HrirPair p = synth_hrir(az, 10000), n = synth_hrir(-az, 10000);
      for (std::size_t i = 0; i < p.left.size(); ++i) {
        CHECK(p.left[i] == Approx(n.right[i]).margin(1e-15));
        CHECK(p.right[i] == Approx(n.left[i]).margin(1e-15));
      }
    }
  }

  SECTION("ITD grows with azimuth") {
    double prev = -1.0;
    for (int az = 0; az <= 90; az += 5) {
      double itd = woodworth_itd(az);
      CHECK(itd > prev);
      prev = itd;
    }
    CHECK(measured_itd(synth_hrir(60.0, 10000)) > measured_itd(synth_hrir(30.0, 10000)));
  }

  SECTION("out of range") { CHECK_THROWS_AS(synth_hrir(95.0, 10000), InvalidArgument); }
}

TEST_CASE("HRIR directory loading", "[spatial]") {
  testing::TempDir dir("hrir");
  BinauralSignal impulse{Signal{{1.0, 0.0, 0.0}, 10000}, Signal{{1.0, 0.0, 0.0}, 10000}};
  write_wav(impulse, dir / hrir_filename(30), SampleFormat::float32);
  write_wav(impulse, dir / hrir_filename(-45), SampleFormat::float32);
  write_wav(Signal{{1.0}, 10000}, dir / hrir_filename(60));
  BinauralSignal wrong_rate = impulse;
  wrong_rate.left.rate = wrong_rate.right.rate = 16000;
  write_wav(wrong_rate, dir / hrir_filename(10));

  CHECK(hrir_filename(30) == "az+30.wav");
  CHECK(hrir_filename(-45) == "az-45.wav");
  CHECK(hrir_filename(0) == "az+0.wav");

  HrirPair h = load_hrir(dir.path(), 30.0, 10000);
  CHECK(h.azimuth == 30.0);
  CHECK(h.left == std::vector<double>{1.0, 0.0, 0.0});
  CHECK(spatialize(Signal{{0.5, -0.25}, 10000}, h).left.samples ==
        std::vector<double>{0.5, -0.25, 0.0, 0.0});

  // Nearest entry on the 5 degree grid.
  CHECK(load_hrir(dir.path(), 31.9, 10000).azimuth == 30.0);
  CHECK(load_hrir(dir.path(), -43.0, 10000).azimuth == -45.0);
  CHECK_THROWS_AS(load_hrir(dir.path(), 20.0, 10000), IoError);
  CHECK_THROWS_AS(load_hrir(dir.path(), 60.0, 10000), FormatError);
  CHECK_THROWS_AS(load_hrir(dir.path(), 10.0, 10000), InvalidArgument);
  CHECK(list_hrir_azimuths(dir.path()) == std::vector<int>{-45, 10, 30, 60});
}

TEST_CASE("spatialize", "[spatial]") {
  Signal x = testing::white_noise(0.1, 0.1, 4);

  SECTION("unit impulse is identity") {
    HrirPair id{{1.0}, {1.0}, 0.0, 10000};
    BinauralSignal b = spatialize(x, id);
    CHECK(b.left.samples == x.samples);
    CHECK(b.right.samples == x.samples);
  }

  SECTION("pure delay") {
    HrirPair d{{0.0, 0.0, 0.0, 1.0}, {1.0}, 0.0, 10000};
    BinauralSignal b = spatialize(x, d);
    REQUIRE(b.left.size() == x.size() + 3);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(b.left.samples[i + 3] == x.samples[i]);
    CHECK(b.right.samples[x.size()] == 0.0);
  }

  SECTION("linearity") {
    HrirPair h = synth_hrir(40.0, 10000);
    BinauralSignal a = spatialize(x, h);
    Signal x2 = x;
    for (double& v : x2.samples) v *= 2.0;
    BinauralSignal b = spatialize(x2, h);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(b.left.samples[i] == 2.0 * a.left.samples[i]);
      CHECK(b.right.samples[i] == 2.0 * a.right.samples[i]);
    }
  }

  SECTION("rate mismatch") {
    HrirPair h = synth_hrir(0.0, 16000);
    CHECK_THROWS_AS(spatialize(x, h), InvalidArgument);
  }
}

TEST_CASE("mix_at_snr", "[spatial]") {
  HrirPair h30 = synth_hrir(30.0, 10000), h0 = synth_hrir(0.0, 10000);
  BinauralSignal speech = spatialize(speech_like(3), h30);
  BinauralSignal noise = spatialize(noise_source("white", 5.0, 10000, 8), h0);
  std::mt19937_64 rng(1);

  SECTION("equal levels at 0 dB need unit gain") {
    BinauralSignal a = spatialize(noise_source("white", 2.0, 10000, 1), h0);
    BinauralSignal b = spatialize(noise_source("white", 2.0, 10000, 2), h0);
    Mixture m = mix_at_snr(a, b, 0.0, 0, SnrReference::rms);
    CHECK(m.noise_gain == Approx(1.0).epsilon(1e-9));
  }

  SECTION("re-measured SNR matches the request") {
    for (double snr : {-15.0, -5.0, 0.0, 10.0}) {
      Mixture m = mix_at_snr(speech, noise, snr, rng);
      double measured = 0.5 * (active_level(speech.left) - rms_level(m.noise.left)) +
                        0.5 * (active_level(speech.right) - rms_level(m.noise.right));
      CHECK(measured == Approx(snr).margin(0.1));
      for (std::size_t i = 0; i < speech.size(); i += 101)
        CHECK(m.noisy.left.samples[i] == Approx(speech.left.samples[i] + m.noise.left.samples[i]));
    }
  }

  SECTION("single scalar keeps the noise ILD") {
    Mixture m = mix_at_snr(speech, noise, -5.0, 1234);
    for (std::size_t i = 0; i < speech.size(); i += 37) {
      const double l0 = noise.left.samples[i + 1234], r0 = noise.right.samples[i + 1234];
      CHECK(m.noise.left.samples[i] == Approx(m.noise_gain * l0));
      CHECK(m.noise.right.samples[i] == Approx(m.noise_gain * r0));
    }
  }

  SECTION("very high SNR leaves the speech") {
    Mixture m = mix_at_snr(speech, noise, 100.0, rng);
    double err = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < speech.size(); ++i) {
      err += std::pow(m.noisy.left.samples[i] - speech.left.samples[i], 2);
      ref += std::pow(speech.left.samples[i], 2);
    }
    CHECK(10 * std::log10(err / ref) < -80.0);
  }

  SECTION("seeded offsets are reproducible") {
    std::mt19937_64 a(42), b(42);
    CHECK(mix_at_snr(speech, noise, 0.0, a).offset == mix_at_snr(speech, noise, 0.0, b).offset);
  }

  SECTION("errors") {
    BinauralSignal silent = noise;
    std::fill(silent.left.samples.begin(), silent.left.samples.end(), 0.0);
    std::fill(silent.right.samples.begin(), silent.right.samples.end(), 0.0);
    CHECK_THROWS_AS(mix_at_snr(speech, silent, 0.0, 0), InvalidArgument);
    BinauralSignal short_noise{Signal{std::vector<double>(100, 0.1), 10000},
                               Signal{std::vector<double>(100, 0.1), 10000}};
    CHECK_THROWS_AS(mix_at_snr(speech, short_noise, 0.0, 0), InvalidArgument);
  }
}

TEST_CASE("synthetic material is deterministic", "[spatial][synthetic]") {
  CHECK(speech_like(5).samples == speech_like(5).samples);
  CHECK(speech_like(5).samples != speech_like(6).samples);
  Signal n = noise_source("pink", 1.0, 10000, 3);
  CHECK(rms_level(n) == Approx(0.0).margin(1e-9));
  CHECK_THROWS_AS(noise_source("brown", 1.0, 10000, 3), InvalidArgument);
}
