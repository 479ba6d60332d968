#include <doctest.h>

#include <bpsl/constants.hpp>
#include <bpsl/error.hpp>
#include <bpsl/signal.hpp>

#include <sstream>

#include "support.hpp"

using namespace bpsl;

namespace {

TimeSignal noise(SplitMix64& rng, std::size_t n) {
  TimeSignal s;
  s.samples.resize(n);
  for (double& v : s.samples) v = rng.normal();
  return s;
}

}  // namespace

TEST_CASE("forward DFT matches the textbook sum") {
  SplitMix64 rng(1);
  for (std::size_t n : {100u, 37u}) {
    const TimeSignal s = noise(rng, n);
    const Spectrum x = forward_dft(s, 128);
    const auto ref = bpsl::test::naive_dft(s.samples, 128);
    REQUIRE(x.size() == 65);
    CHECK(x.padded_length == 128);
    CHECK(x.frame_length == n);
    for (std::size_t k = 0; k < ref.size(); ++k) CHECK(std::abs(x.bins[k] - ref[k]) < 1e-9);
  }
}

TEST_CASE("inverse DFT restores the zero-padded frame") {
  SplitMix64 rng(2);
  const TimeSignal s = noise(rng, 300);
  const TimeSignal back = inverse_dft(forward_dft(s, 512));
  REQUIRE(back.size() == 512);
  for (std::size_t t = 0; t < 300; ++t) CHECK(back.samples[t] == doctest::Approx(s.samples[t]).epsilon(1e-12));
  for (std::size_t t = 300; t < 512; ++t) CHECK(std::abs(back.samples[t]) < 1e-12);
}

TEST_CASE("spectrum energy follows Parseval") {
  SplitMix64 rng(3);
  const TimeSignal s = noise(rng, 200);
  CHECK(forward_dft(s, 256).energy() == doctest::Approx(s.energy()).epsilon(1e-12));
  CHECK(forward_dft(s, 255).energy() == doctest::Approx(s.energy()).epsilon(1e-12));
}

TEST_CASE("pad_to_end places the payload last") {
  const TimeSignal s{{1, 2, 3}, 8000};
  const TimeSignal p = pad_to_end(s, 6);
  CHECK(p.samples == std::vector<double>{0, 0, 0, 1, 2, 3});
  CHECK(p.sample_rate == 8000);
  CHECK_THROWS_AS(pad_to_end(s, 2), Error);
  CHECK_THROWS_AS(forward_dft(s, 2), Error);
}

TEST_CASE("self-correlation peaks at one with zero lag") {
  SplitMix64 rng(4);
  const TimeSignal s = noise(rng, 500);
  const auto c = xcorr_peak(s, s);
  CHECK(c.a_cc == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(c.l_cc == 0);
}

TEST_CASE("a delayed impulse gives a positive lag") {
  TimeSignal p{std::vector<double>(64, 0.0)};
  TimeSignal q = p;
  p.samples[10] = 1.0;
  q.samples[15] = 1.0;
  const auto c = xcorr_peak(p, q);
  CHECK(c.l_cc == 5);
  CHECK(c.a_cc == doctest::Approx(1.0));
  const auto r = xcorr_peak(q, p);
  CHECK(r.l_cc == -5);
  CHECK(r.a_cc == doctest::Approx(1.0));
}

TEST_CASE("linear and circular correlation match direct summation") {
  SplitMix64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 40 + static_cast<std::size_t>(rng.uniform() * 60);
    const TimeSignal p = noise(rng, n);
    const TimeSignal q = noise(rng, n);
    const auto [lin_v, lin_l] = bpsl::test::brute_xcorr(p.samples, q.samples, false);
    const auto lin = xcorr_peak(p, q);
    CHECK(lin.a_cc == doctest::Approx(lin_v).epsilon(1e-9));
    CHECK(lin.l_cc == lin_l);
    const auto [cir_v, cir_l] = bpsl::test::brute_xcorr(p.samples, q.samples, true);
    const auto cir = xcorr_peak_circular(p, q);
    CHECK(cir.a_cc == doctest::Approx(cir_v).epsilon(1e-9));
    CHECK(cir.l_cc == cir_l);
  }
}

TEST_CASE("swapping correlation arguments negates the lag") {
  SplitMix64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const TimeSignal p = noise(rng, 128);
    const TimeSignal q = noise(rng, 128);
    const auto a = xcorr_peak(p, q);
    const auto b = xcorr_peak(q, p);
    CHECK(a.a_cc == doctest::Approx(b.a_cc).epsilon(1e-12));
    CHECK(a.l_cc == -b.l_cc);
    CHECK(a.a_cc <= 1.0);
    CHECK(a.a_cc >= -1.0);
    CHECK(std::labs(a.l_cc) < 128);
  }
}

TEST_CASE("peak ties go to the smaller lag magnitude, then the negative lag") {
  // values[i] is lag i - 5.
  const std::vector<double> two_sided{0, 0, 1, 0, 0, 0, 0, 0, 1, 0, 0};  // lags -3 and +3
  CHECK(pick_peak(two_sided, -5, 1.0).l_cc == -3);
  const std::vector<double> nearer{1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0};  // lags -5 and +2
  CHECK(pick_peak(nearer, -5, 1.0).l_cc == 2);
  CHECK_THROWS_AS(pick_peak(std::vector<double>{}, 0, 1.0), Error);
}

TEST_CASE("correlation of a silent signal is an error") {
  const TimeSignal z{std::vector<double>(16, 0.0)};
  TimeSignal s = z;
  s.samples[3] = 1.0;
  CHECK_THROWS_AS(xcorr_peak(z, s), Error);
  CHECK_THROWS_AS(xcorr_peak_circular(s, z), Error);
  CHECK_THROWS_AS(xcorr_peak(s, TimeSignal{std::vector<double>(8, 1.0)}), Error);
}

TEST_CASE("raw audio survives a round trip at float precision") {
  SplitMix64 rng(8);
  std::vector<TimeSignal> ch{noise(rng, 50), noise(rng, 50), noise(rng, 50)};
  std::stringstream ss;
  write_raw_audio(ss, ch);
  const auto back = read_raw_audio(ss);
  REQUIRE(back.size() == 3);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(back[c].sample_rate == kDefaultSampleRate);
    for (std::size_t t = 0; t < 50; ++t)
      CHECK(back[c].samples[t] == static_cast<double>(static_cast<float>(ch[c].samples[t])));
  }
  std::istringstream bad("channels=2 rate=48000 frames=10\nshort");
  CHECK_THROWS_AS(read_raw_audio(bad), Error);
}

TEST_CASE("impulse and bin-aligned sinusoid spectra") {
  TimeSignal delta{std::vector<double>(64, 0.0)};
  delta.samples[0] = 1.0;
  for (const auto& b : forward_dft(delta, 128).bins) CHECK(std::abs(b - cdouble(1.0)) < 1e-12);

  TimeSignal tone{std::vector<double>(256)};
  for (std::size_t t = 0; t < 256; ++t) tone.samples[t] = std::cos(2 * kPi * 10.0 * double(t) / 256.0);
  const Spectrum s = forward_dft(tone, 256);
  for (std::size_t f = 0; f < s.size(); ++f) CHECK(std::abs(std::abs(s.bins[f]) - (f == 10 ? 128.0 : 0.0)) < 1e-9);
}

TEST_CASE("correlation peak is invariant to positive scaling") {
  SplitMix64 rng(31);
  const TimeSignal p = noise(rng, 2048);
  TimeSignal q = noise(rng, 2048);
  for (std::size_t t = 40; t < 2048; ++t) q.samples[t] += 2.0 * p.samples[t - 40];
  const CorrelationResult ref = xcorr_peak(p, q);
  for (double c : {1e-3, 0.5, 7.5, 1e4}) {
    TimeSignal scaled = p;
    for (double& v : scaled.samples) v *= c;
    const CorrelationResult r = xcorr_peak(scaled, q);
    CHECK(r.a_cc == doctest::Approx(ref.a_cc).epsilon(1e-12));
    CHECK(r.l_cc == ref.l_cc);
  }
}

TEST_CASE("independent white noise rarely correlates above 0.1") {
  // Monte-Carlo over 1000 pairs of length 8192.
  SplitMix64 rng(32);
  int below = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const CorrelationResult r = xcorr_peak(noise(rng, 8192), noise(rng, 8192));
    CHECK(r.a_cc <= 1.0);
    CHECK(r.a_cc >= -1.0);
    below += r.a_cc < 0.1;
    worst = std::max(worst, r.a_cc);
  }
  CHECK(below >= 990);
  MESSAGE("largest peak over 1000 pairs: " << worst);
}
