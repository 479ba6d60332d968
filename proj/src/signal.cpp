#include "bpsl/signal.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>

#include "bpsl/error.hpp"

namespace bpsl {

namespace {

// Correlation values closer than this are treated as equal when picking a peak.
constexpr double kTieTolerance = 1e-12;

struct Plans {
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;
};

// FFTW planning is not thread-safe; execution with the new-array API is.
const Plans& plans_for(std::size_t n) {
  static std::mutex mutex;
  static std::map<std::size_t, Plans> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<double> real(n);
  std::vector<cdouble> cplx(n / 2 + 1);
  auto* r = real.data();
  auto* c = reinterpret_cast<fftw_complex*>(cplx.data());
  const int len = static_cast<int>(n);
  Plans p;
  p.forward = fftw_plan_dft_r2c_1d(len, r, c, FFTW_ESTIMATE | FFTW_UNALIGNED);
  p.inverse = fftw_plan_dft_c2r_1d(len, c, r, FFTW_ESTIMATE | FFTW_UNALIGNED);
  if (!p.forward || !p.inverse) throw Error("FFTW planning failed for length " + std::to_string(n));
  return cache.emplace(n, p).first->second;
}

double one_sided_weight(std::size_t f, std::size_t n) {
  return (f == 0 || 2 * f == n) ? 1.0 : 2.0;
}

}  // namespace

double TimeSignal::energy() const {
  double e = 0.0;
  for (double v : samples) e += v * v;
  return e;
}

void TimeSignal::validate() const {
  if (samples.empty()) throw Error("time signal is empty");
  if (!(sample_rate > 0.0)) throw Error("sample rate must be positive");
  for (double v : samples) {
    if (!std::isfinite(v)) throw Error("time signal has non-finite samples");
  }
}

double Spectrum::energy() const {
  double e = 0.0;
  for (std::size_t f = 0; f < bins.size(); ++f) e += one_sided_weight(f, padded_length) * std::norm(bins[f]);
  return e / static_cast<double>(padded_length);
}

std::vector<cdouble> rfft(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n == 0) throw Error("rfft of empty input");
  std::vector<double> in(x.begin(), x.end());
  std::vector<cdouble> out(n / 2 + 1);
  fftw_execute_dft_r2c(plans_for(n).forward, in.data(), reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

std::vector<double> irfft(std::span<const cdouble> bins, std::size_t n) {
  if (bins.size() != n / 2 + 1) throw Error("irfft: bin count does not match length");
  std::vector<cdouble> in(bins.begin(), bins.end());
  // Conjugate-symmetric reconstruction: DC and Nyquist must be real.
  in.front().imag(0.0);
  if (n % 2 == 0) in.back().imag(0.0);
  std::vector<double> out(n);
  fftw_execute_dft_c2r(plans_for(n).inverse, reinterpret_cast<fftw_complex*>(in.data()), out.data());
  const double scale = 1.0 / static_cast<double>(n);
  for (double& v : out) v *= scale;
  return out;
}

Spectrum forward_dft(const TimeSignal& s, std::size_t pad_to) {
  if (pad_to < s.size()) throw Error("forward_dft: pad length shorter than the signal");
  if (pad_to == 0) throw Error("forward_dft: empty signal");
  std::vector<double> buf(pad_to, 0.0);
  std::copy(s.samples.begin(), s.samples.end(), buf.begin());
  Spectrum out;
  out.bins = rfft(buf);
  out.sample_rate = s.sample_rate;
  out.padded_length = pad_to;
  out.frame_length = s.size();
  return out;
}

TimeSignal inverse_dft(const Spectrum& x) {
  return TimeSignal{irfft(x.bins, x.padded_length), x.sample_rate};
}

TimeSignal pad_to_end(const TimeSignal& s, std::size_t pad_to) {
  if (pad_to < s.size()) throw Error("pad_to_end: pad length shorter than the signal");
  TimeSignal out{std::vector<double>(pad_to, 0.0), s.sample_rate};
  std::copy(s.samples.begin(), s.samples.end(), out.samples.end() - static_cast<long>(s.size()));
  return out;
}

CorrelationResult pick_peak(std::span<const double> values, long lags_begin, double scale) {
  if (values.empty()) throw Error("pick_peak: no lags");
  auto preferred = [](long lag, long other) {
    return std::labs(lag) < std::labs(other) || (std::labs(lag) == std::labs(other) && lag < other);
  };
  CorrelationResult best{values[0] * scale, lags_begin};
  for (std::size_t i = 1; i < values.size(); ++i) {
    const double v = values[i] * scale;
    const long lag = lags_begin + static_cast<long>(i);
    if (v > best.a_cc + kTieTolerance) {
      best = {v, lag};
    } else if (v >= best.a_cc - kTieTolerance && preferred(lag, best.l_cc)) {
      best = {std::max(v, best.a_cc), lag};
    }
  }
  best.a_cc = std::clamp(best.a_cc, -1.0, 1.0);
  return best;
}

namespace {

double correlation_scale(const TimeSignal& p, const TimeSignal& q) {
  if (p.size() != q.size()) throw Error("xcorr_peak: signals differ in length");
  if (p.sample_rate != q.sample_rate) throw Error("xcorr_peak: signals differ in sample rate");
  const double ep = p.energy();
  const double eq = q.energy();
  if (!(ep > 0.0) || !(eq > 0.0)) throw Error("xcorr_peak: zero-energy input");
  return 1.0 / std::sqrt(ep * eq);
}

}  // namespace

CorrelationResult xcorr_peak(const TimeSignal& p, const TimeSignal& q) {
  const double scale = correlation_scale(p, q);
  const std::size_t n = p.size();
  const std::size_t m = std::bit_ceil(2 * n);
  std::vector<double> a(m, 0.0);
  std::vector<double> b(m, 0.0);
  std::copy(p.samples.begin(), p.samples.end(), a.begin());
  std::copy(q.samples.begin(), q.samples.end(), b.begin());
  auto fa = rfft(a);
  const auto fb = rfft(b);
  for (std::size_t f = 0; f < fa.size(); ++f) fa[f] = std::conj(fa[f]) * fb[f];
  const auto c = irfft(fa, m);

  // Lags -(n-1)..(n-1); negative lag tau lives at index m + tau.
  std::vector<double> ordered(2 * n - 1);
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    const long lag = static_cast<long>(i) - static_cast<long>(n - 1);
    ordered[i] = c[static_cast<std::size_t>(lag < 0 ? static_cast<long>(m) + lag : lag)];
  }
  return pick_peak(ordered, -static_cast<long>(n - 1), scale);
}

CorrelationResult xcorr_peak_circular(const TimeSignal& p, const TimeSignal& q) {
  const double scale = correlation_scale(p, q);
  const std::size_t n = p.size();
  auto fa = rfft(p.samples);
  const auto fb = rfft(q.samples);
  for (std::size_t f = 0; f < fa.size(); ++f) fa[f] = std::conj(fa[f]) * fb[f];
  const auto c = irfft(fa, n);
  const long half = static_cast<long>(n / 2);
  std::vector<double> ordered(n);
  for (std::size_t i = 0; i < n; ++i) {
    const long lag = static_cast<long>(i) - half;
    ordered[i] = c[static_cast<std::size_t>(lag < 0 ? static_cast<long>(n) + lag : lag)];
  }
  return pick_peak(ordered, -half, scale);
}

void write_raw_audio(std::ostream& out, std::span<const TimeSignal> channels) {
  if (channels.empty()) throw Error("write_raw_audio: no channels");
  const std::size_t frames = channels.front().size();
  for (const auto& ch : channels) {
    if (ch.size() != frames || ch.sample_rate != channels.front().sample_rate)
      throw Error("write_raw_audio: channels differ in length or rate");
  }
  out << "channels=" << channels.size() << " rate=" << static_cast<long long>(channels.front().sample_rate)
      << " frames=" << frames << '\n';
  std::vector<unsigned char> buf(channels.size() * frames * 4);
  std::size_t pos = 0;
  for (std::size_t t = 0; t < frames; ++t) {
    for (const auto& ch : channels) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(ch.samples[t]));
      for (int b = 0; b < 4; ++b) buf[pos++] = static_cast<unsigned char>((bits >> (8 * b)) & 0xFFu);
    }
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

std::vector<TimeSignal> read_raw_audio(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw ParseError("<audio>", 1, "missing header");
  long long channels = -1;
  long long rate = -1;
  long long frames = -1;
  if (std::sscanf(header.c_str(), "channels=%lld rate=%lld frames=%lld", &channels, &rate, &frames) != 3 ||
      channels <= 0 || rate <= 0 || frames < 0)
    throw ParseError("<audio>", 1, "expected 'channels=<C> rate=<Hz> frames=<N>'");
  const auto total = static_cast<std::size_t>(channels * frames);
  std::vector<unsigned char> buf(total * 4);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size()) throw Error("raw audio truncated");
  std::vector<TimeSignal> out(static_cast<std::size_t>(channels));
  for (auto& ch : out) {
    ch.sample_rate = static_cast<double>(rate);
    ch.samples.resize(static_cast<std::size_t>(frames));
  }
  std::size_t pos = 0;
  for (std::size_t t = 0; t < static_cast<std::size_t>(frames); ++t) {
    for (auto& ch : out) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(buf[pos++]) << (8 * b);
      ch.samples[t] = std::bit_cast<float>(bits);
    }
  }
  return out;
}

void save_raw_audio(const std::filesystem::path& path, std::span<const TimeSignal> channels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_raw_audio(out, channels);
}

std::vector<TimeSignal> load_raw_audio(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_raw_audio(in);
}

}  // namespace bpsl
