#pragma once

#include <complex>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace bpsl {

using cdouble = std::complex<double>;

inline constexpr double kDefaultSampleRate = 48000.0;

struct TimeSignal {
  std::vector<double> samples;
  double sample_rate = kDefaultSampleRate;

  std::size_t size() const { return samples.size(); }
  double energy() const;
  /// Throws unless non-empty, finite and with a positive rate.
  void validate() const;
};

/// One-sided spectrum: bins 0..padded_length/2 (DC through Nyquist).
struct Spectrum {
  std::vector<cdouble> bins;
  double sample_rate = kDefaultSampleRate;
  std::size_t padded_length = 0;
  std::size_t frame_length = 0;

  std::size_t size() const { return bins.size(); }
  double bin_frequency(std::size_t f) const {
    return static_cast<double>(f) * sample_rate / static_cast<double>(padded_length);
  }
  /// Time-domain energy via Parseval with one-sided weights.
  double energy() const;
  bool same_grid(const Spectrum& o) const {
    return padded_length == o.padded_length && sample_rate == o.sample_rate;
  }
};

struct CorrelationResult {
  double a_cc = 0.0;  // peak of the energy-normalized cross-correlation, in [-1, 1]
  long l_cc = 0;      // lag of the peak; positive when q lags p
};

/// Zero-pads s to pad_to samples (payload first) and returns the one-sided DFT.
Spectrum forward_dft(const TimeSignal& s, std::size_t pad_to);
/// Real inverse of a one-sided spectrum; returns padded_length samples.
TimeSignal inverse_dft(const Spectrum& x);

/// Payload copied to the end of a zero buffer of length pad_to.
TimeSignal pad_to_end(const TimeSignal& s, std::size_t pad_to);

/// Full (linear) cross-correlation c[tau] = sum_t p[t] q[t + tau], normalized by
/// sqrt(sum p^2 * sum q^2). Ties go to the smallest |lag|, then the negative one.
CorrelationResult xcorr_peak(const TimeSignal& p, const TimeSignal& q);

/// Circular variant over lags in [-N/2, N/2) for signals living on one periodic frame.
CorrelationResult xcorr_peak_circular(const TimeSignal& p, const TimeSignal& q);

/// Index of the maximum of a lag-indexed correlation with the tie rule above.
/// values[i] holds lag lags_begin + i.
CorrelationResult pick_peak(std::span<const double> values, long lags_begin, double scale);

// Low-level FFT helpers (FFTW-backed, thread-safe).
std::vector<cdouble> rfft(std::span<const double> x);
/// Inverse of rfft for a real signal of length n (n/2 + 1 bins). Divides by n.
std::vector<double> irfft(std::span<const cdouble> bins, std::size_t n);

/// Raw multichannel audio: a text header line `channels=<C> rate=<Hz> frames=<N>`
/// followed by C*N little-endian float32 samples, channel-interleaved.
void write_raw_audio(std::ostream& out, std::span<const TimeSignal> channels);
std::vector<TimeSignal> read_raw_audio(std::istream& in);
void save_raw_audio(const std::filesystem::path& path, std::span<const TimeSignal> channels);
std::vector<TimeSignal> load_raw_audio(const std::filesystem::path& path);

}  // namespace bpsl
