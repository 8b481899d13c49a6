#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "sumo/common.hpp"

namespace sumo::dsp {

// One second-order filter section, direct form II transposed.
// y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2] - a1 y[n-1] - a2 y[n-2]
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;
};

struct BiquadCascade {
  std::vector<Biquad> sections;
  int order = 0;  // prototype order; a band-pass realizes 2*order poles
  double low_hz = 0.0;
  double high_hz = 0.0;
  double sample_rate_hz = 0.0;
};

namespace detail {

using cd = std::complex<double>;

// Steady-state output value and delay-line state of one section driven by a
// constant unit input. Used to suppress start-up transients in filtfilt.
struct SectionSteadyState {
  double gain;  // DC gain of the section
  double z1, z2;
};

inline SectionSteadyState steady_state(const Biquad& s) {
  double denom = 1.0 + s.a1 + s.a2;
  double y = (s.b0 + s.b1 + s.b2) / denom;
  return {y, y - s.b0, s.b2 - s.a2 * y};
}

}  // namespace detail

// Butterworth band-pass as cascaded biquads. `order` is the analog prototype
// order (the convention of the common filter-design toolboxes), so the
// resulting band-pass has 2*order poles in `order` sections.
inline BiquadCascade design_bandpass(int order, double low_hz, double high_hz, double fs) {
  using detail::cd;
  if (order < 2 || order % 2 != 0)
    throw ConfigError("band-pass order must be even and >= 2");
  if (!(low_hz > 0.0) || !(low_hz < high_hz) || !(high_hz < fs / 2.0))
    throw ConfigError("band edges must satisfy 0 < low < high < fs/2");

  const int n = order;
  // analog low-pass prototype poles on the unit circle, left half plane
  std::vector<cd> proto(n);
  for (int k = 0; k < n; ++k) {
    double phi = M_PI * (2.0 * k + n + 1.0) / (2.0 * n);
    proto[k] = cd(std::cos(phi), std::sin(phi));
  }

  // prewarped band edges for the bilinear transform
  const double warp_lo = 2.0 * fs * std::tan(M_PI * low_hz / fs);
  const double warp_hi = 2.0 * fs * std::tan(M_PI * high_hz / fs);
  const double bw = warp_hi - warp_lo;
  const double w0sq = warp_lo * warp_hi;

  // low-pass -> band-pass: each prototype pole splits into two
  std::vector<cd> apoles;
  apoles.reserve(2 * n);
  for (const cd& p : proto) {
    cd bp = 0.5 * bw * p;
    cd disc = std::sqrt(bp * bp - cd(w0sq, 0.0));
    apoles.push_back(bp + disc);
    apoles.push_back(bp - disc);
  }
  // n analog zeros at s = 0, n implicit zeros at infinity; gain bw^n
  const double analog_gain = std::pow(bw, n);

  // bilinear transform, K = 2 fs
  const double K = 2.0 * fs;
  std::vector<cd> zpoles;
  zpoles.reserve(2 * n);
  cd gain_num(1.0, 0.0), gain_den(1.0, 0.0);
  for (const cd& s : apoles) {
    zpoles.push_back((K + s) / (K - s));
    gain_den *= (K - s);
  }
  for (int i = 0; i < n; ++i) gain_num *= cd(K, 0.0);  // analog zeros at s = 0
  double digital_gain = analog_gain * (gain_num / gain_den).real();

  // group digital poles into conjugate pairs; real poles pair among themselves
  std::vector<cd> upper, reals;
  for (const cd& p : zpoles) {
    if (std::abs(p.imag()) < 1e-12)
      reals.push_back(cd(p.real(), 0.0));
    else if (p.imag() > 0.0)
      upper.push_back(p);
  }
  std::sort(upper.begin(), upper.end(),
            [](const cd& a, const cd& b) { return std::abs(a) > std::abs(b); });
  std::sort(reals.begin(), reals.end(),
            [](const cd& a, const cd& b) { return a.real() > b.real(); });
  if (reals.size() % 2 != 0) throw NumericError("unpaired real pole in band-pass design");

  BiquadCascade cascade;
  cascade.order = order;
  cascade.low_hz = low_hz;
  cascade.high_hz = high_hz;
  cascade.sample_rate_hz = fs;
  // per-section gain so the total gain is distributed evenly (numerics)
  const double section_gain = std::pow(std::abs(digital_gain), 1.0 / n);
  const double sign = digital_gain < 0.0 ? -1.0 : 1.0;
  auto push_section = [&](double a1, double a2, bool first) {
    Biquad s;
    // each section takes one zero at z=+1 and one at z=-1: (z-1)(z+1) = z^2 - 1
    double g = section_gain * (first ? sign : 1.0);
    s.b0 = g;
    s.b1 = 0.0;
    s.b2 = -g;
    s.a1 = a1;
    s.a2 = a2;
    cascade.sections.push_back(s);
  };
  for (const cd& p : upper) {
    double mag = std::abs(p);
    if (mag >= 1.0 - 1e-12) throw NumericError("designed band-pass section is unstable");
    push_section(-2.0 * p.real(), mag * mag, cascade.sections.empty());
  }
  for (std::size_t i = 0; i + 1 < reals.size(); i += 2) {
    double r1 = reals[i].real(), r2 = reals[i + 1].real();
    if (std::abs(r1) >= 1.0 - 1e-12 || std::abs(r2) >= 1.0 - 1e-12)
      throw NumericError("designed band-pass section is unstable");
    push_section(-(r1 + r2), r1 * r2, cascade.sections.empty());
  }
  if (static_cast<int>(cascade.sections.size()) != n)
    throw NumericError("band-pass section pairing failed");
  return cascade;
}

// Complex frequency response of the cascade at frequency f.
inline std::complex<double> response_at(const BiquadCascade& c, double f_hz) {
  using detail::cd;
  const cd z = std::polar(1.0, 2.0 * M_PI * f_hz / c.sample_rate_hz);
  const cd zinv = 1.0 / z;
  cd h(1.0, 0.0);
  for (const Biquad& s : c.sections) {
    cd num = cd(s.b0) + cd(s.b1) * zinv + cd(s.b2) * zinv * zinv;
    cd den = cd(1.0) + cd(s.a1) * zinv + cd(s.a2) * zinv * zinv;
    h *= num / den;
  }
  return h;
}

inline double magnitude_at(const BiquadCascade& c, double f_hz) {
  return std::abs(response_at(c, f_hz));
}

// Single forward pass through the cascade with given per-section initial
// state scale (steady-state response to x[0], scipy-style).
inline std::vector<double> sosfilt(const BiquadCascade& c, std::span<const double> x) {
  std::vector<double> y(x.begin(), x.end());
  std::vector<detail::SectionSteadyState> ss;
  ss.reserve(c.sections.size());
  double dc_in = x.empty() ? 0.0 : x.front();
  for (const Biquad& s : c.sections) {
    auto st = detail::steady_state(s);
    double z1 = st.z1 * dc_in;
    double z2 = st.z2 * dc_in;
    dc_in *= st.gain;
    for (double& v : y) {
      double out = s.b0 * v + z1;
      z1 = s.b1 * v - s.a1 * out + z2;
      z2 = s.b2 * v - s.a2 * out;
      v = out;
    }
  }
  return y;
}

// Padding needed to absorb start-up transients: at least 3 * (2 * order)
// samples, widened to ~3x the settle time of the slowest (low-edge) poles.
inline std::size_t filtfilt_pad_len(const BiquadCascade& c) {
  std::size_t pad = static_cast<std::size_t>(3 * 2 * c.order);
  if (c.low_hz > 0.0 && c.sample_rate_hz > 0.0) {
    const auto settle = static_cast<std::size_t>(std::ceil(3.0 * c.sample_rate_hz / c.low_hz));
    pad = std::max(pad, settle);
  }
  return pad;
}

// Zero-phase filtering: forward pass, backward pass, odd-symmetric reflection
// padding at each end (trimmed afterwards).
inline std::vector<double> filtfilt(const BiquadCascade& c, std::span<const double> x) {
  const std::size_t pad = filtfilt_pad_len(c);
  if (x.size() <= pad)
    throw ShapeError("filtfilt input shorter than edge padding (" +
                     std::to_string(pad + 1) + " samples required)");
  const std::size_t n = x.size();
  std::vector<double> ext(n + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i)
    ext[i] = 2.0 * x[0] - x[pad - i];
  std::copy(x.begin(), x.end(), ext.begin() + pad);
  for (std::size_t i = 0; i < pad; ++i)
    ext[n + pad + i] = 2.0 * x[n - 1] - x[n - 2 - i];

  std::vector<double> fwd = sosfilt(c, ext);
  std::reverse(fwd.begin(), fwd.end());
  std::vector<double> bwd = sosfilt(c, fwd);
  std::reverse(bwd.begin(), bwd.end());
  return std::vector<double>(bwd.begin() + pad, bwd.begin() + pad + n);
}

namespace detail {

struct Rational {
  std::size_t up, down;
};

inline Rational rate_ratio(double fs_in, double fs_out) {
  auto as_int = [](double fs) {
    double r = std::round(fs);
    if (!(fs > 0.0) || std::abs(fs - r) > 1e-9 * fs)
      throw ConfigError("sample rates must be (near-)integer Hz");
    return static_cast<std::size_t>(r);
  };
  std::size_t a = as_int(fs_out), b = as_int(fs_in);
  std::size_t g = std::gcd(a, b);
  return {a / g, b / g};
}

}  // namespace detail

// Rational-ratio polyphase resampler with a Blackman-windowed sinc
// anti-alias kernel. Only downsampling (or identity) is supported; the
// pipeline band-limits signals well below the target Nyquist first.
inline std::vector<double> resample_to(std::span<const double> x, double fs_in, double fs_out) {
  if (fs_out > fs_in) throw ConfigError("upsampling is not supported");
  if (!(fs_out > 0.0)) throw ConfigError("output rate must be positive");
  if (fs_in == fs_out) return std::vector<double>(x.begin(), x.end());

  const auto [up, down] = detail::rate_ratio(fs_in, fs_out);
  const std::size_t n = x.size();
  const std::size_t n_out =
      static_cast<std::size_t>(std::llround(static_cast<double>(n) * fs_out / fs_in));
  if (n == 0) return {};

  // kernel on the up*fs_in grid, cutoff at the output Nyquist
  const std::size_t half = 32 * std::max(up, down);
  const std::size_t taps = 2 * half + 1;
  const double fc = 0.5 / static_cast<double>(down);  // cycles per high-rate sample
  std::vector<double> h(taps);
  for (std::size_t k = 0; k < taps; ++k) {
    double t = static_cast<double>(k) - static_cast<double>(half);
    double s = t == 0.0 ? 2.0 * fc : std::sin(2.0 * M_PI * fc * t) / (M_PI * t);
    double w = 0.42 - 0.5 * std::cos(2.0 * M_PI * k / (taps - 1)) +
               0.08 * std::cos(4.0 * M_PI * k / (taps - 1));
    h[k] = s * w;
  }
  // normalize each polyphase branch to unit DC gain so constants pass exactly
  for (std::size_t r = 0; r < up; ++r) {
    double sum = 0.0;
    for (std::size_t k = r; k < taps; k += up) sum += h[k];
    if (sum != 0.0)
      for (std::size_t k = r; k < taps; k += up) h[k] /= sum;
  }

  // odd reflection at the borders
  auto sample = [&](long long i) -> double {
    if (i >= 0 && i < static_cast<long long>(n)) return x[static_cast<std::size_t>(i)];
    if (i < 0) {
      long long j = std::min<long long>(-i, static_cast<long long>(n) - 1);
      return 2.0 * x[0] - x[static_cast<std::size_t>(j)];
    }
    long long j = 2 * static_cast<long long>(n) - 2 - i;
    j = std::max<long long>(0, j);
    return 2.0 * x[n - 1] - x[static_cast<std::size_t>(j)];
  };

  auto ceil_div = [](long long a, long long b) {
    return a >= 0 ? (a + b - 1) / b : -((-a) / b);
  };
  auto floor_div = [](long long a, long long b) {
    return a >= 0 ? a / b : -((-a + b - 1) / b);
  };

  std::vector<double> y(n_out);
  const long long hl = static_cast<long long>(half);
  const long long L = static_cast<long long>(up);
  for (std::size_t j = 0; j < n_out; ++j) {
    // center of tap window in the high-rate domain
    const long long m = static_cast<long long>(j) * static_cast<long long>(down);
    // input indices i with |m - i*up| <= half contribute
    const long long i_lo = ceil_div(m - hl, L);
    const long long i_hi = floor_div(m + hl, L);
    double acc = 0.0;
    for (long long i = i_lo; i <= i_hi; ++i) {
      acc += h[static_cast<std::size_t>(m - i * L + hl)] * sample(i);
    }
    y[j] = acc;
  }
  return y;
}

// Population z-score. Constant inputs map to zeros; `degenerate`, when
// non-null, is set in that case.
inline std::vector<double> zscore(std::span<const double> x, bool* degenerate = nullptr) {
  if (x.size() < 2) throw ShapeError("zscore requires at least 2 samples");
  if (degenerate) *degenerate = false;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  double sd = std::sqrt(var);
  std::vector<double> out(x.size());
  if (sd < 1e-12) {
    if (degenerate) *degenerate = true;
    return out;  // zeros
  }
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) / sd;
  return out;
}

}  // namespace sumo::dsp
