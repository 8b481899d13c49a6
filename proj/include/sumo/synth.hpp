#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "sumo/common.hpp"
#include "sumo/dsp.hpp"
#include "sumo/events.hpp"
#include "sumo/fft.hpp"

namespace sumo::synth {

struct JitterConfig {
  double onset_sd_s = 0.0;
  double miss_prob = 0.0;
  double false_rate_per_min = 0.0;
};

struct SynthConfig {
  double fs = 100.0;
  double segment_s = 115.0;
  double pink_exponent = 1.0;
  double background_rms = 1.0;
  double rate_per_min = 4.0;
  double freq_lo_hz = 11.0;
  double freq_hi_hz = 16.0;
  double duration_lo_s = 0.5;
  double duration_hi_s = 2.0;
  double snr = 6.0;  // spindle RMS over background RMS inside the event window
  JitterConfig jitter;

  void validate() const {
    if (!(fs > 0.0) || !(segment_s > 0.0)) throw ConfigError("synth: fs and length must be positive");
    if (freq_lo_hz < 11.0 || freq_hi_hz > 16.0 || freq_lo_hz > freq_hi_hz)
      throw ConfigError("synth: spindle band must lie within 11-16 Hz");
    if (duration_lo_s < 0.5 || duration_lo_s > duration_hi_s)
      throw ConfigError("synth: spindle durations must be >= 0.5 s");
    if (freq_hi_hz >= fs / 2.0) throw ConfigError("synth: spindle band above Nyquist");
    if (rate_per_min < 0.0 || !(snr > 0.0) || !(background_rms > 0.0))
      throw ConfigError("synth: rate, snr and rms must be non-negative");
    // feasibility of the separation constraint
    if (rate_per_min * (duration_hi_s + kMinSeparationS) > 0.8 * 60.0)
      throw ConfigError("synth: spindle rate too high for the separation constraint");
    if (jitter.miss_prob < 0.0 || jitter.miss_prob > 1.0 || jitter.onset_sd_s < 0.0 ||
        jitter.false_rate_per_min < 0.0)
      throw ConfigError("synth: invalid jitter parameters");
  }

  static constexpr double kMinSeparationS = 0.2;
};

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = nlohmann::json{{"fs", c.fs},
                     {"segment_s", c.segment_s},
                     {"pink_exponent", c.pink_exponent},
                     {"background_rms", c.background_rms},
                     {"rate_per_min", c.rate_per_min},
                     {"freq_hz", {c.freq_lo_hz, c.freq_hi_hz}},
                     {"duration_s", {c.duration_lo_s, c.duration_hi_s}},
                     {"snr", c.snr},
                     {"jitter",
                      {{"onset_sd_s", c.jitter.onset_sd_s},
                       {"miss_prob", c.jitter.miss_prob},
                       {"false_rate_per_min", c.jitter.false_rate_per_min}}}};
}

inline void from_json(const nlohmann::json& j, SynthConfig& c) {
  c = SynthConfig{};
  if (j.contains("fs")) j.at("fs").get_to(c.fs);
  if (j.contains("segment_s")) j.at("segment_s").get_to(c.segment_s);
  if (j.contains("pink_exponent")) j.at("pink_exponent").get_to(c.pink_exponent);
  if (j.contains("background_rms")) j.at("background_rms").get_to(c.background_rms);
  if (j.contains("rate_per_min")) j.at("rate_per_min").get_to(c.rate_per_min);
  if (j.contains("freq_hz")) {
    c.freq_lo_hz = j.at("freq_hz").at(0).get<double>();
    c.freq_hi_hz = j.at("freq_hz").at(1).get<double>();
  }
  if (j.contains("duration_s")) {
    c.duration_lo_s = j.at("duration_s").at(0).get<double>();
    c.duration_hi_s = j.at("duration_s").at(1).get<double>();
  }
  if (j.contains("snr")) j.at("snr").get_to(c.snr);
  if (j.contains("jitter")) {
    const auto& jj = j.at("jitter");
    if (jj.contains("onset_sd_s")) jj.at("onset_sd_s").get_to(c.jitter.onset_sd_s);
    if (jj.contains("miss_prob")) jj.at("miss_prob").get_to(c.jitter.miss_prob);
    if (jj.contains("false_rate_per_min"))
      jj.at("false_rate_per_min").get_to(c.jitter.false_rate_per_min);
  }
}

// 1/f^exponent noise: white Gaussian spectrum shaped in the frequency domain,
// synthesized on a power-of-two grid and truncated, then RMS-normalized.
inline std::vector<double> gen_background(std::size_t n, double exponent, double rms, Rng& rng) {
  if (n < 256) throw ConfigError("background length must be >= 256 samples");
  const std::size_t m = fft::next_pow2(n);
  std::vector<std::complex<double>> spec(m);
  spec[0] = 0.0;  // no DC component
  for (std::size_t k = 1; k <= m / 2; ++k) {
    const double scale = std::pow(static_cast<double>(k), -exponent / 2.0);
    const std::complex<double> v(rng.normal() * scale, rng.normal() * scale);
    spec[k] = v;
    if (k < m / 2) spec[m - k] = std::conj(v);
  }
  spec[m / 2] = std::complex<double>(spec[m / 2].real(), 0.0);
  fft::transform(spec, true);
  std::vector<double> out(n);
  double sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = spec[i].real();
    sq += out[i] * out[i];
  }
  const double cur = std::sqrt(sq / static_cast<double>(n));
  const double gain = cur > 0.0 ? rms / cur : 0.0;
  for (double& v : out) v *= gain;
  return out;
}

struct SynthSegment {
  Segment segment;
  EventList truth;
};

// One synthetic EEG segment: pink background plus Hann-enveloped sigma-band
// bursts at Poisson onsets (thinned to keep events >= 0.2 s apart), scaled to
// the configured within-window SNR, then z-scored.
inline SynthSegment gen_segment(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const std::size_t n = static_cast<std::size_t>(std::llround(cfg.segment_s * cfg.fs));
  std::vector<double> signal = gen_background(n, cfg.pink_exponent, cfg.background_rms, rng);

  SynthSegment out;
  if (cfg.rate_per_min > 0.0) {
    const double rate_per_s = cfg.rate_per_min / 60.0;
    double t = rng.exponential(rate_per_s);
    double last_end = -SynthConfig::kMinSeparationS;
    while (t < cfg.segment_s) {
      const double freq = rng.uniform(cfg.freq_lo_hz, cfg.freq_hi_hz);
      const double dur = rng.uniform(cfg.duration_lo_s, cfg.duration_hi_s);
      const double phase = rng.uniform(0.0, 2.0 * M_PI);
      if (t >= last_end + SynthConfig::kMinSeparationS && t + dur <= cfg.segment_s) {
        const std::size_t i0 = static_cast<std::size_t>(std::llround(t * cfg.fs));
        const std::size_t i1 =
            std::min(n, i0 + static_cast<std::size_t>(std::llround(dur * cfg.fs)));
        // background RMS inside the window sets the spindle amplitude
        double bg_sq = 0.0;
        for (std::size_t i = i0; i < i1; ++i) bg_sq += signal[i] * signal[i];
        const double bg_rms = std::sqrt(bg_sq / static_cast<double>(i1 - i0));
        // Hann-enveloped unit sine has RMS ~ sqrt(3/8); rescale to snr * bg_rms
        std::vector<double> burst(i1 - i0);
        double burst_sq = 0.0;
        for (std::size_t i = i0; i < i1; ++i) {
          const double local = static_cast<double>(i - i0) / (cfg.fs * dur);
          const double env = 0.5 * (1.0 - std::cos(2.0 * M_PI * local));
          const double ts = static_cast<double>(i) / cfg.fs;
          burst[i - i0] = env * std::sin(2.0 * M_PI * freq * ts + phase);
          burst_sq += burst[i - i0] * burst[i - i0];
        }
        const double burst_rms = std::sqrt(burst_sq / static_cast<double>(i1 - i0));
        const double gain = burst_rms > 0.0 ? cfg.snr * bg_rms / burst_rms : 0.0;
        for (std::size_t i = i0; i < i1; ++i) signal[i] += gain * burst[i - i0];
        out.truth.push_back({static_cast<double>(i0) / cfg.fs,
                             static_cast<double>(i1 - i0) / cfg.fs});
        last_end = out.truth.back().end_s();
      }
      t += rng.exponential(rate_per_s);
    }
  }

  bool degenerate = false;
  std::vector<double> z = dsp::zscore(signal, &degenerate);
  out.segment.samples.assign(z.begin(), z.end());
  out.segment.fs = cfg.fs;
  out.segment.degenerate = degenerate;
  return out;
}

// Simulated imperfect rater: drops events, perturbs boundaries, inserts false
// events away from the truth, and merges any resulting overlaps.
inline EventList jitter_annotations(const EventList& truth, const JitterConfig& jitter,
                                    double segment_s, std::uint64_t seed) {
  if (!is_valid_event_list(truth, segment_s))
    throw ConfigError("jitter_annotations: invalid truth events");
  Rng rng(seed);
  EventList out;
  for (const auto& e : truth) {
    if (rng.uniform() < jitter.miss_prob) continue;
    if (jitter.onset_sd_s <= 0.0) {
      out.push_back(e);
      continue;
    }
    double onset = e.onset_s + rng.normal(0.0, jitter.onset_sd_s);
    double end = e.end_s() + rng.normal(0.0, jitter.onset_sd_s);
    onset = std::max(0.0, onset);
    end = std::min(segment_s, std::max(end, onset + 0.3));  // duration floor 0.3 s
    if (end - onset > 0.0) out.push_back({onset, end - onset});
  }
  if (jitter.false_rate_per_min > 0.0) {
    const double rate_per_s = jitter.false_rate_per_min / 60.0;
    double t = rng.exponential(rate_per_s);
    while (t < segment_s) {
      const double dur = rng.uniform(0.3, 1.5);
      SpindleEvent candidate{t, std::min(dur, segment_s - t)};
      bool clashes = candidate.duration_s <= 0.0;
      for (const auto& e : truth) {
        if (candidate.onset_s < e.end_s() + 0.1 && e.onset_s < candidate.end_s() + 0.1) {
          clashes = true;
          break;
        }
      }
      if (!clashes) out.push_back(candidate);
      t += rng.exponential(rate_per_s);
    }
  }
  return merge_overlaps(std::move(out));
}

}  // namespace sumo::synth
