#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dachtic/rng.hpp"

namespace dachtic::dsp {

struct Waveform {
    std::vector<double> samples;  // nominal range [-1, 1]
    int sample_rate_hz = 16000;
};

enum class SpecOrigin { clean, noisy, augmented, intervened };

// Log-Mel time-frequency grid, rows = frames, cols = mel bands. log_floor is
// log(eps) for the eps the grid was built with; masks and suppressions fill
// with it and no cell may fall below it.
struct Spectrogram {
    int n_frames = 0;
    int n_mels = 0;
    std::vector<double> values;  // row-major [n_frames x n_mels]
    double frame_hop_s = 0.010;
    double log_floor = 0.0;
    SpecOrigin origin = SpecOrigin::clean;

    double& at(int t, int f) { return values[static_cast<size_t>(t) * n_mels + f]; }
    double at(int t, int f) const { return values[static_cast<size_t>(t) * n_mels + f]; }
};

// Triangular filterbank over STFT power bins.
class MelFilterbank {
public:
    // weights: [n_mels x n_bins] row-major, edges: n_mels + 2 ascending Hz.
    MelFilterbank(int n_mels, int n_bins, std::vector<double> weights, std::vector<double> edges_hz)
        : n_mels_(n_mels), n_bins_(n_bins), weights_(std::move(weights)), edges_hz_(std::move(edges_hz)) {
        if (weights_.size() != static_cast<size_t>(n_mels_) * n_bins_)
            throw std::invalid_argument("mel filterbank: weight shape mismatch");
        validate();
    }

    int n_mels() const { return n_mels_; }
    int n_bins() const { return n_bins_; }
    double weight(int m, int k) const { return weights_[static_cast<size_t>(m) * n_bins_ + k]; }
    const std::vector<double>& band_edges_hz() const { return edges_hz_; }

private:
    int n_mels_;
    int n_bins_;
    std::vector<double> weights_;
    std::vector<double> edges_hz_;

    void validate() const {
        if (!std::is_sorted(edges_hz_.begin(), edges_hz_.end()))
            throw std::invalid_argument("mel filterbank: band edges must ascend");
        for (int m = 0; m < n_mels_; ++m) {
            bool any_positive = false;
            int direction = 1;  // 1 while nondecreasing, -1 after the peak
            for (int k = 0; k < n_bins_; ++k) {
                double w = weight(m, k);
                if (w < 0.0) throw std::invalid_argument("mel filterbank: negative weight");
                if (w > 0.0) any_positive = true;
                if (k > 0) {
                    double prev = weight(m, k - 1);
                    if (w > prev && direction < 0)
                        throw std::invalid_argument("mel filterbank: row " + std::to_string(m) +
                                                    " is not unimodal");
                    if (w < prev) direction = -1;
                }
            }
            if (!any_positive)
                throw std::invalid_argument("mel filterbank: row " + std::to_string(m) +
                                            " has no positive weight");
        }
    }
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// HTK-style triangles, equally spaced on the mel scale from 0 Hz to Nyquist.
inline MelFilterbank make_mel_filterbank(int n_mels, int fft_size, int sample_rate_hz) {
    const int n_bins = fft_size / 2 + 1;
    const double mel_lo = hz_to_mel(0.0);
    const double mel_hi = hz_to_mel(sample_rate_hz / 2.0);
    std::vector<double> edges(n_mels + 2);
    for (int i = 0; i < n_mels + 2; ++i)
        edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));

    std::vector<double> weights(static_cast<size_t>(n_mels) * n_bins, 0.0);
    for (int m = 0; m < n_mels; ++m) {
        const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
        for (int k = 0; k < n_bins; ++k) {
            const double f = static_cast<double>(k) * sample_rate_hz / fft_size;
            double w = 0.0;
            if (f > lo && f < hi) w = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
            weights[static_cast<size_t>(m) * n_bins + k] = w;
        }
    }
    return MelFilterbank(n_mels, n_bins, std::move(weights), std::move(edges));
}

// In-place iterative radix-2 FFT; n must be a power of two.
inline void fft_radix2(std::vector<std::complex<double>>& a) {
    const size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0) throw std::invalid_argument("fft: size must be a power of two");
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * M_PI / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t k = 0; k < len / 2; ++k) {
                std::complex<double> u = a[i + k];
                std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

// Band-limited sample-rate conversion with a normalized windowed-sinc kernel.
// Kernel weights are renormalized per output sample, so constant signals pass
// through exactly.
inline Waveform resample(const Waveform& w, int target_hz) {
    if (w.samples.empty()) throw std::invalid_argument("empty waveform");
    if (target_hz <= 0) throw std::invalid_argument("resample: target rate must be positive");
    if (target_hz == w.sample_rate_hz) return w;

    const double ratio = static_cast<double>(target_hz) / w.sample_rate_hz;
    const double cutoff = std::min(1.0, ratio);  // of source Nyquist
    const int half_width = static_cast<int>(std::ceil(32.0 / cutoff));
    const int64_t n_in = static_cast<int64_t>(w.samples.size());
    const int64_t n_out = std::llround(static_cast<double>(n_in) * ratio);

    Waveform out;
    out.sample_rate_hz = target_hz;
    out.samples.resize(n_out);
    for (int64_t n = 0; n < n_out; ++n) {
        const double t = static_cast<double>(n) / ratio;  // in source samples
        const int64_t m0 = std::max<int64_t>(0, static_cast<int64_t>(std::ceil(t)) - half_width);
        const int64_t m1 = std::min<int64_t>(n_in - 1, static_cast<int64_t>(std::floor(t)) + half_width);
        double acc = 0.0, norm = 0.0;
        for (int64_t m = m0; m <= m1; ++m) {
            const double x = t - static_cast<double>(m);
            const double sinc = x == 0.0 ? 1.0 : std::sin(M_PI * cutoff * x) / (M_PI * cutoff * x);
            const double win = 0.5 * (1.0 + std::cos(M_PI * x / half_width));  // Hann taper
            const double k = cutoff * sinc * win;
            acc += k * w.samples[m];
            norm += k;
        }
        out.samples[n] = norm != 0.0 ? acc / norm : 0.0;
    }
    return out;
}

struct FrontendConfig {
    double window_s = 0.025;
    double hop_s = 0.010;
    int n_mels = 64;
    int fft_size = 512;
    double eps = 1e-6;
};

// values[t, f] = log(sum_k M[f,k] * |STFT frame|^2_k + eps). Periodic Hann
// window; frames are dropped rather than padded at the tail.
inline Spectrogram log_mel(const Waveform& w, const MelFilterbank& fb, double window_s, double hop_s,
                           double eps) {
    if (eps <= 0.0) throw std::invalid_argument("log_mel: eps must be positive");
    if (window_s < hop_s) throw std::invalid_argument("log_mel: window must cover at least one hop");
    const int win = static_cast<int>(std::lround(window_s * w.sample_rate_hz));
    const int hop = static_cast<int>(std::lround(hop_s * w.sample_rate_hz));
    if (static_cast<int>(w.samples.size()) < win) throw std::invalid_argument("signal too short");
    const int fft_size = 2 * (fb.n_bins() - 1);
    if (fft_size < win) throw std::invalid_argument("log_mel: FFT size smaller than window");

    const int n_frames = 1 + (static_cast<int>(w.samples.size()) - win) / hop;
    std::vector<double> window(win);
    for (int n = 0; n < win; ++n) window[n] = 0.5 * (1.0 - std::cos(2.0 * M_PI * n / win));

    Spectrogram spec;
    spec.n_frames = n_frames;
    spec.n_mels = fb.n_mels();
    spec.values.resize(static_cast<size_t>(n_frames) * fb.n_mels());
    spec.frame_hop_s = hop_s;
    spec.log_floor = std::log(eps);

    std::vector<std::complex<double>> buf(fft_size);
    std::vector<double> power(fb.n_bins());
    for (int t = 0; t < n_frames; ++t) {
        const int start = t * hop;
        for (int n = 0; n < fft_size; ++n)
            buf[n] = n < win ? std::complex<double>(w.samples[start + n] * window[n], 0.0)
                             : std::complex<double>(0.0, 0.0);
        fft_radix2(buf);
        for (int k = 0; k < fb.n_bins(); ++k) power[k] = std::norm(buf[k]);
        for (int m = 0; m < fb.n_mels(); ++m) {
            double acc = 0.0;
            for (int k = 0; k < fb.n_bins(); ++k) acc += fb.weight(m, k) * power[k];
            spec.at(t, m) = std::log(acc + eps);
        }
    }
    return spec;
}

inline Spectrogram log_mel(const Waveform& w, const FrontendConfig& fe) {
    static thread_local struct {
        int n_mels = -1, fft = -1, rate = -1;
        std::vector<double> weights, edges;
    } cache;
    if (cache.n_mels != fe.n_mels || cache.fft != fe.fft_size || cache.rate != w.sample_rate_hz) {
        MelFilterbank fb = make_mel_filterbank(fe.n_mels, fe.fft_size, w.sample_rate_hz);
        cache.weights.assign(static_cast<size_t>(fe.n_mels) * fb.n_bins(), 0.0);
        for (int m = 0; m < fe.n_mels; ++m)
            for (int k = 0; k < fb.n_bins(); ++k)
                cache.weights[static_cast<size_t>(m) * fb.n_bins() + k] = fb.weight(m, k);
        cache.edges = fb.band_edges_hz();
        cache.n_mels = fe.n_mels;
        cache.fft = fe.fft_size;
        cache.rate = w.sample_rate_hz;
    }
    MelFilterbank fb(fe.n_mels, fe.fft_size / 2 + 1, cache.weights, cache.edges);
    return log_mel(w, fb, fe.window_s, fe.hop_s, fe.eps);
}

// x + alpha * x_n, clamped to [-1, 1]. The noise must already cover the
// signal; use fit_noise to crop or tile it first.
inline Waveform mix_noise(const Waveform& x, const Waveform& x_n, double alpha) {
    if (x.sample_rate_hz != x_n.sample_rate_hz) throw std::invalid_argument("rate mismatch");
    if (x_n.samples.size() < x.samples.size())
        throw std::invalid_argument("mix_noise: noise shorter than signal");
    Waveform out;
    out.sample_rate_hz = x.sample_rate_hz;
    out.samples.resize(x.samples.size());
    for (size_t i = 0; i < x.samples.size(); ++i)
        out.samples[i] = std::clamp(x.samples[i] + alpha * x_n.samples[i], -1.0, 1.0);
    return out;
}

// Longer noise is cropped at a seeded random offset; shorter noise is tiled.
inline Waveform fit_noise(const Waveform& noise, size_t target_len, uint64_t seed) {
    if (noise.samples.empty()) throw std::invalid_argument("empty waveform");
    Waveform out;
    out.sample_rate_hz = noise.sample_rate_hz;
    out.samples.resize(target_len);
    if (noise.samples.size() >= target_len) {
        Rng rng(seed);
        const size_t offset = static_cast<size_t>(
            rng.uniform_int(0, static_cast<int64_t>(noise.samples.size() - target_len)));
        std::copy_n(noise.samples.begin() + offset, target_len, out.samples.begin());
    } else {
        for (size_t i = 0; i < target_len; ++i) out.samples[i] = noise.samples[i % noise.samples.size()];
    }
    return out;
}

// Structured masking: each mask covers the full extent of the other axis with
// a deterministic width of min(max_width, axis length); only positions are
// drawn from the seed.
inline Spectrogram spec_augment(const Spectrogram& x, int n_time_masks, int max_time_width,
                                int n_freq_masks, int max_freq_width, uint64_t rng_seed) {
    Spectrogram out = x;
    out.origin = SpecOrigin::augmented;
    Rng rng(rng_seed);
    const int tw = std::min(max_time_width, x.n_frames);
    for (int i = 0; i < n_time_masks && tw > 0; ++i) {
        const int t0 = static_cast<int>(rng.uniform_int(0, x.n_frames - tw));
        for (int t = t0; t < t0 + tw; ++t)
            for (int f = 0; f < x.n_mels; ++f) out.at(t, f) = x.log_floor;
    }
    const int fw = std::min(max_freq_width, x.n_mels);
    for (int i = 0; i < n_freq_masks && fw > 0; ++i) {
        const int f0 = static_cast<int>(rng.uniform_int(0, x.n_mels - fw));
        for (int t = 0; t < x.n_frames; ++t)
            for (int f = f0; f < f0 + fw; ++f) out.at(t, f) = x.log_floor;
    }
    return out;
}

enum class PerturbKind { pitch_shift, energy_suppress, noise_subtract, time_mask, freq_mask };

struct Region {
    int t0 = 0, t1 = 0;  // half-open frame range
    int f0 = 0, f1 = 0;  // half-open mel range
};

// A controlled edit of non-causal spectrogram regions. pitch_shift translates
// mel bins; energy_suppress scales a region toward the silence floor;
// noise_subtract removes a per-band log-power profile; time/freq_mask fill a
// region with the floor.
struct PerturbationSpec {
    PerturbKind kind = PerturbKind::pitch_shift;
    int shift_bins = 0;
    Region region;
    double suppress_factor = 1.0;
    std::vector<double> noise_profile;  // per mel band, used by noise_subtract
    uint64_t rng_seed = 0;
};

inline void validate_region(const Region& r, const Spectrogram& x) {
    if (r.t0 < 0 || r.t1 > x.n_frames || r.f0 < 0 || r.f1 > x.n_mels || r.t0 > r.t1 || r.f0 > r.f1)
        throw std::invalid_argument("perturbation region out of bounds");
}

inline Spectrogram pseudo_intervene(const Spectrogram& x, const PerturbationSpec& spec) {
    Spectrogram out = x;
    out.origin = SpecOrigin::intervened;
    switch (spec.kind) {
        case PerturbKind::pitch_shift: {
            if (std::abs(spec.shift_bins) >= x.n_mels) throw std::runtime_error("shift out of range");
            const int s = spec.shift_bins;
            for (int t = 0; t < x.n_frames; ++t)
                for (int f = 0; f < x.n_mels; ++f) {
                    const int src = f - s;
                    out.at(t, f) = (src >= 0 && src < x.n_mels) ? x.at(t, src) : x.log_floor;
                }
            break;
        }
        case PerturbKind::energy_suppress: {
            validate_region(spec.region, x);
            if (spec.suppress_factor < 0.0 || spec.suppress_factor > 1.0)
                throw std::invalid_argument("suppress_factor outside [0, 1]");
            for (int t = spec.region.t0; t < spec.region.t1; ++t)
                for (int f = spec.region.f0; f < spec.region.f1; ++f)
                    out.at(t, f) = x.log_floor + spec.suppress_factor * (x.at(t, f) - x.log_floor);
            break;
        }
        case PerturbKind::noise_subtract: {
            if (!spec.noise_profile.empty() &&
                spec.noise_profile.size() != static_cast<size_t>(x.n_mels))
                throw std::invalid_argument("noise profile length does not match mel bands");
            if (spec.noise_profile.empty()) break;  // no stored profile: nothing to subtract
            for (int t = 0; t < x.n_frames; ++t)
                for (int f = 0; f < x.n_mels; ++f)
                    out.at(t, f) = std::max(x.at(t, f) - spec.noise_profile[f], x.log_floor);
            break;
        }
        case PerturbKind::time_mask:
        case PerturbKind::freq_mask: {
            validate_region(spec.region, x);
            for (int t = spec.region.t0; t < spec.region.t1; ++t)
                for (int f = spec.region.f0; f < spec.region.f1; ++f) out.at(t, f) = x.log_floor;
            break;
        }
    }
    return out;
}

}  // namespace dachtic::dsp
