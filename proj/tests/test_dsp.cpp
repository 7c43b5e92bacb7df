#include <catch2/catch_amalgamated.hpp>

#include "dachtic/dsp.hpp"

#include <cmath>
#include <complex>
#include <vector>

using namespace dachtic;
using namespace dachtic::dsp;

namespace {

// Naive O(N^2) DFT magnitude, independent of the library FFT.
std::vector<double> dft_magnitude(const std::vector<double>& x) {
    const size_t n = x.size();
    std::vector<double> mag(n / 2 + 1);
    for (size_t k = 0; k < mag.size(); ++k) {
        std::complex<double> acc(0.0, 0.0);
        for (size_t t = 0; t < n; ++t) {
            const double ang = -2.0 * M_PI * static_cast<double>(k * t) / static_cast<double>(n);
            acc += x[t] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        mag[k] = std::abs(acc);
    }
    return mag;
}

Waveform sine_wave(double freq_hz, int rate_hz, double seconds, double amp = 0.5) {
    Waveform w;
    w.sample_rate_hz = rate_hz;
    const int n = static_cast<int>(std::lround(seconds * rate_hz));
    w.samples.resize(n);
    for (int i = 0; i < n; ++i) w.samples[i] = amp * std::sin(2.0 * M_PI * freq_hz * i / rate_hz);
    return w;
}

Spectrogram make_grid(int n_frames, int n_mels, double floor_val = std::log(1e-6)) {
    Spectrogram s;
    s.n_frames = n_frames;
    s.n_mels = n_mels;
    s.log_floor = floor_val;
    s.values.resize(static_cast<size_t>(n_frames) * n_mels);
    for (size_t i = 0; i < s.values.size(); ++i)
        s.values[i] = floor_val + 1.0 + 0.01 * static_cast<double>(i);  // all distinct, above floor
    return s;
}

}  // namespace

TEST_CASE("resample at the source rate is the identity") {
    Waveform w = sine_wave(1000.0, 16000, 0.02);
    Waveform out = resample(w, 16000);
    REQUIRE(out.samples == w.samples);
}

TEST_CASE("resample preserves constant signals") {
    Waveform w;
    w.sample_rate_hz = 32000;
    w.samples.assign(3200, 0.5);
    Waveform out = resample(w, 16000);
    REQUIRE(out.sample_rate_hz == 16000);
    for (double v : out.samples) REQUIRE(v == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("resample preserves duration within one output sample") {
    Waveform w = sine_wave(500.0, 22050, 0.3713);
    Waveform out = resample(w, 16000);
    const double in_s = static_cast<double>(w.samples.size()) / w.sample_rate_hz;
    const double out_s = static_cast<double>(out.samples.size()) / out.sample_rate_hz;
    REQUIRE(std::abs(in_s - out_s) <= 1.0 / out.sample_rate_hz);
}

TEST_CASE("upsampled sine keeps its spectral peak at the source frequency bin") {
    // 1 kHz at 8 kHz, upsampled to 16 kHz; 0.25 s gives an integer cycle count.
    Waveform w = sine_wave(1000.0, 8000, 0.25);
    Waveform out = resample(w, 16000);
    std::vector<double> mag = dft_magnitude(out.samples);
    size_t argmax = 1;
    for (size_t k = 1; k < mag.size(); ++k)
        if (mag[k] > mag[argmax]) argmax = k;
    const double bin_hz = static_cast<double>(out.sample_rate_hz) / out.samples.size();
    const size_t expected_bin = static_cast<size_t>(std::lround(1000.0 / bin_hz));
    REQUIRE(argmax == expected_bin);
}

TEST_CASE("resample rejects an empty waveform") {
    Waveform w;
    w.sample_rate_hz = 16000;
    REQUIRE_THROWS_WITH(resample(w, 8000), "empty waveform");
}

TEST_CASE("log_mel of silence is log(eps) everywhere") {
    Waveform w;
    w.sample_rate_hz = 16000;
    w.samples.assign(1600, 0.0);
    MelFilterbank fb = make_mel_filterbank(64, 512, 16000);
    Spectrogram spec = log_mel(w, fb, 0.025, 0.010, 1e-6);
    REQUIRE(spec.n_mels == 64);
    REQUIRE(spec.n_frames == 1 + (1600 - 400) / 160);
    for (double v : spec.values) REQUIRE(v == Catch::Approx(std::log(1e-6)).margin(1e-12));
}

TEST_CASE("log_mel with an identity filterbank is the log power spectrum") {
    // One 4-sample frame, 4-point FFT, identity filterbank on 3 power bins.
    Waveform w;
    w.sample_rate_hz = 16000;
    w.samples = {0.5, -0.25, 0.125, 0.8};
    MelFilterbank identity(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}, {0, 1, 2, 3, 4});
    const double eps = 1e-3;
    Spectrogram spec = log_mel(w, identity, 4.0 / 16000, 4.0 / 16000, eps);
    REQUIRE(spec.n_frames == 1);

    // Oracle: window by hand, then naive DFT power.
    std::vector<double> windowed(4);
    for (int n = 0; n < 4; ++n)
        windowed[n] = w.samples[n] * 0.5 * (1.0 - std::cos(2.0 * M_PI * n / 4.0));
    std::vector<double> mag = dft_magnitude(windowed);
    for (int k = 0; k < 3; ++k)
        REQUIRE(spec.at(0, k) == Catch::Approx(std::log(mag[k] * mag[k] + eps)).margin(1e-9));
}

TEST_CASE("a 440 Hz tone peaks in the band whose edges contain it") {
    Waveform w = sine_wave(440.0, 16000, 0.1);
    MelFilterbank fb = make_mel_filterbank(64, 512, 16000);
    Spectrogram spec = log_mel(w, fb, 0.025, 0.010, 1e-6);

    // Oracle: recompute band edges from the Hz->mel formula and locate the
    // band with the greatest triangle weight at 440 Hz.
    auto to_mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
    auto to_hz = [](double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); };
    const double hi = to_mel(8000.0);
    std::vector<double> edges(66);
    for (int i = 0; i < 66; ++i) edges[i] = to_hz(hi * i / 65.0);
    int expected = -1;
    double best = -1.0;
    for (int m = 0; m < 64; ++m) {
        const double lo = edges[m], mid = edges[m + 1], top = edges[m + 2];
        double wgt = 0.0;
        if (440.0 > lo && 440.0 < top)
            wgt = 440.0 <= mid ? (440.0 - lo) / (mid - lo) : (top - 440.0) / (top - mid);
        if (wgt > best) {
            best = wgt;
            expected = m;
        }
    }
    for (int t = 0; t < spec.n_frames; ++t) {
        int argmax = 0;
        for (int m = 1; m < 64; ++m)
            if (spec.at(t, m) > spec.at(t, argmax)) argmax = m;
        REQUIRE(argmax == expected);
    }
}

TEST_CASE("log_mel rejects signals shorter than a window") {
    Waveform w;
    w.sample_rate_hz = 16000;
    w.samples.assign(100, 0.1);
    MelFilterbank fb = make_mel_filterbank(64, 512, 16000);
    REQUIRE_THROWS_WITH(log_mel(w, fb, 0.025, 0.010, 1e-6), "signal too short");
}

TEST_CASE("amplifying the waveform never lowers any log_mel cell") {
    Waveform w = sine_wave(700.0, 16000, 0.08, 0.25);
    Waveform louder = w;
    for (auto& v : louder.samples) v *= 2.5;
    MelFilterbank fb = make_mel_filterbank(64, 512, 16000);
    Spectrogram a = log_mel(w, fb, 0.025, 0.010, 1e-6);
    Spectrogram b = log_mel(louder, fb, 0.025, 0.010, 1e-6);
    for (size_t i = 0; i < a.values.size(); ++i) REQUIRE(b.values[i] >= a.values[i]);
}

TEST_CASE("mix_noise basics") {
    Waveform x{{0.2}, 16000};
    Waveform n{{0.4}, 16000};
    SECTION("alpha 0 returns the signal") {
        Waveform sig = sine_wave(300.0, 16000, 0.01);
        Waveform noise = sine_wave(50.0, 16000, 0.01);
        REQUIRE(mix_noise(sig, noise, 0.0).samples == sig.samples);
    }
    SECTION("silent signal at alpha 1 returns the noise") {
        Waveform zeros{std::vector<double>(160, 0.0), 16000};
        Waveform noise = sine_wave(50.0, 16000, 0.01);
        REQUIRE(mix_noise(zeros, noise, 1.0).samples == noise.samples);
    }
    SECTION("direct arithmetic") { REQUIRE(mix_noise(x, n, 0.5).samples[0] == Catch::Approx(0.4)); }
    SECTION("rate mismatch") {
        Waveform other{{0.1}, 8000};
        REQUIRE_THROWS_WITH(mix_noise(x, other, 0.5), "rate mismatch");
    }
}

TEST_CASE("noise mixing is additive in alpha away from the clamp") {
    Waveform x = sine_wave(250.0, 16000, 0.02, 0.3);
    Waveform n = sine_wave(60.0, 16000, 0.02, 0.2);
    Waveform two_step = mix_noise(mix_noise(x, n, 0.15), n, 0.25);
    Waveform one_step = mix_noise(x, n, 0.40);
    for (size_t i = 0; i < x.samples.size(); ++i)
        REQUIRE(two_step.samples[i] == Catch::Approx(one_step.samples[i]).margin(1e-12));
}

TEST_CASE("mix_noise clamps into [-1, 1]") {
    Waveform x{{0.9, -0.9}, 16000};
    Waveform n{{0.9, -0.9}, 16000};
    Waveform out = mix_noise(x, n, 1.0);
    REQUIRE(out.samples[0] == 1.0);
    REQUIRE(out.samples[1] == -1.0);
}

TEST_CASE("fit_noise crops long noise and tiles short noise") {
    Waveform noise{{0.1, 0.2, 0.3}, 16000};
    Waveform tiled = fit_noise(noise, 7, 42);
    REQUIRE(tiled.samples == std::vector<double>{0.1, 0.2, 0.3, 0.1, 0.2, 0.3, 0.1});
    Waveform cropped = fit_noise(noise, 2, 42);
    REQUIRE(cropped.samples.size() == 2);
    REQUIRE(fit_noise(noise, 2, 42).samples == cropped.samples);  // seeded offset is stable
}

TEST_CASE("spec_augment with zero masks is the identity") {
    Spectrogram x = make_grid(12, 8);
    Spectrogram out = spec_augment(x, 0, 4, 0, 4, 7);
    REQUIRE(out.values == x.values);
}

TEST_CASE("one time mask changes exactly width x n_mels cells") {
    Spectrogram x = make_grid(20, 8);
    const int width = 5;
    Spectrogram out = spec_augment(x, 1, width, 0, 0, 123);
    int changed = 0;
    for (size_t i = 0; i < x.values.size(); ++i)
        if (out.values[i] != x.values[i]) {
            REQUIRE(out.values[i] == x.log_floor);
            ++changed;
        }
    REQUIRE(changed == width * x.n_mels);
}

TEST_CASE("a full-width time mask blanks the whole spectrogram") {
    Spectrogram x = make_grid(10, 6);
    Spectrogram out = spec_augment(x, 1, 99, 0, 0, 5);
    for (double v : out.values) REQUIRE(v == x.log_floor);
}

TEST_CASE("spec_augment is reproducible from its seed and stays in range") {
    Spectrogram x = make_grid(30, 16);
    Spectrogram a = spec_augment(x, 2, 6, 2, 3, 99);
    Spectrogram b = spec_augment(x, 2, 6, 2, 3, 99);
    REQUIRE(a.values == b.values);
    const double in_max = *std::max_element(x.values.begin(), x.values.end());
    for (double v : a.values) {
        REQUIRE(v >= x.log_floor);
        REQUIRE(v <= in_max);
    }
}

TEST_CASE("pitch shift by zero bins keeps every value") {
    Spectrogram x = make_grid(6, 4);
    PerturbationSpec spec;
    spec.kind = PerturbKind::pitch_shift;
    spec.shift_bins = 0;
    Spectrogram out = pseudo_intervene(x, spec);
    REQUIRE(out.values == x.values);
    REQUIRE(out.origin == SpecOrigin::intervened);
}

TEST_CASE("pitch shift translates mel rows with floor fill") {
    Spectrogram x = make_grid(3, 4);
    PerturbationSpec spec;
    spec.kind = PerturbKind::pitch_shift;
    spec.shift_bins = 2;
    Spectrogram out = pseudo_intervene(x, spec);
    // Index-arithmetic oracle over every cell.
    for (int t = 0; t < x.n_frames; ++t)
        for (int f = 0; f < x.n_mels; ++f) {
            const double expected = f >= 2 ? x.at(t, f - 2) : x.log_floor;
            REQUIRE(out.at(t, f) == expected);
        }
    PerturbationSpec neg = spec;
    neg.shift_bins = -1;
    Spectrogram out2 = pseudo_intervene(x, neg);
    for (int t = 0; t < x.n_frames; ++t)
        for (int f = 0; f < x.n_mels; ++f) {
            const double expected = f + 1 < x.n_mels ? x.at(t, f + 1) : x.log_floor;
            REQUIRE(out2.at(t, f) == expected);
        }
}

TEST_CASE("pitch shift beyond the mel range is rejected") {
    Spectrogram x = make_grid(3, 4);
    PerturbationSpec spec;
    spec.kind = PerturbKind::pitch_shift;
    spec.shift_bins = 4;
    REQUIRE_THROWS_WITH(pseudo_intervene(x, spec), "shift out of range");
}

TEST_CASE("energy suppression at factor zero floors the region") {
    Spectrogram x = make_grid(5, 4);
    PerturbationSpec spec;
    spec.kind = PerturbKind::energy_suppress;
    spec.region = {0, 5, 0, 4};
    spec.suppress_factor = 0.0;
    Spectrogram out = pseudo_intervene(x, spec);
    for (double v : out.values) REQUIRE(v == x.log_floor);

    spec.suppress_factor = 1.0;
    Spectrogram same = pseudo_intervene(x, spec);
    REQUIRE(same.values == x.values);
}

TEST_CASE("noise subtraction floors at log(eps)") {
    Spectrogram x = make_grid(4, 3);
    PerturbationSpec spec;
    spec.kind = PerturbKind::noise_subtract;
    spec.noise_profile = {0.5, 100.0, 0.0};
    Spectrogram out = pseudo_intervene(x, spec);
    for (int t = 0; t < 4; ++t) {
        REQUIRE(out.at(t, 0) == Catch::Approx(x.at(t, 0) - 0.5));
        REQUIRE(out.at(t, 1) == x.log_floor);
        REQUIRE(out.at(t, 2) == x.at(t, 2));
    }
}

TEST_CASE("interventions never leave the [floor, input max] envelope") {
    Spectrogram x = make_grid(8, 6);
    const double in_max = *std::max_element(x.values.begin(), x.values.end());
    PerturbationSpec spec;
    spec.kind = PerturbKind::energy_suppress;
    spec.region = {2, 6, 1, 5};
    spec.suppress_factor = 0.3;
    for (double v : pseudo_intervene(x, spec).values) {
        REQUIRE(v >= x.log_floor);
        REQUIRE(v <= in_max);
    }
    spec.kind = PerturbKind::time_mask;
    for (double v : pseudo_intervene(x, spec).values) {
        REQUIRE(v >= x.log_floor);
        REQUIRE(v <= in_max);
    }
}
