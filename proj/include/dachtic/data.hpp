#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dachtic/dsp.hpp"
#include "dachtic/model.hpp"
#include "dachtic/rng.hpp"

namespace dachtic::data {

// ---- WAV I/O (RIFF, PCM16, mono) ---------------------------------------------

inline dsp::Waveform read_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    auto read_u32 = [&] {
        unsigned char b[4];
        if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("truncated file");
        return static_cast<uint32_t>(b[0]) | (b[1] << 8) | (b[2] << 16)
               | (static_cast<uint32_t>(b[3]) << 24);
    };
    auto read_u16 = [&] {
        unsigned char b[2];
        if (!in.read(reinterpret_cast<char*>(b), 2)) throw std::runtime_error("truncated file");
        return static_cast<uint16_t>(b[0] | (b[1] << 8));
    };
    char tag[5] = {};
    if (!in.read(tag, 4) || std::strncmp(tag, "RIFF", 4) != 0)
        throw std::runtime_error("not a RIFF file");
    read_u32();  // chunk size
    if (!in.read(tag, 4) || std::strncmp(tag, "WAVE", 4) != 0)
        throw std::runtime_error("not a WAVE file");

    int sample_rate = 0;
    int channels = 0;
    int bits = 0;
    int format = 0;
    std::vector<int16_t> pcm;
    bool got_fmt = false, got_data = false;
    while (in.read(tag, 4)) {
        const uint32_t size = read_u32();
        if (std::strncmp(tag, "fmt ", 4) == 0) {
            format = read_u16();
            channels = read_u16();
            sample_rate = static_cast<int>(read_u32());
            read_u32();  // byte rate
            read_u16();  // block align
            bits = read_u16();
            if (size > 16) in.ignore(size - 16);
            got_fmt = true;
        } else if (std::strncmp(tag, "data", 4) == 0) {
            if (!got_fmt) throw std::runtime_error("data chunk before fmt chunk");
            if (format != 1) throw std::runtime_error("PCM required");
            if (channels != 1) throw std::runtime_error("mono required");
            if (bits != 16) throw std::runtime_error("16-bit samples required");
            pcm.resize(size / 2);
            if (!in.read(reinterpret_cast<char*>(pcm.data()), size))
                throw std::runtime_error("truncated file");
            got_data = true;
            break;
        } else {
            in.ignore(size + (size % 2));
        }
    }
    if (!got_data) throw std::runtime_error("missing data chunk");

    dsp::Waveform w;
    w.sample_rate_hz = sample_rate;
    w.samples.resize(pcm.size());
    for (size_t i = 0; i < pcm.size(); ++i) w.samples[i] = pcm[i] / 32768.0;
    return w;
}

inline void write_wav(const std::string& path, const dsp::Waveform& w) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    auto put_u32 = [&](uint32_t v) {
        char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 24)};
        out.write(b, 4);
    };
    auto put_u16 = [&](uint16_t v) {
        char b[2] = {static_cast<char>(v), static_cast<char>(v >> 8)};
        out.write(b, 2);
    };
    const uint32_t data_bytes = static_cast<uint32_t>(w.samples.size() * 2);
    out.write("RIFF", 4);
    put_u32(36 + data_bytes);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    put_u32(16);
    put_u16(1);  // PCM
    put_u16(1);  // mono
    put_u32(static_cast<uint32_t>(w.sample_rate_hz));
    put_u32(static_cast<uint32_t>(w.sample_rate_hz * 2));
    put_u16(2);
    put_u16(16);
    out.write("data", 4);
    put_u32(data_bytes);
    for (double v : w.samples) {
        const int16_t s = static_cast<int16_t>(std::lround(std::clamp(v, -1.0, 1.0) * 32767.0));
        put_u16(static_cast<uint16_t>(s));
    }
}

// ---- manifest -------------------------------------------------------------------

inline const std::array<const char*, 5>& cry_type_names() {
    static const std::array<const char*, 5> names = {"belly_pain", "burping", "discomfort", "hunger",
                                                     "tired"};
    return names;
}

inline int cry_type_from_string(const std::string& s) {
    const auto& names = cry_type_names();
    for (size_t i = 0; i < names.size(); ++i)
        if (s == names[i]) return static_cast<int>(i);
    return -1;
}

struct ManifestEntry {
    std::string sample_id;
    std::string path;
    int cry_type = 0;   // 0-based index into cry_type_names()
    int domain_id = 1;  // 1-based, as written in the file
    std::optional<double> intensity;
};

inline constexpr const char* kManifestHeader = "sample_id,path,cry_type,domain_id,intensity";

inline std::vector<ManifestEntry> parse_manifest(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("manifest: missing header line");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kManifestHeader)
        throw std::runtime_error("manifest: expected header '" + std::string(kManifestHeader) + "'");

    std::vector<ManifestEntry> entries;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() < 4 || fields.size() > 5)
            throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                     ": expected 4 or 5 comma-separated fields");
        ManifestEntry e;
        e.sample_id = fields[0];
        e.path = fields[1];
        e.cry_type = cry_type_from_string(fields[2]);
        if (e.cry_type < 0)
            throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                     ": unknown cry_type '" + fields[2] + "'");
        try {
            e.domain_id = std::stoi(fields[3]);
        } catch (const std::exception&) {
            throw std::runtime_error("manifest line " + std::to_string(line_no) + ": bad domain_id '" +
                                     fields[3] + "'");
        }
        if (e.domain_id < 1)
            throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                     ": domain_id must be >= 1");
        if (fields.size() == 5 && !fields[4].empty()) {
            const double t = std::strtod(fields[4].c_str(), nullptr);
            if (t < 0.0 || t > 1.0)
                throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                         ": intensity outside [0, 1]");
            e.intensity = t;
        }
        for (const auto& prev : entries)
            if (prev.sample_id == e.sample_id)
                throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                         ": duplicate sample_id '" + e.sample_id + "'");
        entries.push_back(std::move(e));
    }
    return entries;
}

inline std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return parse_manifest(in);
}

// ---- synthetic cries -------------------------------------------------------------

// Five prototypes separated by pitch contour direction, burst rate, and duty
// cycle. Values stay inside the infant fundamental range.
struct CryPrototype {
    double f0_start, f0_end;
    double burst_rate_hz;
    double duty;
};

inline const std::array<CryPrototype, 5>& class_prototypes() {
    static const std::array<CryPrototype, 5> protos = {{
        {500.0, 410.0, 4.0, 0.45},  // belly_pain: falling pitch, fast bursts
        {330.0, 345.0, 1.5, 0.30},  // burping: low flat pitch, sparse short bursts
        {400.0, 480.0, 2.5, 0.55},  // discomfort: rising pitch
        {460.0, 455.0, 3.0, 0.70},  // hunger: flat pitch, dense bursts
        {620.0, 360.0, 1.0, 0.80},  // tired: wide falling pitch, long slow bursts
    }};
    return protos;
}

// Stationary narrowband noise whose center frequency identifies the domain.
struct DomainNuisance {
    double center_hz;
    double level;
};

inline DomainNuisance domain_nuisance(int domain_id) {
    if (domain_id < 1) throw std::invalid_argument("domain id must be >= 1");
    return {5000.0 + 900.0 * (domain_id - 1), 0.16};
}

struct SyntheticSpec {
    double f0_start_hz = 450.0;
    double f0_end_hz = 450.0;
    int n_harmonics = 4;
    std::vector<std::pair<double, double>> bursts;  // (onset_s, duration_s)
    double amplitude = 0.6;
    int cry_class = 0;   // 0-based
    int domain_kind = 1; // 1-based
    uint64_t seed = 0;

    void validate(double clip_s) const {
        if (f0_start_hz < 200.0 || f0_start_hz > 800.0 || f0_end_hz < 200.0 || f0_end_hz > 800.0)
            throw std::invalid_argument("synthetic f0 outside the 200-800 Hz cry range");
        if (amplitude <= 0.0 || amplitude > 1.0)
            throw std::invalid_argument("synthetic amplitude outside (0, 1]");
        if (n_harmonics < 1) throw std::invalid_argument("need at least one harmonic");
        for (const auto& [onset, dur] : bursts)
            if (onset < 0.0 || dur <= 0.0 || onset + dur > clip_s)
                throw std::invalid_argument("burst outside clip");
    }
};

// Prototype-driven spec with seeded per-sample jitter.
inline SyntheticSpec make_prototype_spec(int cry_class, int domain_id, double clip_s, uint64_t seed) {
    if (cry_class < 0 || cry_class >= 5) throw std::invalid_argument("cry class out of range");
    const CryPrototype& proto = class_prototypes()[cry_class];
    Rng rng(derive_seed(seed, "proto"));
    SyntheticSpec spec;
    spec.cry_class = cry_class;
    spec.domain_kind = domain_id;
    spec.seed = seed;
    const double jitter = rng.uniform(0.96, 1.04);
    spec.f0_start_hz = std::clamp(proto.f0_start * jitter, 200.0, 800.0);
    spec.f0_end_hz = std::clamp(proto.f0_end * jitter, 200.0, 800.0);
    spec.amplitude = rng.uniform(0.40, 0.85);
    spec.n_harmonics = 4;
    const double period = 1.0 / proto.burst_rate_hz;
    const double burst_len = proto.duty * period;
    double onset = rng.uniform(0.0, period * 0.5);
    while (onset + burst_len <= clip_s) {
        spec.bursts.emplace_back(onset, burst_len);
        onset += period;
    }
    if (spec.bursts.empty()) spec.bursts.emplace_back(0.0, std::min(burst_len, clip_s * 0.9));
    return spec;
}

struct SynthResult {
    dsp::Waveform wav;
    int y = 0;
    int d = 0;  // 0-based domain index
    std::vector<uint8_t> salience_frames;
    double intensity = 0.0;
};

// Harmonic stack of a linear f0 contour gated by the burst pattern, plus the
// domain's narrowband nuisance. Salience marks exactly the frames that
// overlap a burst.
inline SynthResult synth_cry(const SyntheticSpec& spec, double clip_s,
                             const dsp::FrontendConfig& fe = {}) {
    spec.validate(clip_s);
    const int rate = 16000;
    const int n = static_cast<int>(std::lround(clip_s * rate));
    SynthResult res;
    res.wav.sample_rate_hz = rate;
    res.wav.samples.assign(n, 0.0);
    res.y = spec.cry_class;
    res.d = spec.domain_kind - 1;
    res.intensity = spec.amplitude;

    double harm_norm = 0.0;
    for (int h = 1; h <= spec.n_harmonics; ++h) harm_norm += 1.0 / h;

    const double ramp_s = 0.010;
    for (const auto& [onset, dur] : spec.bursts) {
        const int i0 = static_cast<int>(std::lround(onset * rate));
        const int i1 = std::min(n, static_cast<int>(std::lround((onset + dur) * rate)));
        for (int i = i0; i < i1; ++i) {
            const double t = static_cast<double>(i) / rate;
            // phase integral of the linear f0 contour
            const double phase =
                2.0 * M_PI *
                (spec.f0_start_hz * t + (spec.f0_end_hz - spec.f0_start_hz) * t * t / (2.0 * clip_s));
            double v = 0.0;
            for (int h = 1; h <= spec.n_harmonics; ++h) v += std::sin(h * phase) / h;
            v /= harm_norm;
            const double into = (i - i0) / (ramp_s * rate);
            const double outof = (i1 - 1 - i) / (ramp_s * rate);
            const double gate = std::min({1.0, into, outof});
            res.wav.samples[i] = spec.amplitude * v * std::max(0.0, gate);
        }
    }

    // Narrowband nuisance: quadrature carriers with slowly wandering
    // envelopes, stationary across the clip.
    const DomainNuisance nuis = domain_nuisance(spec.domain_kind);
    Rng rng(derive_seed(spec.seed, "nuisance", static_cast<uint64_t>(spec.domain_kind)));
    double env_a = rng.uniform(-1.0, 1.0);
    double env_b = rng.uniform(-1.0, 1.0);
    const double smooth = 0.995;
    for (int i = 0; i < n; ++i) {
        env_a = smooth * env_a + (1.0 - smooth) * rng.uniform(-1.0, 1.0);
        env_b = smooth * env_b + (1.0 - smooth) * rng.uniform(-1.0, 1.0);
        const double t = static_cast<double>(i) / rate;
        const double carrier = 2.0 * M_PI * nuis.center_hz * t;
        const double nv = 8.0 * (env_a * std::cos(carrier) + env_b * std::sin(carrier));
        res.wav.samples[i] = std::clamp(res.wav.samples[i] + nuis.level * nv, -1.0, 1.0);
    }

    const int win = static_cast<int>(std::lround(fe.window_s * rate));
    const int hop = static_cast<int>(std::lround(fe.hop_s * rate));
    const int n_frames = n >= win ? 1 + (n - win) / hop : 0;
    res.salience_frames.assign(n_frames, 0);
    for (int f = 0; f < n_frames; ++f) {
        const double f0 = static_cast<double>(f * hop) / rate;
        const double f1 = static_cast<double>(f * hop + win) / rate;
        for (const auto& [onset, dur] : spec.bursts)
            if (f1 > onset && f0 < onset + dur) {
                res.salience_frames[f] = 1;
                break;
            }
    }
    return res;
}

// ---- token-level salience ---------------------------------------------------------

// a_j = 1 iff at least half of the frames under the token's (possibly pooled)
// time span are salient; same time-major order as patchify. Pass
// pool_factor 1 for the flat variant.
inline std::vector<uint8_t> tokens_salience(const std::vector<uint8_t>& salience_frames,
                                            const model::EncoderConfig& cfg,
                                            const model::PatchGrid& grid, int pool_factor) {
    if (pool_factor < 1) throw std::invalid_argument("tokens_salience: pool factor must be >= 1");
    const int needed = (grid.n_time - 1) * cfg.stride_t + cfg.patch_t;
    if (static_cast<int>(salience_frames.size()) < needed)
        throw std::invalid_argument("tokens_salience: frame vector shorter than the patch grid");
    const int pooled_time = (grid.n_time + pool_factor - 1) / pool_factor;
    std::vector<uint8_t> a(static_cast<size_t>(pooled_time) * grid.n_freq, 0);
    for (int g = 0; g < pooled_time; ++g) {
        const int w0 = g * pool_factor;
        const int w1 = std::min(grid.n_time, w0 + pool_factor);
        const int f0 = w0 * cfg.stride_t;
        const int f1 = (w1 - 1) * cfg.stride_t + cfg.patch_t;
        int salient = 0;
        for (int f = f0; f < f1; ++f) salient += salience_frames[f];
        const uint8_t flag = 2 * salient >= (f1 - f0) ? 1 : 0;
        for (int v = 0; v < grid.n_freq; ++v) a[static_cast<size_t>(g) * grid.n_freq + v] = flag;
    }
    return a;
}

// ---- dataset assembly ---------------------------------------------------------------

struct RawSample {
    std::string id;
    dsp::Spectrogram x;            // clean log-mel
    dsp::Spectrogram x_perturbed;  // fixed evaluation-time intervention
    int y = 0;
    int d = 0;  // 0-based
    std::vector<uint8_t> salience_frames;  // empty when unknown
    double intensity = 0.5;
};

// Draws one intervention: pitch shift (+-1..3 bins), energy suppression of
// the longest non-salient frame run, or subtraction of the noise profile
// estimated from non-salient frames.
inline dsp::PerturbationSpec sample_perturbation(const dsp::Spectrogram& x,
                                                 const std::vector<uint8_t>& salience_frames,
                                                 uint64_t seed) {
    Rng rng(seed);
    dsp::PerturbationSpec spec;
    spec.rng_seed = seed;
    int kind = static_cast<int>(rng.uniform_int(0, 2));

    // Longest run of non-salient frames; falls back to pitch shift when the
    // whole clip is salient or salience is unknown.
    int best_start = -1, best_len = 0, run_start = -1, run_len = 0;
    for (int f = 0; f < static_cast<int>(salience_frames.size()) && f < x.n_frames; ++f) {
        if (!salience_frames[f]) {
            if (run_len == 0) run_start = f;
            ++run_len;
            if (run_len > best_len) {
                best_len = run_len;
                best_start = run_start;
            }
        } else {
            run_len = 0;
        }
    }
    if (kind != 0 && best_len == 0) kind = 0;

    switch (kind) {
        case 0: {
            const int mag = static_cast<int>(rng.uniform_int(1, 3));
            spec.kind = dsp::PerturbKind::pitch_shift;
            spec.shift_bins = rng.uniform() < 0.5 ? mag : -mag;
            break;
        }
        case 1: {
            spec.kind = dsp::PerturbKind::energy_suppress;
            spec.region = {best_start, best_start + best_len, 0, x.n_mels};
            spec.suppress_factor = 0.3;
            break;
        }
        default: {
            spec.kind = dsp::PerturbKind::noise_subtract;
            spec.noise_profile.assign(x.n_mels, 0.0);
            for (int m = 0; m < x.n_mels; ++m) {
                double acc = 0.0;
                for (int f = best_start; f < best_start + best_len; ++f) acc += x.at(f, m) - x.log_floor;
                spec.noise_profile[m] = 0.5 * acc / best_len;
            }
            break;
        }
    }
    return spec;
}

// Balanced synthetic set: class = i mod 5, domain cycling so every class
// appears in every domain.
inline std::vector<RawSample> make_synthetic_dataset(int n, int n_domains, uint64_t seed,
                                                     const dsp::FrontendConfig& fe = {},
                                                     double clip_s = 1.0) {
    if (n <= 0) throw std::invalid_argument("dataset size must be positive");
    if (n_domains < 1) throw std::invalid_argument("need at least one domain");
    std::vector<RawSample> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        const int cls = i % 5;
        const int dom = (i / 5) % n_domains + 1;
        SyntheticSpec spec =
            make_prototype_spec(cls, dom, clip_s, derive_seed(seed, "sample", static_cast<uint64_t>(i)));
        SynthResult synth = synth_cry(spec, clip_s, fe);
        RawSample s;
        s.id = "syn" + std::to_string(i);
        s.x = dsp::log_mel(synth.wav, fe);
        s.y = synth.y;
        s.d = synth.d;
        s.salience_frames = synth.salience_frames;
        s.intensity = synth.intensity;
        s.x_perturbed = dsp::pseudo_intervene(
            s.x, sample_perturbation(s.x, s.salience_frames, derive_seed(seed, "evalperturb", i)));
        out.push_back(std::move(s));
    }
    return out;
}

// Manifest-backed loading; intensity falls back to scaled clip RMS when the
// column is absent.
inline std::vector<RawSample> load_dataset_from_manifest(const std::string& manifest_path,
                                                         const dsp::FrontendConfig& fe,
                                                         std::vector<std::string>* warnings = nullptr) {
    const std::vector<ManifestEntry> entries = load_manifest(manifest_path);
    std::string dir;
    const size_t slash = manifest_path.find_last_of('/');
    if (slash != std::string::npos) dir = manifest_path.substr(0, slash + 1);

    std::vector<RawSample> out;
    out.reserve(entries.size());
    for (size_t i = 0; i < entries.size(); ++i) {
        const ManifestEntry& e = entries[i];
        const std::string path = e.path.find('/') == 0 ? e.path : dir + e.path;
        dsp::Waveform w = read_wav(path);
        if (w.sample_rate_hz != 16000) w = dsp::resample(w, 16000);
        RawSample s;
        s.id = e.sample_id;
        s.x = dsp::log_mel(w, fe);
        s.y = e.cry_type;
        s.d = e.domain_id - 1;
        if (e.intensity) {
            s.intensity = *e.intensity;
        } else {
            double rms = 0.0;
            for (double v : w.samples) rms += v * v;
            rms = std::sqrt(rms / static_cast<double>(w.samples.size()));
            s.intensity = std::min(1.0, 2.0 * rms);
            if (warnings)
                warnings->push_back("sample " + e.sample_id +
                                    ": no intensity label, using normalized clip RMS");
        }
        s.x_perturbed = dsp::pseudo_intervene(
            s.x, sample_perturbation(s.x, s.salience_frames, derive_seed(0x9e37, "evalperturb", i)));
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace dachtic::data
