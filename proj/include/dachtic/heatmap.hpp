#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dachtic/dsp.hpp"
#include "dachtic/model.hpp"

namespace dachtic::heatmap {

// Frame-axis center of a pooled token group and mel-axis center of a
// frequency window, in spectrogram cells.
inline double group_time_center(int g, int pool, const model::PatchGrid& unpooled,
                                const model::EncoderConfig& cfg) {
    const int w0 = g * pool;
    const int w1 = std::min(unpooled.n_time, w0 + pool);
    const int f0 = w0 * cfg.stride_t;
    const int f1 = (w1 - 1) * cfg.stride_t + cfg.patch_t;
    return 0.5 * (f0 + f1 - 1);
}

inline double window_freq_center(int v, const model::EncoderConfig& cfg) {
    return v * cfg.stride_f + 0.5 * (cfg.patch_f - 1);
}

// Per-token scores spread over the spectrogram grid: every cell takes the
// score of the nearest token center (earlier token wins ties).
inline std::vector<double> upsample_token_scores(const std::vector<double>& scores,
                                                 const model::PatchGrid& head_grid,
                                                 const model::PatchGrid& unpooled_grid, int pool,
                                                 const model::EncoderConfig& cfg, int n_frames,
                                                 int n_mels) {
    if (static_cast<int>(scores.size()) != head_grid.count())
        throw std::invalid_argument("heatmap: score count does not match token grid");
    std::vector<double> time_centers(head_grid.n_time);
    for (int g = 0; g < head_grid.n_time; ++g)
        time_centers[g] = group_time_center(g, pool, unpooled_grid, cfg);
    std::vector<double> freq_centers(head_grid.n_freq);
    for (int v = 0; v < head_grid.n_freq; ++v) freq_centers[v] = window_freq_center(v, cfg);

    auto nearest = [](const std::vector<double>& centers, double x) {
        int best = 0;
        double best_d = std::abs(x - centers[0]);
        for (int i = 1; i < static_cast<int>(centers.size()); ++i) {
            const double d = std::abs(x - centers[i]);
            if (d < best_d) {
                best_d = d;
                best = i;
            }
        }
        return best;
    };

    std::vector<double> out(static_cast<size_t>(n_frames) * n_mels);
    for (int t = 0; t < n_frames; ++t) {
        const int g = nearest(time_centers, t);
        for (int f = 0; f < n_mels; ++f) {
            const int v = nearest(freq_centers, f);
            out[static_cast<size_t>(t) * n_mels + f] = scores[static_cast<size_t>(g) * head_grid.n_freq + v];
        }
    }
    return out;
}

// Binary P5 graymap, min-max normalized to 0..255. A constant map renders as
// mid gray. Columns are frames (x = time), rows are mel bands with the
// highest band on top.
inline void write_pgm(std::ostream& os, const std::vector<double>& values, int n_frames, int n_mels) {
    if (values.size() != static_cast<size_t>(n_frames) * n_mels)
        throw std::invalid_argument("pgm: value count does not match dimensions");
    const double lo = *std::min_element(values.begin(), values.end());
    const double hi = *std::max_element(values.begin(), values.end());
    os << "P5\n" << n_frames << " " << n_mels << "\n255\n";
    for (int row = 0; row < n_mels; ++row) {
        const int f = n_mels - 1 - row;
        for (int t = 0; t < n_frames; ++t) {
            const double v = values[static_cast<size_t>(t) * n_mels + f];
            const int pixel =
                hi > lo ? static_cast<int>(std::lround(255.0 * (v - lo) / (hi - lo))) : 128;
            os.put(static_cast<char>(std::clamp(pixel, 0, 255)));
        }
    }
}

inline void write_pgm_file(const std::string& path, const std::vector<double>& values, int n_frames,
                           int n_mels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    write_pgm(out, values, n_frames, n_mels);
}

// Mean attention received per token in the final block (head-averaged
// column mass).
inline std::vector<double> attention_mass(const model::AttentionTrace& trace) {
    if (trace.block_attn.empty()) throw std::invalid_argument("heatmap: no attention maps recorded");
    const std::vector<double>& attn = trace.block_attn.back();
    const int n = trace.block_n.back();
    std::vector<double> mass(n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) mass[j] += attn[static_cast<size_t>(i) * n + j] / n;
    return mass;
}

}  // namespace dachtic::heatmap
