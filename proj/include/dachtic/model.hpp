#pragma once

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dachtic/dsp.hpp"
#include "dachtic/rng.hpp"
#include "dachtic/tensor.hpp"

namespace dachtic::model {

// Desk-scale defaults; the published-scale encoder (width 384, 6 heads,
// 4 token + 2 semantic blocks) is selectable through the same fields.
struct EncoderConfig {
    int patch_t = 16;
    int patch_f = 16;
    int stride_t = 8;
    int stride_f = 8;
    int width_d = 64;
    int n_heads = 4;
    int token_blocks = 2;
    int semantic_blocks = 1;
    int mlp_ratio = 4;
    int pool_factor = 2;
    int n_classes = 5;
    int n_domains = 2;
    double grl_lambda = 1.0;
    bool causal_semantic = true;  // semantic stage inherits the causal mask
    int max_positions = 512;

    int head_dim() const { return width_d / n_heads; }
    int patch_len() const { return patch_t * patch_f; }

    void validate() const {
        if (width_d <= 0 || n_heads <= 0 || width_d % n_heads != 0)
            throw std::invalid_argument("encoder config: width_d must be divisible by n_heads");
        if (stride_t <= 0 || stride_f <= 0 || patch_t < stride_t || patch_f < stride_f)
            throw std::invalid_argument("encoder config: need patch >= stride > 0");
        if (pool_factor < 1) throw std::invalid_argument("encoder config: pool_factor must be >= 1");
        if (n_classes < 2 || n_domains < 1)
            throw std::invalid_argument("encoder config: class/domain counts too small");
        if (grl_lambda < 0.0) throw std::invalid_argument("encoder config: grl_lambda must be >= 0");
        if (token_blocks < 0 || semantic_blocks < 0 || mlp_ratio < 1)
            throw std::invalid_argument("encoder config: bad depth settings");
    }
};

// Which pieces of the architecture are active. Training ablations toggle
// these; the default is the full model.
struct ModelVariant {
    bool causal_mask = true;
    bool multitask = true;       // intensity + relevance heads
    bool domain_branch = true;   // GRL + domain classifier
    bool flat = false;           // single stage, no pooling
    bool grl_passthrough = false;  // skip the reversal node; gradient checks
                                   // and the reversed-vs-plain contract need
                                   // the unmodified gradient as reference
};

struct PatchGrid {
    int n_time = 0;
    int n_freq = 0;
    int count() const { return n_time * n_freq; }
};

// ---- parameter storage -----------------------------------------------------

struct ParamEntry {
    std::string name;
    int rows = 0;
    int cols = 0;
    size_t offset = 0;
};

struct ParamLayout {
    std::vector<ParamEntry> entries;
    size_t total = 0;

    const ParamEntry& find(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return e;
        throw std::out_of_range("unknown parameter " + name);
    }
};

inline ParamLayout make_param_layout(const EncoderConfig& cfg) {
    cfg.validate();
    ParamLayout layout;
    auto push = [&](const std::string& name, int rows, int cols) {
        layout.entries.push_back({name, rows, cols, layout.total});
        layout.total += static_cast<size_t>(rows) * cols;
    };
    const int d = cfg.width_d;
    const int hidden = cfg.mlp_ratio * d;
    push("embed.W", d, cfg.patch_len());
    push("embed.b", 1, d);
    auto push_block = [&](const std::string& prefix) {
        push(prefix + ".Wq", d, d);
        push(prefix + ".Wk", d, d);
        push(prefix + ".Wv", d, d);
        push(prefix + ".Wo", d, d);
        push(prefix + ".ln.scale", 1, d);
        push(prefix + ".ln.shift", 1, d);
        push(prefix + ".ffn.W1", hidden, d);
        push(prefix + ".ffn.b1", 1, hidden);
        push(prefix + ".ffn.W2", d, hidden);
        push(prefix + ".ffn.b2", 1, d);
    };
    for (int i = 0; i < cfg.token_blocks; ++i) push_block("token." + std::to_string(i));
    for (int i = 0; i < cfg.semantic_blocks; ++i) push_block("semantic." + std::to_string(i));
    push("head.class.W", cfg.n_classes, d);
    push("head.class.b", 1, cfg.n_classes);
    push("head.intensity.W", 1, d);
    push("head.intensity.b", 1, 1);
    push("head.relevance.W", 1, d);
    push("head.relevance.b", 1, 1);
    push("domain.W1", d, d);
    push("domain.b1", 1, d);
    push("domain.W2", cfg.n_domains, d);
    push("domain.b2", 1, cfg.n_domains);
    return layout;
}

// Fixed sinusoidal encodings over the flattened time-major token order.
inline Tensor sinusoidal_positions(int max_positions, int d) {
    Tensor pos(max_positions, d);
    for (int p = 0; p < max_positions; ++p)
        for (int i = 0; i < d; ++i) {
            const double rate = std::pow(10000.0, -2.0 * (i / 2) / d);
            pos.at(p, i) = (i % 2 == 0) ? std::sin(p * rate) : std::cos(p * rate);
        }
    return pos;
}

struct ModelParams {
    EncoderConfig cfg;
    ParamLayout layout;
    std::vector<double> flat;
    Tensor pos;  // not trainable

    Tensor tensor_of(const std::string& name) const {
        const ParamEntry& e = layout.find(name);
        Tensor t(e.rows, e.cols);
        std::copy_n(flat.begin() + e.offset, t.size(), t.data.begin());
        return t;
    }
};

// Fan-balanced uniform init for matrices, zeros for biases, ones for layer
// norm scales.
inline ModelParams init_params(const EncoderConfig& cfg, uint64_t seed) {
    ModelParams p;
    p.cfg = cfg;
    p.layout = make_param_layout(cfg);
    p.flat.assign(p.layout.total, 0.0);
    Rng rng(derive_seed(seed, "init"));
    for (const auto& e : p.layout.entries) {
        if (e.rows == 1 && e.name.find(".b") != std::string::npos) continue;  // bias stays zero
        if (e.name.find("ln.scale") != std::string::npos) {
            std::fill_n(p.flat.begin() + e.offset, e.cols, 1.0);
            continue;
        }
        if (e.name.find("ln.shift") != std::string::npos) continue;
        const double limit = std::sqrt(6.0 / (e.rows + e.cols));
        for (size_t i = 0; i < static_cast<size_t>(e.rows) * e.cols; ++i)
            p.flat[e.offset + i] = rng.uniform(-limit, limit);
    }
    p.pos = sinusoidal_positions(cfg.max_positions, cfg.width_d);
    return p;
}

// ---- tape-side parameter views ----------------------------------------------

struct BlockParams {
    Tensor Wq, Wk, Wv, Wo, ln_scale, ln_shift, W1, b1, W2, b2;
};

struct BoundParams {
    Tensor W_e, b_e;
    std::vector<BlockParams> token;
    std::vector<BlockParams> semantic;
    Tensor Wc, bc, Wi, bi, Wr, br;
    Tensor Wd1, bd1, Wd2, bd2;
};

// Slices a [1 x total] parameter vector (already on the tape) into named
// views, so one leaf carries every learnable weight.
inline BoundParams bind_params(Tape& tape, const Tensor& flat, const EncoderConfig& cfg,
                               const ParamLayout& layout) {
    if (flat.n_rows != 1 || flat.size() != layout.total)
        throw std::invalid_argument("bind_params: flat vector does not match layout");
    auto view = [&](const std::string& name) {
        const ParamEntry& e = layout.find(name);
        Tensor row = tape.slice(flat, 0, 1, static_cast<int>(e.offset),
                                static_cast<int>(e.offset + static_cast<size_t>(e.rows) * e.cols));
        return e.rows == 1 ? row : tape.reshape(row, e.rows, e.cols);
    };
    BoundParams b;
    b.W_e = view("embed.W");
    b.b_e = view("embed.b");
    auto bind_block = [&](const std::string& prefix) {
        BlockParams blk;
        blk.Wq = view(prefix + ".Wq");
        blk.Wk = view(prefix + ".Wk");
        blk.Wv = view(prefix + ".Wv");
        blk.Wo = view(prefix + ".Wo");
        blk.ln_scale = view(prefix + ".ln.scale");
        blk.ln_shift = view(prefix + ".ln.shift");
        blk.W1 = view(prefix + ".ffn.W1");
        blk.b1 = view(prefix + ".ffn.b1");
        blk.W2 = view(prefix + ".ffn.W2");
        blk.b2 = view(prefix + ".ffn.b2");
        return blk;
    };
    for (int i = 0; i < cfg.token_blocks; ++i) b.token.push_back(bind_block("token." + std::to_string(i)));
    for (int i = 0; i < cfg.semantic_blocks; ++i)
        b.semantic.push_back(bind_block("semantic." + std::to_string(i)));
    b.Wc = view("head.class.W");
    b.bc = view("head.class.b");
    b.Wi = view("head.intensity.W");
    b.bi = view("head.intensity.b");
    b.Wr = view("head.relevance.W");
    b.br = view("head.relevance.b");
    b.Wd1 = view("domain.W1");
    b.bd1 = view("domain.b1");
    b.Wd2 = view("domain.W2");
    b.bd2 = view("domain.b2");
    return b;
}

// ---- forward pieces ----------------------------------------------------------

// Overlapping rectangular patches in time-major order: all frequency windows
// of the first time window, then the second, and so on. Each output row is
// the row-major flattening of one patch.
inline Tensor patchify(const dsp::Spectrogram& x, const EncoderConfig& cfg, PatchGrid* grid_out) {
    if (x.n_frames < cfg.patch_t || x.n_mels < cfg.patch_f)
        throw std::invalid_argument("input too small");
    PatchGrid grid;
    grid.n_time = (x.n_frames - cfg.patch_t) / cfg.stride_t + 1;
    grid.n_freq = (x.n_mels - cfg.patch_f) / cfg.stride_f + 1;
    Tensor patches(grid.count(), cfg.patch_len());
    int row = 0;
    for (int wt = 0; wt < grid.n_time; ++wt)
        for (int wf = 0; wf < grid.n_freq; ++wf, ++row) {
            const int t0 = wt * cfg.stride_t;
            const int f0 = wf * cfg.stride_f;
            for (int u = 0; u < cfg.patch_t; ++u)
                for (int v = 0; v < cfg.patch_f; ++v)
                    patches.at(row, u * cfg.patch_f + v) = x.at(t0 + u, f0 + v);
        }
    if (grid_out) *grid_out = grid;
    return patches;
}

// x_i = W_e vec(P_i) + b_e for every patch row.
inline Tensor embed(Tape& tape, const Tensor& patches, const Tensor& W_e, const Tensor& b_e) {
    if (patches.n_cols != W_e.n_cols)
        throw std::invalid_argument("embed: patch length " + std::to_string(patches.n_cols) +
                                    " does not match projection " + shape_str(W_e));
    return tape.add(tape.matmul(patches, tape.transpose(W_e)), b_e);
}

inline Tensor add_positional(Tape& tape, const Tensor& tokens, const Tensor& pos) {
    if (tokens.n_rows > pos.n_rows)
        throw std::invalid_argument("positional encodings cover " + std::to_string(pos.n_rows) +
                                    " positions, got " + std::to_string(tokens.n_rows) + " tokens");
    Tensor used(tokens.n_rows, tokens.n_cols);
    for (int r = 0; r < tokens.n_rows; ++r)
        for (int c = 0; c < tokens.n_cols; ++c) used.at(r, c) = pos.at(r, c);
    return tape.add(tokens, tape.leaf(used));
}

inline std::vector<uint8_t> causal_mask(int n) {
    std::vector<uint8_t> mask(static_cast<size_t>(n) * n, 0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) mask[static_cast<size_t>(i) * n + j] = 1;
    return mask;
}

// Head-averaged attention maps captured during the forward pass, one [n x n]
// matrix per block in execution order.
struct AttentionTrace {
    std::vector<std::vector<double>> block_attn;
    std::vector<int> block_n;
};

// Scaled dot-product attention over all heads; with `mask` the scores are
// softmaxed over j <= i only, so weights above the diagonal are exactly zero.
inline Tensor multi_head_attention(Tape& tape, const Tensor& z, const BlockParams& p, int n_heads,
                                   const std::vector<uint8_t>* mask, AttentionTrace* trace) {
    const int d = z.n_cols;
    const int dh = d / n_heads;
    Tensor q = tape.matmul(z, tape.transpose(p.Wq));
    Tensor k = tape.matmul(z, tape.transpose(p.Wk));
    Tensor v = tape.matmul(z, tape.transpose(p.Wv));
    Tensor ctx;
    std::vector<double> avg;
    if (trace) avg.assign(static_cast<size_t>(z.n_rows) * z.n_rows, 0.0);
    for (int h = 0; h < n_heads; ++h) {
        Tensor qh = tape.slice(q, 0, z.n_rows, h * dh, (h + 1) * dh);
        Tensor kh = tape.slice(k, 0, z.n_rows, h * dh, (h + 1) * dh);
        Tensor vh = tape.slice(v, 0, z.n_rows, h * dh, (h + 1) * dh);
        Tensor scores = tape.scalar_mul(tape.matmul(qh, tape.transpose(kh)), 1.0 / std::sqrt(dh));
        Tensor attn = tape.row_softmax_masked(scores, mask);
        if (trace)
            for (size_t i = 0; i < avg.size(); ++i) avg[i] += attn.data[i] / n_heads;
        Tensor head_ctx = tape.matmul(attn, vh);
        ctx = h == 0 ? head_ctx : tape.concat(ctx, head_ctx, 1);
    }
    if (trace) {
        trace->block_attn.push_back(std::move(avg));
        trace->block_n.push_back(z.n_rows);
    }
    return tape.matmul(ctx, tape.transpose(p.Wo));
}

// Z' = LayerNorm(Z + FFN(MHSA(Z))): one residual around the combined
// attention + feed-forward map, normalized after the sum.
inline Tensor encoder_block(Tape& tape, const Tensor& z, const BlockParams& p, int n_heads, bool masked,
                            AttentionTrace* trace) {
    const std::vector<uint8_t> mask = masked ? causal_mask(z.n_rows) : std::vector<uint8_t>{};
    Tensor attn = multi_head_attention(tape, z, p, n_heads, masked ? &mask : nullptr, trace);
    Tensor hidden = tape.relu(tape.add(tape.matmul(attn, tape.transpose(p.W1)), p.b1));
    Tensor ffn = tape.add(tape.matmul(hidden, tape.transpose(p.W2)), p.b2);
    return tape.layer_norm(tape.add(z, ffn), p.ln_scale, p.ln_shift);
}

// Grouped mean over consecutive time windows of the patch grid; the last
// group may be short. Frequency positions never mix.
inline Tensor temporal_pool(Tape& tape, const Tensor& z, const PatchGrid& grid, int pool_factor,
                            PatchGrid* pooled_grid) {
    if (pool_factor < 1) throw std::invalid_argument("temporal_pool: pool_factor must be >= 1");
    PatchGrid out_grid = grid;
    if (pool_factor == 1) {
        if (pooled_grid) *pooled_grid = out_grid;
        return z;
    }
    out_grid.n_time = (grid.n_time + pool_factor - 1) / pool_factor;
    Tensor pool(out_grid.count(), grid.count());
    for (int g = 0; g < out_grid.n_time; ++g) {
        const int t0 = g * pool_factor;
        const int t1 = std::min(grid.n_time, t0 + pool_factor);
        for (int f = 0; f < grid.n_freq; ++f)
            for (int t = t0; t < t1; ++t)
                pool.at(g * grid.n_freq + f, t * grid.n_freq + f) = 1.0 / (t1 - t0);
    }
    if (pooled_grid) *pooled_grid = out_grid;
    return tape.matmul(tape.leaf(pool), z);
}

// Identity forward; flips and scales the gradient by -lambda on the way back.
inline Tensor grl_apply(Tape& tape, const Tensor& f, double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("grl_apply: lambda must be >= 0");
    return tape.scale_grad(f, -lambda);
}

struct HeadTensors {
    Tensor y_hat;   // [1 x C]
    Tensor t_hat;   // [1 x 1], absent when multitask is off
    Tensor c_hat;   // [N x 1], absent when multitask is off
    Tensor d_hat;   // [1 x K], absent when the domain branch is off
    Tensor h_cls;   // [1 x d]
    bool has_multitask = true;
    bool has_domain = true;
};

inline HeadTensors heads(Tape& tape, const Tensor& z2, const BoundParams& p, double grl_lambda,
                         const ModelVariant& variant) {
    if (z2.n_rows == 0) throw std::invalid_argument("heads: empty token sequence");
    HeadTensors out;
    out.h_cls = tape.mean_over_axis(z2, 0);
    out.y_hat = tape.row_softmax_masked(tape.add(tape.matmul(out.h_cls, tape.transpose(p.Wc)), p.bc),
                                        nullptr);
    out.has_multitask = variant.multitask;
    out.has_domain = variant.domain_branch;
    if (variant.multitask) {
        out.t_hat = tape.sigmoid(tape.add(tape.matmul(out.h_cls, tape.transpose(p.Wi)), p.bi));
        out.c_hat = tape.sigmoid(tape.add(tape.matmul(z2, tape.transpose(p.Wr)), p.br));
    }
    if (variant.domain_branch) {
        Tensor reversed = variant.grl_passthrough ? out.h_cls : grl_apply(tape, out.h_cls, grl_lambda);
        Tensor hidden = tape.relu(tape.add(tape.matmul(reversed, tape.transpose(p.Wd1)), p.bd1));
        out.d_hat = tape.row_softmax_masked(tape.add(tape.matmul(hidden, tape.transpose(p.Wd2)), p.bd2),
                                            nullptr);
    }
    return out;
}

struct ForwardResult {
    HeadTensors head;
    Tensor z1;  // token-stage output (pre-pooling)
    PatchGrid token_grid;
    PatchGrid head_grid;  // grid the relevance head sees
    AttentionTrace trace;
};

// patchify -> embed -> positions -> causal token blocks -> pool -> semantic
// blocks -> heads. With `flat` the two stages fuse into one unpooled stack of
// token_blocks + semantic_blocks blocks.
inline ForwardResult forward_bound(Tape& tape, const BoundParams& bound, const EncoderConfig& cfg,
                                   const dsp::Spectrogram& x, const Tensor& pos,
                                   const ModelVariant& variant = {}, double lambda_override = -1.0) {
    ForwardResult res;
    Tensor patches = patchify(x, cfg, &res.token_grid);
    Tensor tokens = add_positional(tape, embed(tape, tape.leaf(patches), bound.W_e, bound.b_e), pos);

    const bool masked = variant.causal_mask;
    Tensor z = tokens;
    if (variant.flat) {
        for (const auto& blk : bound.token)
            z = encoder_block(tape, z, blk, cfg.n_heads, masked, &res.trace);
        for (const auto& blk : bound.semantic)
            z = encoder_block(tape, z, blk, cfg.n_heads, masked, &res.trace);
        res.z1 = z;
        res.head_grid = res.token_grid;
    } else {
        for (const auto& blk : bound.token)
            z = encoder_block(tape, z, blk, cfg.n_heads, masked, &res.trace);
        res.z1 = z;
        z = temporal_pool(tape, z, res.token_grid, cfg.pool_factor, &res.head_grid);
        const bool sem_masked = masked && cfg.causal_semantic;
        for (const auto& blk : bound.semantic)
            z = encoder_block(tape, z, blk, cfg.n_heads, sem_masked, &res.trace);
    }
    const double lambda = lambda_override >= 0.0 ? lambda_override : cfg.grl_lambda;
    res.head = heads(tape, z, bound, lambda, variant);
    return res;
}

// Plain-number view of one forward pass.
struct HeadOutputs {
    std::vector<double> class_probs;
    double intensity = 0.0;
    std::vector<double> relevance;
    std::vector<double> domain_probs;
    std::vector<double> h_cls;
    AttentionTrace attention;
    PatchGrid token_grid;
    PatchGrid head_grid;
};

inline HeadOutputs extract_outputs(const ForwardResult& r) {
    HeadOutputs out;
    out.class_probs = r.head.y_hat.data;
    if (r.head.has_multitask) {
        out.intensity = r.head.t_hat.value();
        out.relevance = r.head.c_hat.data;
    }
    if (r.head.has_domain) out.domain_probs = r.head.d_hat.data;
    out.h_cls = r.head.h_cls.data;
    out.attention = r.trace;
    out.token_grid = r.token_grid;
    out.head_grid = r.head_grid;
    return out;
}

inline HeadOutputs infer(const ModelParams& params, const dsp::Spectrogram& x,
                         const ModelVariant& variant = {}) {
    Tape tape;
    Tensor flat = tape.leaf(Tensor(1, static_cast<int>(params.flat.size()), params.flat));
    BoundParams bound = bind_params(tape, flat, params.cfg, params.layout);
    return extract_outputs(forward_bound(tape, bound, params.cfg, x, params.pos, variant));
}

// ---- checkpoint format -------------------------------------------------------

// Self-describing text container: magic line, encoder config, then one
// "param <name> <rows> <cols>" line followed by hexfloat values. Hexfloats
// round-trip doubles exactly, so rewrites are byte-identical.
inline constexpr const char* kCheckpointMagic = "DACHTIC1";

inline void write_config(std::ostream& os, const EncoderConfig& c) {
    os << "encoder.patch_t " << c.patch_t << "\n";
    os << "encoder.patch_f " << c.patch_f << "\n";
    os << "encoder.stride_t " << c.stride_t << "\n";
    os << "encoder.stride_f " << c.stride_f << "\n";
    os << "encoder.width_d " << c.width_d << "\n";
    os << "encoder.n_heads " << c.n_heads << "\n";
    os << "encoder.token_blocks " << c.token_blocks << "\n";
    os << "encoder.semantic_blocks " << c.semantic_blocks << "\n";
    os << "encoder.mlp_ratio " << c.mlp_ratio << "\n";
    os << "encoder.pool_factor " << c.pool_factor << "\n";
    os << "encoder.n_classes " << c.n_classes << "\n";
    os << "encoder.n_domains " << c.n_domains << "\n";
    char buf[48];
    std::snprintf(buf, sizeof buf, "%a", c.grl_lambda);
    os << "encoder.grl_lambda " << buf << "\n";
    os << "encoder.causal_semantic " << (c.causal_semantic ? 1 : 0) << "\n";
    os << "encoder.max_positions " << c.max_positions << "\n";
}

inline void apply_config_line(EncoderConfig& c, const std::string& key, const std::string& value) {
    if (key == "encoder.patch_t") c.patch_t = std::stoi(value);
    else if (key == "encoder.patch_f") c.patch_f = std::stoi(value);
    else if (key == "encoder.stride_t") c.stride_t = std::stoi(value);
    else if (key == "encoder.stride_f") c.stride_f = std::stoi(value);
    else if (key == "encoder.width_d") c.width_d = std::stoi(value);
    else if (key == "encoder.n_heads") c.n_heads = std::stoi(value);
    else if (key == "encoder.token_blocks") c.token_blocks = std::stoi(value);
    else if (key == "encoder.semantic_blocks") c.semantic_blocks = std::stoi(value);
    else if (key == "encoder.mlp_ratio") c.mlp_ratio = std::stoi(value);
    else if (key == "encoder.pool_factor") c.pool_factor = std::stoi(value);
    else if (key == "encoder.n_classes") c.n_classes = std::stoi(value);
    else if (key == "encoder.n_domains") c.n_domains = std::stoi(value);
    else if (key == "encoder.grl_lambda") c.grl_lambda = std::strtod(value.c_str(), nullptr);
    else if (key == "encoder.causal_semantic") c.causal_semantic = value != "0";
    else if (key == "encoder.max_positions") c.max_positions = std::stoi(value);
    else throw std::runtime_error("checkpoint: unknown config key " + key);
}

inline void write_model(std::ostream& os, const ModelParams& p) {
    os << kCheckpointMagic << "\n";
    write_config(os, p.cfg);
    char buf[48];
    for (const auto& e : p.layout.entries) {
        os << "param " << e.name << " " << e.rows << " " << e.cols << "\n";
        const size_t n = static_cast<size_t>(e.rows) * e.cols;
        for (size_t i = 0; i < n; ++i) {
            std::snprintf(buf, sizeof buf, "%a", p.flat[e.offset + i]);
            os << buf << (i + 1 == n ? "\n" : " ");
        }
    }
    os << "end_params\n";
}

inline ModelParams read_model(std::istream& is) {
    std::string magic;
    if (!(is >> magic) || magic != kCheckpointMagic)
        throw std::runtime_error("checkpoint: bad magic header");
    EncoderConfig cfg;
    std::string token;
    // Config lines come first; a "param" token switches to the payload.
    while (is >> token) {
        if (token == "param") break;
        std::string value;
        if (!(is >> value)) throw std::runtime_error("checkpoint: truncated config");
        apply_config_line(cfg, token, value);
    }
    ModelParams p;
    p.cfg = cfg;
    p.layout = make_param_layout(cfg);
    p.flat.assign(p.layout.total, 0.0);
    p.pos = sinusoidal_positions(cfg.max_positions, cfg.width_d);
    if (token != "param") throw std::runtime_error("checkpoint: missing parameters");
    while (true) {
        std::string name;
        int rows = 0, cols = 0;
        if (!(is >> name >> rows >> cols)) throw std::runtime_error("checkpoint: truncated header");
        const ParamEntry& e = p.layout.find(name);
        if (e.rows != rows || e.cols != cols)
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        const size_t n = static_cast<size_t>(rows) * cols;
        for (size_t i = 0; i < n; ++i) {
            std::string v;
            if (!(is >> v)) throw std::runtime_error("checkpoint: truncated values for " + name);
            p.flat[e.offset + i] = std::strtod(v.c_str(), nullptr);
        }
        if (!(is >> token)) throw std::runtime_error("checkpoint: missing end marker");
        if (token == "end_params") break;
        if (token != "param") throw std::runtime_error("checkpoint: unexpected token " + token);
    }
    return p;
}

}  // namespace dachtic::model
