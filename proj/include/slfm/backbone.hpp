#pragma once

#include <vector>

#include "slfm/ops.hpp"
#include "slfm/params.hpp"

namespace slfm {

struct BackboneConfig {
    int subspaces = 4;               // parallel conv streams
    int blocks = 4;                  // conv block count
    int channels_per_subspace = 8;   // stream width
    int visual_dim = 32;
    int latent_dim = 16;
    int speaker_dim = 8;
    int kernel_time = 5;             // conv-attention kernel, time axis
    int kernel_subspace = 7;         // conv-attention kernel, subspace axis
    int ffn_kernel = 3;
    int ffn_expand = 64;
    int adaln_rank = 8;              // 0 = purely shared conditioning
    int recomp_proj = 16;            // per-stream projection width in recomposition
    int convnext_layers = 2;
    int convnext_hidden = 64;
    int upsample_factor = 2;
    Activation act = Activation::gelu;

    int trunk_width() const { return subspaces * channels_per_subspace; }
    int group_width() const { return (latent_dim + visual_dim) / subspaces; }
    void validate() const;
};

struct Conditioning {
    double t = 0.0;      // diffusion time in [0,1]
    Tensor speaker;      // [speaker_dim]

    void validate(int speaker_dim) const;
};

// Per-block modulation: scale/shift before, gate after, for both sub-modules.
struct Modulation {
    Tensor scale_attn, shift_attn, gate_attn;
    Tensor scale_ffn, shift_ffn, gate_ffn;
};

// Conditioning head: sinusoidal time embedding plus a linear map of the
// speaker embedding, through a shared two-layer net whose zero-initialized
// output projection yields identity modulation at init. With rank > 0 each
// block additionally applies a zero-initialized low-rank adjustment
// U_i (V_i h) to the shared hidden state, so all blocks start from the shared
// base and specialize during training.
class AdaLnHead {
public:
    AdaLnHead(ParamStore& ps, const std::string& prefix, int speaker_dim, int width, int n_out,
              int rank, int blocks, Activation act, Rng& rng);

    // n_out vectors of size [width]; block_index < 0 skips the per-block term.
    std::vector<Tensor> modulation(const Conditioning& cond, int block_index = -1) const;

    Tensor hidden(const Conditioning& cond) const;  // [1,width]

private:
    int width_, n_out_, rank_, blocks_;
    Activation act_;
    Tensor speaker_proj_;       // [speaker_dim, width]
    Tensor fc1_w_, fc1_b_;      // [width, width], [width]
    Tensor fc2_w_, fc2_b_;      // [width, n_out*width] zero-init
    std::vector<Tensor> lowrank_v_;  // per block [width, rank]
    std::vector<Tensor> lowrank_u_;  // per block [rank, n_out*width] zero-init
};

// Splits the (noisy latent, upsampled visual) channel stack into subspace
// streams, each with its own layer norm + conv, then modulates the stacked
// result with its own conditioning head.
class Decompose {
public:
    Decompose(ParamStore& ps, const BackboneConfig& cfg, Rng& rng);

    // Pre-modulation stream stack [S*C, T].
    Tensor streams(const Tensor& x_t, const Tensor& v_up) const;
    Tensor forward(const Tensor& x_t, const Tensor& v_up, const Conditioning& cond) const;

private:
    BackboneConfig cfg_;
    std::vector<Tensor> ln_gamma_, ln_beta_;  // per stream [G]
    std::vector<Tensor> conv_k_, conv_b_;     // per stream [C,G,kt], [C]
    AdaLnHead head_;
};

// Conv attention + conv feedforward with gated residuals. The attention
// module mixes channels with shared pointwise maps per stream and mixes
// across (subspace, time) with a depthwise 2-D conv whose output gates the
// value projection elementwise.
class ConvBlock {
public:
    ConvBlock(ParamStore& ps, const std::string& prefix, const BackboneConfig& cfg, Rng& rng);

    Tensor attention(const Tensor& x, const Tensor& scale, const Tensor& shift,
                     const Tensor& gate) const;
    Tensor ffn(const Tensor& x, const Tensor& scale, const Tensor& shift,
               const Tensor& gate) const;
    Tensor forward(const Tensor& x, const Modulation& mod) const;

private:
    BackboneConfig cfg_;
    Tensor pw_in_k_, pw_in_b_, dw_k_, pw_v_k_, pw_v_b_, pw_out_k_, pw_out_b_;
    Tensor ffn_in_k_, ffn_in_b_, ffn_out_k_, ffn_out_b_;
};

// Projects each stream down, concatenates, fuses with a ConvNeXt stack, and
// maps to the latent dimension through a zero-initialized projection (so a
// fresh backbone predicts exactly zero velocity).
class Recompose {
public:
    Recompose(ParamStore& ps, const BackboneConfig& cfg, Rng& rng);

    Tensor forward(const Tensor& x, const Conditioning& cond) const;  // [T, latent_dim]

private:
    BackboneConfig cfg_;
    AdaLnHead head_;
    std::vector<Tensor> proj_k_, proj_b_;  // per stream [P,C,kt],[P]
    struct ConvNextBlock {
        Tensor dw_k;          // [D,1,kt]
        Tensor ln_g, ln_b;    // [D]
        Tensor pw1_k, pw1_b;  // [H,D,1],[H]
        Tensor pw2_k, pw2_b;  // [D,H,1],[D]
    };
    std::vector<ConvNextBlock> fuse_;
    Tensor out_k_, out_b_;  // zero-init [Da, S*P, 1], [Da]
};

// Learned temporal upsampling of visual features by transposed convolution
// (stride = factor, kernel length = 2*factor).
class VisualUpsample {
public:
    VisualUpsample(ParamStore& ps, const BackboneConfig& cfg, Rng& rng);

    Tensor forward(const Tensor& visual) const;  // [Tv,Dv] -> [Dv, Tv*factor]

private:
    BackboneConfig cfg_;
    Tensor kernel_, bias_;
};

class Backbone {
public:
    Backbone(const BackboneConfig& cfg, ParamStore& ps, Rng& rng);

    // Velocity prediction [Ta, latent_dim]; Ta must equal Tv * upsample_factor.
    Tensor forward(const Tensor& x_t, const Tensor& visual, const Conditioning& cond) const;

    Modulation block_modulation(const Conditioning& cond, int block_index) const;

    const BackboneConfig& config() const { return cfg_; }
    const VisualUpsample& upsample() const { return up_; }
    const Decompose& decompose() const { return dec_; }
    const std::vector<ConvBlock>& conv_blocks() const { return blocks_; }
    const Recompose& recompose() const { return rec_; }

    // Upper bound on how many latent frames of context any output frame can
    // see on each side; interior-window tests add this as a margin.
    int time_receptive_radius() const;

private:
    BackboneConfig cfg_;
    VisualUpsample up_;
    Decompose dec_;
    AdaLnHead conditioner_;
    std::vector<ConvBlock> blocks_;
    Recompose rec_;
};

}  // namespace slfm
