#include "slfm/backbone.hpp"

#include <cmath>

namespace slfm {

void BackboneConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v < 1) throw ConfigError(std::string("backbone: ") + name + " must be >= 1");
    };
    positive(subspaces, "subspaces");
    positive(blocks, "blocks");
    positive(channels_per_subspace, "channels_per_subspace");
    positive(visual_dim, "visual_dim");
    positive(latent_dim, "latent_dim");
    positive(speaker_dim, "speaker_dim");
    positive(ffn_expand, "ffn_expand");
    positive(recomp_proj, "recomp_proj");
    positive(convnext_hidden, "convnext_hidden");
    positive(upsample_factor, "upsample_factor");
    if (convnext_layers < 0) throw ConfigError("backbone: convnext_layers must be >= 0");
    if (adaln_rank < 0) throw ConfigError("backbone: adaln_rank must be >= 0");
    for (auto [k, name] : {std::pair{kernel_time, "kernel_time"},
                           std::pair{kernel_subspace, "kernel_subspace"},
                           std::pair{ffn_kernel, "ffn_kernel"}}) {
        if (k < 1 || k % 2 == 0) {
            throw ConfigError(std::string("backbone: ") + name + " must be odd and positive, got " +
                              std::to_string(k));
        }
    }
    if ((latent_dim + visual_dim) % subspaces != 0) {
        throw ConfigError("backbone: latent_dim + visual_dim = " +
                          std::to_string(latent_dim + visual_dim) + " is not divisible by " +
                          std::to_string(subspaces) + " subspaces");
    }
    if (trunk_width() < 2) throw ConfigError("backbone: trunk width must be >= 2");
}

void Conditioning::validate(int speaker_dim) const {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw ContractError("conditioning: t must lie in [0,1], got " + std::to_string(t));
    }
    if (!speaker.defined() || speaker.size() != speaker_dim) {
        throw ShapeError("conditioning: speaker embedding must have " +
                         std::to_string(speaker_dim) + " entries");
    }
    for (int64_t i = 0; i < speaker.size(); ++i) {
        if (!std::isfinite(speaker.data()[i])) {
            throw NumericError("conditioning: non-finite speaker embedding");
        }
    }
}

// --- init helpers -----------------------------------------------------------

static Tensor init_conv(ParamStore& ps, const std::string& name, Shape shape, Rng& rng) {
    int fan_in = 1;
    for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
    return ps.add(name, Tensor::randn(shape, rng, 1.0 / std::sqrt(static_cast<double>(fan_in))));
}

static Tensor init_linear(ParamStore& ps, const std::string& name, int d_in, int d_out, Rng& rng) {
    return ps.add(name, Tensor::randn({d_in, d_out}, rng, 1.0 / std::sqrt(static_cast<double>(d_in))));
}

// --- AdaLnHead ----------------------------------------------------------------

AdaLnHead::AdaLnHead(ParamStore& ps, const std::string& prefix, int speaker_dim, int width,
                     int n_out, int rank, int blocks, Activation act, Rng& rng)
    : width_(width), n_out_(n_out), rank_(rank), blocks_(blocks), act_(act) {
    speaker_proj_ = init_linear(ps, prefix + ".speaker_proj", speaker_dim, width, rng);
    fc1_w_ = init_linear(ps, prefix + ".fc1.weight", width, width, rng);
    fc1_b_ = ps.add(prefix + ".fc1.bias", Tensor::zeros({width}));
    fc2_w_ = ps.add(prefix + ".fc2.weight", Tensor::zeros({width, n_out * width}));
    fc2_b_ = ps.add(prefix + ".fc2.bias", Tensor::zeros({n_out * width}));
    for (int i = 0; i < blocks; ++i) {
        lowrank_v_.push_back(rank > 0
                                 ? init_linear(ps, prefix + ".block" + std::to_string(i) + ".v",
                                               width, rank, rng)
                                 : Tensor());
        lowrank_u_.push_back(rank > 0
                                 ? ps.add(prefix + ".block" + std::to_string(i) + ".u",
                                          Tensor::zeros({rank, n_out * width}))
                                 : Tensor());
    }
}

Tensor AdaLnHead::hidden(const Conditioning& cond) const {
    Tensor e = reshape(sinusoidal_embedding(cond.t, width_), {1, width_});
    Tensor cs = matmul(reshape(cond.speaker, {1, static_cast<int>(cond.speaker.size())}),
                       speaker_proj_);
    return activation(linear(add(e, cs), fc1_w_, fc1_b_), act_);
}

std::vector<Tensor> AdaLnHead::modulation(const Conditioning& cond, int block_index) const {
    if (block_index >= blocks_) {
        throw ContractError("conditioning head: block index " + std::to_string(block_index) +
                            " out of range (blocks=" + std::to_string(blocks_) + ")");
    }
    Tensor h = hidden(cond);
    Tensor m = linear(h, fc2_w_, fc2_b_);
    if (block_index >= 0 && rank_ > 0) {
        Tensor delta = matmul(matmul(h, lowrank_v_[static_cast<size_t>(block_index)]),
                              lowrank_u_[static_cast<size_t>(block_index)]);
        m = add(m, delta);
    }
    Tensor flat = reshape(m, {n_out_ * width_});
    std::vector<Tensor> chunks;
    chunks.reserve(static_cast<size_t>(n_out_));
    for (int i = 0; i < n_out_; ++i) chunks.push_back(slice_rows(flat, i * width_, (i + 1) * width_));
    return chunks;
}

// --- Decompose -------------------------------------------------------------------

Decompose::Decompose(ParamStore& ps, const BackboneConfig& cfg, Rng& rng)
    : cfg_(cfg),
      head_(ps, "decompose.adaln", cfg.speaker_dim, cfg.trunk_width(), 2, 0, 0, cfg.act, rng) {
    const int G = cfg.group_width();
    const int C = cfg.channels_per_subspace;
    for (int s = 0; s < cfg.subspaces; ++s) {
        const std::string p = "decompose.stream" + std::to_string(s);
        ln_gamma_.push_back(ps.add(p + ".ln.gamma", Tensor::full({G}, 1.0)));
        ln_beta_.push_back(ps.add(p + ".ln.beta", Tensor::zeros({G})));
        conv_k_.push_back(init_conv(ps, p + ".conv.kernel", {C, G, cfg.kernel_time}, rng));
        conv_b_.push_back(ps.add(p + ".conv.bias", Tensor::zeros({C})));
    }
}

Tensor Decompose::streams(const Tensor& x_t, const Tensor& v_up) const {
    if (x_t.ndim() != 2 || x_t.dim(1) != cfg_.latent_dim) {
        throw ShapeError("decompose: latent must be [T," + std::to_string(cfg_.latent_dim) +
                         "], got " + shape_str(x_t.shape()));
    }
    if (v_up.ndim() != 2 || v_up.dim(0) != cfg_.visual_dim || v_up.dim(1) != x_t.dim(0)) {
        throw ShapeError("decompose: time lengths disagree: latent " + shape_str(x_t.shape()) +
                         " vs upsampled visual " + shape_str(v_up.shape()));
    }
    Tensor stacked = concat_rows({transpose2d(x_t), v_up});  // [(Da+Dv), T]
    const int G = cfg_.group_width();
    const int pad = (cfg_.kernel_time - 1) / 2;
    std::vector<Tensor> ys;
    ys.reserve(static_cast<size_t>(cfg_.subspaces));
    for (int s = 0; s < cfg_.subspaces; ++s) {
        Tensor g = slice_rows(stacked, s * G, (s + 1) * G);
        g = layer_norm_frames(g, &ln_gamma_[static_cast<size_t>(s)],
                              &ln_beta_[static_cast<size_t>(s)]);
        ys.push_back(conv1d(g, conv_k_[static_cast<size_t>(s)], conv_b_[static_cast<size_t>(s)],
                            1, pad));
    }
    return concat_rows(ys);  // [S*C, T]
}

Tensor Decompose::forward(const Tensor& x_t, const Tensor& v_up, const Conditioning& cond) const {
    Tensor x = streams(x_t, v_up);
    auto mod = head_.modulation(cond);
    return modulate_frames(layer_norm_frames(x, nullptr, nullptr), mod[0], mod[1]);
}

// --- ConvBlock --------------------------------------------------------------------

ConvBlock::ConvBlock(ParamStore& ps, const std::string& prefix, const BackboneConfig& cfg,
                     Rng& rng)
    : cfg_(cfg) {
    const int C = cfg.channels_per_subspace;
    const int F = cfg.ffn_expand;
    pw_in_k_ = init_conv(ps, prefix + ".attn.pw_in.kernel", {C, C, 1}, rng);
    pw_in_b_ = ps.add(prefix + ".attn.pw_in.bias", Tensor::zeros({C}));
    dw_k_ = init_conv(ps, prefix + ".attn.dw.kernel", {C, cfg.kernel_subspace, cfg.kernel_time},
                      rng);
    pw_v_k_ = init_conv(ps, prefix + ".attn.pw_v.kernel", {C, C, 1}, rng);
    pw_v_b_ = ps.add(prefix + ".attn.pw_v.bias", Tensor::zeros({C}));
    pw_out_k_ = init_conv(ps, prefix + ".attn.pw_out.kernel", {C, C, 1}, rng);
    pw_out_b_ = ps.add(prefix + ".attn.pw_out.bias", Tensor::zeros({C}));
    ffn_in_k_ = init_conv(ps, prefix + ".ffn.expand.kernel", {F, C, cfg.ffn_kernel}, rng);
    ffn_in_b_ = ps.add(prefix + ".ffn.expand.bias", Tensor::zeros({F}));
    ffn_out_k_ = init_conv(ps, prefix + ".ffn.project.kernel", {C, F, 1}, rng);
    ffn_out_b_ = ps.add(prefix + ".ffn.project.bias", Tensor::zeros({C}));
}

Tensor ConvBlock::attention(const Tensor& x, const Tensor& scale, const Tensor& shift,
                            const Tensor& gate) const {
    const int S = cfg_.subspaces;
    const int C = cfg_.channels_per_subspace;
    const int T = x.dim(1);
    Tensor u = modulate_frames(layer_norm_frames(x, nullptr, nullptr), scale, shift);
    Tensor p = grouped_conv1d_shared(u, S, pw_in_k_, pw_in_b_, 1, 0);
    // reorder [S,C,T] -> [C,S,T]: the depthwise conv mixes along (subspace, time)
    Tensor a = depthwise_conv2d(reshape(swap_groups(p, S, C), {C, S, T}), dw_k_);
    a = swap_groups(reshape(a, {C * S, T}), C, S);
    Tensor v = grouped_conv1d_shared(u, S, pw_v_k_, pw_v_b_, 1, 0);
    Tensor o = grouped_conv1d_shared(mul(a, v), S, pw_out_k_, pw_out_b_, 1, 0);
    return gate_add(x, o, gate);
}

Tensor ConvBlock::ffn(const Tensor& x, const Tensor& scale, const Tensor& shift,
                      const Tensor& gate) const {
    const int S = cfg_.subspaces;
    Tensor u = modulate_frames(layer_norm_frames(x, nullptr, nullptr), scale, shift);
    Tensor e = grouped_conv1d_shared(u, S, ffn_in_k_, ffn_in_b_, 1, (cfg_.ffn_kernel - 1) / 2);
    Tensor p = grouped_conv1d_shared(activation(e, cfg_.act), S, ffn_out_k_, ffn_out_b_, 1, 0);
    return gate_add(x, p, gate);
}

Tensor ConvBlock::forward(const Tensor& x, const Modulation& mod) const {
    Tensor y = attention(x, mod.scale_attn, mod.shift_attn, mod.gate_attn);
    return ffn(y, mod.scale_ffn, mod.shift_ffn, mod.gate_ffn);
}

// --- Recompose ---------------------------------------------------------------------

Recompose::Recompose(ParamStore& ps, const BackboneConfig& cfg, Rng& rng)
    : cfg_(cfg),
      head_(ps, "recompose.adaln", cfg.speaker_dim, cfg.trunk_width(), 2, 0, 0, cfg.act, rng) {
    const int C = cfg.channels_per_subspace;
    const int P = cfg.recomp_proj;
    const int D = cfg.subspaces * P;
    for (int s = 0; s < cfg.subspaces; ++s) {
        const std::string p = "recompose.stream" + std::to_string(s);
        proj_k_.push_back(init_conv(ps, p + ".conv.kernel", {P, C, cfg.kernel_time}, rng));
        proj_b_.push_back(ps.add(p + ".conv.bias", Tensor::zeros({P})));
    }
    for (int l = 0; l < cfg.convnext_layers; ++l) {
        const std::string p = "recompose.fuse" + std::to_string(l);
        ConvNextBlock b;
        b.dw_k = init_conv(ps, p + ".dw.kernel", {D, 1, cfg.kernel_time}, rng);
        b.ln_g = ps.add(p + ".ln.gamma", Tensor::full({D}, 1.0));
        b.ln_b = ps.add(p + ".ln.beta", Tensor::zeros({D}));
        b.pw1_k = init_conv(ps, p + ".pw1.kernel", {cfg.convnext_hidden, D, 1}, rng);
        b.pw1_b = ps.add(p + ".pw1.bias", Tensor::zeros({cfg.convnext_hidden}));
        b.pw2_k = init_conv(ps, p + ".pw2.kernel", {D, cfg.convnext_hidden, 1}, rng);
        b.pw2_b = ps.add(p + ".pw2.bias", Tensor::zeros({D}));
        fuse_.push_back(std::move(b));
    }
    out_k_ = ps.add("recompose.out.kernel", Tensor::zeros({cfg.latent_dim, D, 1}));
    out_b_ = ps.add("recompose.out.bias", Tensor::zeros({cfg.latent_dim}));
}

Tensor Recompose::forward(const Tensor& x, const Conditioning& cond) const {
    const int S = cfg_.subspaces;
    const int C = cfg_.channels_per_subspace;
    const int T = x.dim(1);
    const int pad = (cfg_.kernel_time - 1) / 2;
    auto mod = head_.modulation(cond);
    Tensor u = modulate_frames(layer_norm_frames(x, nullptr, nullptr), mod[0], mod[1]);
    std::vector<Tensor> ys;
    ys.reserve(static_cast<size_t>(S));
    for (int s = 0; s < S; ++s) {
        Tensor g = slice_rows(u, s * C, (s + 1) * C);
        ys.push_back(conv1d(g, proj_k_[static_cast<size_t>(s)], proj_b_[static_cast<size_t>(s)],
                            1, pad));
    }
    Tensor h = concat_rows(ys);  // [S*P, T]
    const int D = S * cfg_.recomp_proj;
    for (const ConvNextBlock& b : fuse_) {
        Tensor y = depthwise_conv2d(reshape(h, {D, 1, T}), b.dw_k);
        y = layer_norm_frames(reshape(y, {D, T}), &b.ln_g, &b.ln_b);
        y = conv1d(y, b.pw1_k, b.pw1_b, 1, 0);
        y = activation(y, cfg_.act);
        y = conv1d(y, b.pw2_k, b.pw2_b, 1, 0);
        h = add(h, y);
    }
    return transpose2d(conv1d(h, out_k_, out_b_, 1, 0));  // [T, Da]
}

// --- VisualUpsample -------------------------------------------------------------------

VisualUpsample::VisualUpsample(ParamStore& ps, const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
    const int Dv = cfg.visual_dim;
    kernel_ = init_conv(ps, "upsample.kernel", {Dv, Dv, 2 * cfg.upsample_factor}, rng);
    bias_ = ps.add("upsample.bias", Tensor::zeros({Dv}));
}

Tensor VisualUpsample::forward(const Tensor& visual) const {
    if (visual.ndim() != 2 || visual.dim(1) != cfg_.visual_dim) {
        throw ShapeError("upsample: visual must be [T," + std::to_string(cfg_.visual_dim) +
                         "], got " + shape_str(visual.shape()));
    }
    return transposed_conv1d(transpose2d(visual), kernel_, bias_, cfg_.upsample_factor);
}

// --- Backbone ----------------------------------------------------------------------------

Backbone::Backbone(const BackboneConfig& cfg, ParamStore& ps, Rng& rng)
    : cfg_((cfg.validate(), cfg)),
      up_(ps, cfg, rng),
      dec_(ps, cfg, rng),
      conditioner_(ps, "conditioner", cfg.speaker_dim, cfg.trunk_width(), 6, cfg.adaln_rank,
                   cfg.blocks, cfg.act, rng),
      blocks_([&] {
          std::vector<ConvBlock> v;
          v.reserve(static_cast<size_t>(cfg.blocks));
          for (int i = 0; i < cfg.blocks; ++i) {
              v.emplace_back(ps, "block" + std::to_string(i), cfg, rng);
          }
          return v;
      }()),
      rec_(ps, cfg, rng) {}

Modulation Backbone::block_modulation(const Conditioning& cond, int block_index) const {
    if (block_index < 0 || block_index >= cfg_.blocks) {
        throw ContractError("backbone: block index " + std::to_string(block_index) +
                            " out of range");
    }
    auto m = conditioner_.modulation(cond, block_index);
    return Modulation{m[0], m[1], m[2], m[3], m[4], m[5]};
}

Tensor Backbone::forward(const Tensor& x_t, const Tensor& visual, const Conditioning& cond) const {
    cond.validate(cfg_.speaker_dim);
    if (x_t.ndim() != 2 || visual.ndim() != 2 ||
        x_t.dim(0) != visual.dim(0) * cfg_.upsample_factor) {
        throw ContractError("backbone: latent length " + shape_str(x_t.shape()) +
                            " must be visual length " + shape_str(visual.shape()) + " times " +
                            std::to_string(cfg_.upsample_factor));
    }
    Tensor v_up = up_.forward(visual);
    Tensor h = dec_.forward(x_t, v_up, cond);
    for (int i = 0; i < cfg_.blocks; ++i) {
        h = blocks_[static_cast<size_t>(i)].forward(h, block_modulation(cond, i));
    }
    return rec_.forward(h, cond);
}

int Backbone::time_receptive_radius() const {
    const int rt = (cfg_.kernel_time - 1) / 2;
    const int rf = (cfg_.ffn_kernel - 1) / 2;
    int r = 2 * cfg_.upsample_factor;                       // transposed conv support
    r += rt;                                                // decompose stream conv
    r += cfg_.blocks * ((cfg_.kernel_time - 1) / 2 + rf);   // attention dw + ffn per block
    r += rt;                                                // recompose stream conv
    r += cfg_.convnext_layers * rt;                         // fusion depthwise convs
    return r;
}

}  // namespace slfm
