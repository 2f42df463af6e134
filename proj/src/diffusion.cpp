#include "latemu/diffusion.hpp"

#include <cmath>

namespace latemu {

void noise_state(const std::vector<float>& z, double t, const std::vector<float>& eps,
                 std::vector<float>& z_t) {
    if (t < 0.0 || t > 1.0) throw ShapeError("noise_state: t outside [0,1]");
    if (z.size() != eps.size()) throw ShapeError("noise_state: size mismatch");
    const float a = static_cast<float>(RectifiedFlow::alpha(t));
    const float s = static_cast<float>(RectifiedFlow::sigma(t));
    z_t.resize(z.size());
    for (size_t i = 0; i < z.size(); ++i) z_t[i] = a * z[i] + s * eps[i];
}

void denoiser_to_score(const std::vector<float>& d_out, const std::vector<float>& z_t, double t,
                       std::vector<float>& score) {
    if (!(t > 0.0)) throw ShapeError("denoiser_to_score: t must be positive (sigma_t > 0)");
    if (d_out.size() != z_t.size()) throw ShapeError("denoiser_to_score: size mismatch");
    const double a = RectifiedFlow::alpha(t);
    const double s2 = RectifiedFlow::sigma(t) * RectifiedFlow::sigma(t);
    score.resize(d_out.size());
    for (size_t i = 0; i < d_out.size(); ++i) {
        score[i] = static_cast<float>((a * d_out[i] - z_t[i]) / s2);
    }
}

int64_t Mask::popcount() const {
    int64_t c = 0;
    for (uint8_t b : bits) c += b;
    return c;
}

bool Mask::valid() const {
    const int64_t n1 = size();
    const int64_t c = popcount();
    if (c < 1 || c >= n1) return false;
    bool left_ok = true, right_ok = true;
    for (int64_t i = 0; i < n1; ++i) {
        if (bits[static_cast<size_t>(i)] != (i < c ? 1 : 0)) left_ok = false;
        if (bits[static_cast<size_t>(i)] != (i >= n1 - c ? 1 : 0)) right_ok = false;
    }
    return left_ok || right_ok;
}

Mask Mask::left(int64_t frames, int64_t context) {
    Mask m;
    m.bits.assign(static_cast<size_t>(frames), 0);
    for (int64_t i = 0; i < context; ++i) m.bits[static_cast<size_t>(i)] = 1;
    return m;
}

Mask Mask::right(int64_t frames, int64_t context) { return Mask::left(frames, context).flipped(); }

Mask Mask::flipped() const {
    Mask m;
    m.bits.assign(bits.rbegin(), bits.rend());
    return m;
}

std::vector<double> truncated_poisson_pmf(int64_t n, double lambda) {
    if (n < 1) throw ShapeError("truncated_poisson_pmf: n must be >= 1");
    std::vector<double> pmf(static_cast<size_t>(n));
    double w = lambda;  // lambda^1 / 1!
    double z = 0.0;
    for (int64_t c = 1; c <= n; ++c) {
        pmf[static_cast<size_t>(c - 1)] = w;
        z += w;
        w *= lambda / static_cast<double>(c + 1);
    }
    for (auto& p : pmf) p /= z;
    return pmf;
}

Mask sample_mask(int64_t n, double lambda, double flip_prob, Rng& rng) {
    const auto pmf = truncated_poisson_pmf(n, lambda);
    const double u = rng.uniform_double();
    double cdf = 0.0;
    int64_t c = n;
    for (int64_t i = 1; i <= n; ++i) {
        cdf += pmf[static_cast<size_t>(i - 1)];
        if (u < cdf) {
            c = i;
            break;
        }
    }
    Mask m = Mask::left(n + 1, c);
    if (rng.uniform_double() < flip_prob) m = m.flipped();
    return m;
}

double sample_t(Rng& rng, double t_min) { return t_min + (1.0 - t_min) * rng.uniform_double(); }

namespace {

// [B,F,C,h,w] -> [B, F*(h/p)*(w/p), C*p*p]
Tensor patchify(const Tensor& x, int p) {
    const int64_t B = x.dim(0), F = x.dim(1), C = x.dim(2), h = x.dim(3), w = x.dim(4);
    Tensor r = ops::reshape(x, {B, F, C, h / p, p, w / p, p});
    Tensor t = ops::permute(r, {0, 1, 3, 5, 2, 4, 6});
    return ops::reshape(t, {B, F * (h / p) * (w / p), C * p * p});
}

Tensor unpatchify(const Tensor& y, int64_t F, int64_t C, int64_t h, int64_t w, int p) {
    const int64_t B = y.dim(0);
    Tensor r = ops::reshape(y, {B, F, h / p, w / p, C, p, p});
    Tensor t = ops::permute(r, {0, 1, 4, 2, 5, 3, 6});
    return ops::reshape(t, {B, F, C, h, w});
}

RopeTable build_rope(const DenoiserConfig& cfg) {
    RopeTable table;
    const int64_t half = (cfg.embed / cfg.heads) / 2;
    const int64_t hp = cfg.grid_h / cfg.patch;
    const int64_t wp = cfg.grid_w / cfg.patch;
    table.positions = cfg.bundle * hp * wp;
    table.half = half;
    const int64_t p_spatial = half / 3;
    const int64_t p_time = half - 2 * p_spatial;
    table.cos_v.resize(static_cast<size_t>(table.positions * half));
    table.sin_v.resize(static_cast<size_t>(table.positions * half));
    int64_t tok = 0;
    for (int64_t f = 0; f < cfg.bundle; ++f) {
        for (int64_t y = 0; y < hp; ++y) {
            for (int64_t x = 0; x < wp; ++x, ++tok) {
                for (int64_t j = 0; j < half; ++j) {
                    double pos, freq;
                    if (j < p_time) {
                        pos = static_cast<double>(f);
                        freq = std::pow(10000.0,
                                        -static_cast<double>(j) / std::max<int64_t>(p_time, 1));
                    } else if (j < p_time + p_spatial) {
                        pos = static_cast<double>(y);
                        freq = std::pow(10000.0, -static_cast<double>(j - p_time) /
                                                     std::max<int64_t>(p_spatial, 1));
                    } else {
                        pos = static_cast<double>(x);
                        freq = std::pow(10000.0, -static_cast<double>(j - p_time - p_spatial) /
                                                     std::max<int64_t>(p_spatial, 1));
                    }
                    const double angle = pos * freq;
                    table.cos_v[static_cast<size_t>(tok * half + j)] =
                        static_cast<float>(std::cos(angle));
                    table.sin_v[static_cast<size_t>(tok * half + j)] =
                        static_cast<float>(std::sin(angle));
                }
            }
        }
    }
    return table;
}

}  // namespace

DenoiserNet::DenoiserNet(const DenoiserConfig& cfg) : cfg_(cfg) {
    if (cfg.embed % cfg.heads != 0) throw ShapeError("denoiser: embed not divisible by heads");
    if (cfg.grid_h % cfg.patch != 0 || cfg.grid_w % cfg.patch != 0) {
        throw ShapeError("denoiser: grid not divisible by patch size");
    }
    Rng rng(derive_seed(cfg.init_seed, "denoiser-init"));
    const int64_t E = cfg.embed;

    embed_ = Linear(params_, "embed", cfg.token_features(), E, rng);
    pos_emb_ = params_.add("pos", {cfg.token_count(), E},
                           init::normal({cfg.token_count(), E}, 0.02f, rng));
    theta_mlp1_ = Linear(params_, "theta1", cfg.theta_dim, E, rng);
    theta_mlp2_ = Linear(params_, "theta2", E, E, rng);
    if (cfg.time_conditioned) {
        time_mlp1_ = Linear(params_, "time1", 64, E, rng);
        time_mlp2_ = Linear(params_, "time2", E, E, rng);
    }
    blocks_.reserve(static_cast<size_t>(cfg.blocks));
    for (int64_t i = 0; i < cfg.blocks; ++i) {
        const std::string base = "blk" + std::to_string(i);
        Block b;
        b.ada = Linear(params_, base + ".ada", E, 6 * E, rng, /*zero_init=*/true);
        b.attn = Attention(params_, base + ".attn", E, cfg.heads, cfg.qk_norm, cfg.use_rope,
                           cfg.value_residual && i > 0, rng);
        b.mlp_in = Linear(params_, base + ".mlp1", E, cfg.mlp_ratio * E, rng);
        b.mlp_out = Linear(params_, base + ".mlp2", cfg.mlp_ratio * E, E, rng);
        blocks_.push_back(std::move(b));
    }
    final_ada_ = Linear(params_, "final_ada", E, 2 * E, rng, /*zero_init=*/true);
    head_ = Linear(params_, "head", E, cfg.channels * cfg.patch * cfg.patch, rng,
                   /*zero_init=*/true);
    rope_ = build_rope(cfg);
}

Tensor DenoiserNet::embed_tokens(const Tensor& bundle_in, const std::vector<Mask>& masks) const {
    const int64_t B = bundle_in.dim(0);
    Tensor tokens = patchify(bundle_in, cfg_.patch);  // [B,T,Cp^2]
    const int64_t T = tokens.dim(1);
    const int64_t per_frame = cfg_.tokens_per_frame();
    std::vector<float> mask_chan(static_cast<size_t>(B * T), 0.0f);
    for (int64_t b = 0; b < B; ++b) {
        const Mask& mask = masks.size() == 1 ? masks[0] : masks[static_cast<size_t>(b)];
        for (int64_t tk = 0; tk < T; ++tk) {
            mask_chan[static_cast<size_t>(b * T + tk)] =
                static_cast<float>(mask.bits[static_cast<size_t>(tk / per_frame)]);
        }
    }
    Tensor mc = Tensor::from_data({B, T, 1}, std::move(mask_chan));
    Tensor with_mask = ops::concat({tokens, mc}, 2);
    return ops::add_tokens(embed_.forward(with_mask), pos_emb_);
}

Tensor DenoiserNet::condition(const Tensor& theta, const std::vector<float>& t) const {
    Tensor c = theta_mlp2_.forward(ops::silu(theta_mlp1_.forward(theta)));
    if (!cfg_.time_conditioned) return c;
    const int64_t B = theta.dim(0);
    if (static_cast<int64_t>(t.size()) != B) throw ShapeError("denoiser: t size != batch");
    const int64_t half = 32;
    std::vector<float> feats(static_cast<size_t>(B * 2 * half));
    for (int64_t b = 0; b < B; ++b) {
        const double tv = static_cast<double>(t[static_cast<size_t>(b)]) * 1000.0;
        for (int64_t j = 0; j < half; ++j) {
            const double freq =
                std::exp(-std::log(10000.0) * static_cast<double>(j) / static_cast<double>(half));
            feats[static_cast<size_t>(b * 2 * half + j)] = static_cast<float>(std::sin(tv * freq));
            feats[static_cast<size_t>(b * 2 * half + half + j)] =
                static_cast<float>(std::cos(tv * freq));
        }
    }
    Tensor tf = Tensor::from_data({B, 2 * half}, std::move(feats));
    Tensor te = time_mlp2_.forward(ops::silu(time_mlp1_.forward(tf)));
    return ops::add(c, te);
}

Tensor DenoiserNet::forward(const Tensor& bundle_in, const std::vector<Mask>& masks,
                            const Tensor& theta, const std::vector<float>& t,
                            Rng* dropout_rng) const {
    if (bundle_in.ndim() != 5 || bundle_in.dim(1) != cfg_.bundle ||
        bundle_in.dim(2) != cfg_.channels || bundle_in.dim(3) != cfg_.grid_h ||
        bundle_in.dim(4) != cfg_.grid_w) {
        throw ShapeError("denoiser: bundle shape " + shape_str(bundle_in.shape()) +
                         " does not match config");
    }
    if (masks.empty() ||
        (masks.size() != 1 && masks.size() != static_cast<size_t>(bundle_in.dim(0)))) {
        throw ShapeError("denoiser: need one mask or one per batch row");
    }
    for (const auto& m : masks) {
        if (m.size() != cfg_.bundle) throw ShapeError("denoiser: mask length != bundle");
    }
    const bool training = dropout_rng != nullptr;
    const int64_t E = cfg_.embed;

    Tensor x = embed_tokens(bundle_in, masks);
    Tensor cvec = ops::silu(condition(theta, t));
    Tensor v_first;
    for (const auto& blk : blocks_) {
        Tensor ada = blk.ada.forward(cvec);  // [B,6E]
        Tensor s1 = ops::slice(ada, 1, 0, E);
        Tensor b1 = ops::slice(ada, 1, E, E);
        Tensor g1 = ops::slice(ada, 1, 2 * E, E);
        Tensor s2 = ops::slice(ada, 1, 3 * E, E);
        Tensor b2 = ops::slice(ada, 1, 4 * E, E);
        Tensor g2 = ops::slice(ada, 1, 5 * E, E);

        Tensor h = ops::modulate(ops::layer_norm(x, Tensor(), Tensor()), s1, b1);
        Tensor a = blk.attn.forward(h, cfg_.use_rope ? &rope_ : nullptr, &v_first);
        if (training) a = ops::dropout(a, cfg_.dropout, *dropout_rng, true);
        x = ops::add(x, ops::gate(a, g1));

        Tensor h2 = ops::modulate(ops::layer_norm(x, Tensor(), Tensor()), s2, b2);
        Tensor m = ops::silu(blk.mlp_in.forward(h2));
        if (training) m = ops::dropout(m, cfg_.dropout, *dropout_rng, true);
        x = ops::add(x, ops::gate(blk.mlp_out.forward(m), g2));
    }
    Tensor fin = final_ada_.forward(cvec);
    Tensor shift = ops::slice(fin, 1, 0, E);
    Tensor scale = ops::slice(fin, 1, E, E);
    Tensor h = ops::modulate(ops::layer_norm(x, Tensor(), Tensor()), scale, shift);
    Tensor y = head_.forward(h);
    return unpatchify(y, cfg_.bundle, cfg_.channels, cfg_.grid_h, cfg_.grid_w, cfg_.patch);
}

void assemble_dsm_input(const std::vector<float>& z_bundle, const std::vector<float>& z_t,
                        const Mask& mask, int64_t frame_elems, std::vector<float>& input) {
    if (z_bundle.size() != z_t.size()) throw ShapeError("assemble_dsm_input: size mismatch");
    input.resize(z_bundle.size());
    const int64_t frames = mask.size();
    if (static_cast<int64_t>(z_bundle.size()) % (frames * frame_elems) != 0) {
        throw ShapeError("assemble_dsm_input: bundle size not divisible by frames");
    }
    const int64_t rows = static_cast<int64_t>(z_bundle.size()) / (frames * frame_elems);
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t f = 0; f < frames; ++f) {
            const int64_t off = (r * frames + f) * frame_elems;
            const bool known = mask.bits[static_cast<size_t>(f)] != 0;
            const float* src = (known ? z_bundle.data() : z_t.data()) + off;
            std::copy(src, src + frame_elems, input.data() + off);
        }
    }
}

Tensor mask_weights(const std::vector<Mask>& masks, const Shape& bundle_shape) {
    if (bundle_shape.size() != 5) throw ShapeError("mask_weights: expects [B,F,C,H,W]");
    const int64_t B = bundle_shape[0], F = bundle_shape[1];
    const int64_t frame_elems = bundle_shape[2] * bundle_shape[3] * bundle_shape[4];
    std::vector<float> w(static_cast<size_t>(B * F * frame_elems));
    for (int64_t b = 0; b < B; ++b) {
        const Mask& mask = masks.size() == 1 ? masks[0] : masks[static_cast<size_t>(b)];
        if (F != mask.size()) throw ShapeError("mask_weights: mask length != bundle frames");
        for (int64_t f = 0; f < F; ++f) {
            const float v = mask.bits[static_cast<size_t>(f)] ? 0.0f : 1.0f;
            float* p = w.data() + (b * F + f) * frame_elems;
            for (int64_t j = 0; j < frame_elems; ++j) p[j] = v;
        }
    }
    return Tensor::from_data(bundle_shape, std::move(w));
}

Tensor dsm_loss(const DenoiserNet& net, const Tensor& z_bundle, const Tensor& theta,
                const std::vector<Mask>& masks, const std::vector<float>& t,
                const std::vector<float>& eps, Rng* dropout_rng) {
    const auto& cfg = net.config();
    const int64_t B = z_bundle.dim(0);
    const int64_t frame_elems = cfg.channels * cfg.grid_h * cfg.grid_w;
    const int64_t row_elems = cfg.bundle * frame_elems;
    if (static_cast<int64_t>(eps.size()) != z_bundle.numel()) {
        throw ShapeError("dsm_loss: eps size mismatch");
    }
    if (static_cast<int64_t>(t.size()) != B) throw ShapeError("dsm_loss: t size != batch");

    std::vector<float> input(static_cast<size_t>(z_bundle.numel()));
    for (int64_t b = 0; b < B; ++b) {
        const float a = static_cast<float>(RectifiedFlow::alpha(t[static_cast<size_t>(b)]));
        const float s = static_cast<float>(RectifiedFlow::sigma(t[static_cast<size_t>(b)]));
        const Mask& mask = masks.size() == 1 ? masks[0] : masks[static_cast<size_t>(b)];
        for (int64_t f = 0; f < cfg.bundle; ++f) {
            const int64_t off = b * row_elems + f * frame_elems;
            const bool known = mask.bits[static_cast<size_t>(f)] != 0;
            for (int64_t j = 0; j < frame_elems; ++j) {
                const float z = z_bundle.data()[static_cast<size_t>(off + j)];
                input[static_cast<size_t>(off + j)] =
                    known ? z : a * z + s * eps[static_cast<size_t>(off + j)];
            }
        }
    }
    Tensor in = Tensor::from_data(z_bundle.shape(), std::move(input));
    Tensor pred = net.forward(in, masks, theta, t, dropout_rng);
    return ops::masked_mse(pred, z_bundle, mask_weights(masks, z_bundle.shape()));
}

Tensor solver_loss(const DenoiserNet& net, const Tensor& z_bundle, const Tensor& theta,
                   const std::vector<Mask>& masks, Rng* dropout_rng) {
    const auto& cfg = net.config();
    const int64_t B = z_bundle.dim(0);
    const int64_t frame_elems = cfg.channels * cfg.grid_h * cfg.grid_w;
    std::vector<float> input(static_cast<size_t>(z_bundle.numel()), 0.0f);
    for (int64_t b = 0; b < B; ++b) {
        const Mask& mask = masks.size() == 1 ? masks[0] : masks[static_cast<size_t>(b)];
        for (int64_t f = 0; f < cfg.bundle; ++f) {
            if (!mask.bits[static_cast<size_t>(f)]) continue;
            const int64_t off = (b * cfg.bundle + f) * frame_elems;
            std::copy(z_bundle.data().begin() + off, z_bundle.data().begin() + off + frame_elems,
                      input.begin() + off);
        }
    }
    Tensor in = Tensor::from_data(z_bundle.shape(), std::move(input));
    std::vector<float> t0(static_cast<size_t>(B), 0.0f);
    Tensor pred = net.forward(in, masks, theta, t0, dropout_rng);
    return ops::masked_mse(pred, z_bundle, mask_weights(masks, z_bundle.shape()));
}

}  // namespace latemu
