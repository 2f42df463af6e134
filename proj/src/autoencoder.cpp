#include "latemu/autoencoder.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "latemu/checkpoint.hpp"
#include "latemu/dataset.hpp"
#include "latemu/optim.hpp"
#include "latemu/threading.hpp"

namespace latemu {

namespace {

// 3x3 convolution whose center tap carries a near-identity channel map;
// used for the stem and output head.
Conv2d center_identity_conv(ParamSet& ps, const std::string& name, int64_t in, int64_t out,
                            Pad pad, float noise, Rng& rng) {
    Conv2d c;
    c.pad = pad;
    auto chan = init::near_identity(out, in, 0.0f, rng);
    std::vector<float> w(static_cast<size_t>(out * in * 9), 0.0f);
    for (int64_t o = 0; o < out; ++o) {
        for (int64_t i = 0; i < in; ++i) {
            w[static_cast<size_t>(((o * in + i) * 3 + 1) * 3 + 1)] =
                chan[static_cast<size_t>(o * in + i)];
        }
    }
    for (auto& v : w) v += rng.normal() * noise;
    c.w = ps.add(name + ".w", {out, in, 3, 3}, std::move(w));
    c.b = ps.add(name + ".b", {out}, init::zeros({out}));
    return c;
}

Conv2d make_resampler_conv(ParamSet& ps, const std::string& name, int64_t in, int64_t out,
                           Pad pad, bool identity_init, float noise, Rng& rng) {
    if (identity_init) return Conv2d::near_identity(ps, name, in, out, pad, noise, rng);
    Conv2d c;
    c.pad = pad;
    c.w = ps.add(name + ".w", {out, in, 1, 1}, init::kaiming({out, in, 1, 1}, in, rng));
    c.b = ps.add(name + ".b", {out}, init::zeros({out}));
    return c;
}

Conv2d make_stem_conv(ParamSet& ps, const std::string& name, int64_t in, int64_t out, Pad pad,
                      bool identity_init, float noise, Rng& rng) {
    if (identity_init) return center_identity_conv(ps, name, in, out, pad, noise, rng);
    Conv2d c;
    c.pad = pad;
    c.w = ps.add(name + ".w", {out, in, 3, 3}, init::kaiming({out, in, 3, 3}, in * 9, rng));
    c.b = ps.add(name + ".b", {out}, init::zeros({out}));
    return c;
}

}  // namespace

ConvAutoencoder::ConvAutoencoder(const AutoencoderConfig& cfg) : cfg_(cfg) {
    if (cfg.channels.empty()) throw ShapeError("autoencoder: need at least one level");
    if (cfg.height % cfg.reduction() != 0 || cfg.width % cfg.reduction() != 0) {
        throw ShapeError("autoencoder: grid not divisible by the spatial reduction");
    }
    Rng rng(derive_seed(cfg.init_seed, "ae-init"));
    const size_t levels = cfg.channels.size();
    const Pad pad = cfg.padding;

    auto make_blocks = [&](const std::string& prefix, int64_t ch) {
        std::vector<ResBlock> blocks;
        for (int64_t b = 0; b < cfg_.blocks_per_level; ++b) {
            const std::string base = prefix + ".b" + std::to_string(b);
            ResBlock rb;
            rb.ln1 = LayerNorm(params_, base + ".ln1", ch);
            rb.conv1 = Conv2d(params_, base + ".conv1", ch, ch, 3, pad, rng);
            rb.ln2 = LayerNorm(params_, base + ".ln2", ch);
            rb.conv2 = Conv2d(params_, base + ".conv2", ch, ch, 3, pad, rng, /*zero_init=*/true);
            blocks.push_back(std::move(rb));
        }
        return blocks;
    };

    enc_stem_ = make_stem_conv(params_, "enc.stem", cfg.in_channels, cfg.channels[0], pad,
                               cfg.identity_init, cfg.init_noise, rng);
    for (size_t li = 0; li < levels; ++li) {
        enc_blocks_.push_back(make_blocks("enc.l" + std::to_string(li), cfg.channels[li]));
        if (li + 1 < levels) {
            enc_down_.push_back(make_resampler_conv(
                params_, "enc.l" + std::to_string(li) + ".down", cfg.channels[li] * 4,
                cfg.channels[li + 1], pad, cfg.identity_init, cfg.init_noise, rng));
        }
    }
    if (cfg.attn_bottom) {
        enc_attn_.active = true;
        enc_attn_.ln = LayerNorm(params_, "enc.attn.ln", cfg.channels.back());
        enc_attn_.attn = Attention(params_, "enc.attn", cfg.channels.back(), cfg.heads, false,
                                   false, false, rng);
    }
    enc_latent_ = make_resampler_conv(params_, "enc.latent", cfg.channels.back(),
                                      cfg.latent_channels, pad, cfg.identity_init, cfg.init_noise,
                                      rng);

    dec_stem_ = make_resampler_conv(params_, "dec.stem", cfg.latent_channels, cfg.channels.back(),
                                    pad, cfg.identity_init, cfg.init_noise, rng);
    if (cfg.attn_bottom) {
        dec_attn_.active = true;
        dec_attn_.ln = LayerNorm(params_, "dec.attn.ln", cfg.channels.back());
        dec_attn_.attn = Attention(params_, "dec.attn", cfg.channels.back(), cfg.heads, false,
                                   false, false, rng);
    }
    for (size_t li = levels; li-- > 0;) {
        dec_blocks_.push_back(make_blocks("dec.l" + std::to_string(li), cfg.channels[li]));
        if (li > 0) {
            dec_up_.push_back(make_resampler_conv(
                params_, "dec.l" + std::to_string(li) + ".up", cfg.channels[li],
                cfg.channels[li - 1] * 4, pad, cfg.identity_init, cfg.init_noise, rng));
        }
    }
    dec_head_ = make_stem_conv(params_, "dec.head", cfg.channels[0], cfg.in_channels, pad,
                               cfg.identity_init, cfg.init_noise, rng);
}

Tensor ConvAutoencoder::run_block(const ResBlock& b, const Tensor& x, Rng* dropout_rng) const {
    Tensor h = b.conv1.forward(ops::silu(b.ln1.forward_chan(x)));
    if (dropout_rng != nullptr) h = ops::dropout(h, cfg_.dropout, *dropout_rng, true);
    h = b.conv2.forward(ops::silu(b.ln2.forward_chan(h)));
    return ops::add(x, h);
}

Tensor ConvAutoencoder::run_attn(const AttnBlock& a, const Tensor& x) const {
    if (!a.active) return x;
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor tokens = ops::reshape(ops::permute(x, {0, 2, 3, 1}), {n, h * w, c});
    Tensor attended = a.attn.forward(a.ln.forward(tokens), nullptr, nullptr);
    Tensor back = ops::permute(ops::reshape(attended, {n, h, w, c}), {0, 3, 1, 2});
    return ops::add(x, back);
}

Tensor ConvAutoencoder::encode(const Tensor& x, Rng* dropout_rng) const {
    if (x.ndim() != 4 || x.dim(1) != cfg_.in_channels) {
        throw ShapeError("encode: expected [N," + std::to_string(cfg_.in_channels) + ",H,W], got " +
                         shape_str(x.shape()));
    }
    if (x.dim(2) % cfg_.reduction() != 0 || x.dim(3) % cfg_.reduction() != 0) {
        throw ShapeError("encode: spatial dims not divisible by the reduction");
    }
    Tensor h = enc_stem_.forward(x);
    for (size_t li = 0; li < enc_blocks_.size(); ++li) {
        for (const auto& b : enc_blocks_[li]) h = run_block(b, h, dropout_rng);
        if (li < enc_down_.size()) {
            h = enc_down_[li].forward(ops::space_to_depth(h, 2));
        }
    }
    h = run_attn(enc_attn_, h);
    h = enc_latent_.forward(h);
    return ops::saturate(h, cfg_.bound);
}

Tensor ConvAutoencoder::decode(const Tensor& z, Rng* dropout_rng) const {
    if (z.ndim() != 4 || z.dim(1) != cfg_.latent_channels) {
        throw ShapeError("decode: expected [N," + std::to_string(cfg_.latent_channels) +
                         ",h,w], got " + shape_str(z.shape()));
    }
    Tensor h = dec_stem_.forward(z);
    h = run_attn(dec_attn_, h);
    for (size_t i = 0; i < dec_blocks_.size(); ++i) {
        for (const auto& b : dec_blocks_[i]) h = run_block(b, h, dropout_rng);
        if (i < dec_up_.size()) {
            h = ops::depth_to_space(dec_up_[i].forward(h), 2);
        }
    }
    return dec_head_.forward(h);
}

Tensor ae_loss(const Tensor& x, const Tensor& x_hat) { return ops::l1(x_hat, x); }

namespace {

struct FrameRef {
    const Trajectory* traj;
    int64_t frame;
};

std::vector<FrameRef> collect_frames(const std::vector<Trajectory>& split) {
    std::vector<FrameRef> out;
    for (const auto& t : split) {
        for (int64_t i = 0; i < t.frame_count(); ++i) out.push_back({&t, i});
    }
    return out;
}

Tensor assemble_batch(const std::vector<FrameRef>& frames, const std::vector<int64_t>& idx,
                      bool augment, uint64_t seed, int64_t step) {
    const auto& f0 = frames[static_cast<size_t>(idx[0])].traj->fields[0];
    std::vector<float> data;
    data.reserve(idx.size() * f0.values.size());
    for (size_t k = 0; k < idx.size(); ++k) {
        const FrameRef& ref = frames[static_cast<size_t>(idx[k])];
        const Field& f = ref.traj->fields[static_cast<size_t>(ref.frame)];
        std::vector<float> sample = f.values;
        if (augment) {
            Rng rng(derive_seed(seed, "aug", static_cast<uint64_t>(step), k));
            augment_field(sample, f.channels, f.height, f.width,
                          ref.traj->boundary == Boundary::Periodic, rng);
        }
        data.insert(data.end(), sample.begin(), sample.end());
    }
    return Tensor::from_data({static_cast<int64_t>(idx.size()), f0.channels, f0.height, f0.width},
                             std::move(data));
}

}  // namespace

double autoencoder_val_mae(const ConvAutoencoder& model, const std::vector<Trajectory>& split,
                           int threads) {
    const auto frames = collect_frames(split);
    if (frames.empty()) throw IoError("autoencoder_val_mae: empty split");
    const int64_t batch = 16;
    const int64_t n_batches = (static_cast<int64_t>(frames.size()) + batch - 1) / batch;
    std::vector<double> sums(static_cast<size_t>(n_batches), 0.0);
    std::vector<int64_t> counts(static_cast<size_t>(n_batches), 0);
    parallel_for(n_batches, threads, [&](int64_t bi) {
        NoGradGuard ng;
        std::vector<int64_t> idx;
        for (int64_t j = bi * batch;
             j < std::min<int64_t>((bi + 1) * batch, static_cast<int64_t>(frames.size())); ++j) {
            idx.push_back(j);
        }
        Tensor x = assemble_batch(frames, idx, false, 0, 0);
        Tensor xh = model.decode(model.encode(x));
        double acc = 0.0;
        for (size_t i = 0; i < x.data().size(); ++i) {
            acc += std::abs(static_cast<double>(xh.data()[i]) - x.data()[i]);
        }
        sums[static_cast<size_t>(bi)] = acc;
        counts[static_cast<size_t>(bi)] = x.numel();
    });
    double total = 0.0;
    int64_t count = 0;
    for (int64_t i = 0; i < n_batches; ++i) {
        total += sums[static_cast<size_t>(i)];
        count += counts[static_cast<size_t>(i)];
    }
    return total / static_cast<double>(count);
}

AeTrainResult train_autoencoder(ConvAutoencoder& model, const std::vector<Trajectory>& train_set,
                                const std::vector<Trajectory>& val_set, const AeTrainConfig& cfg) {
    const auto frames = collect_frames(train_set);
    if (frames.empty()) throw IoError("train_autoencoder: empty training set");
    const auto t_start = std::chrono::steady_clock::now();

    AdamConfig adam_cfg;
    adam_cfg.lr = cfg.lr;
    adam_cfg.grad_clip = cfg.grad_clip;
    AdamState state;
    state.init(model.params());

    std::ofstream log;
    if (!cfg.log_path.empty()) {
        log.open(cfg.log_path, std::ios::trunc);
        log << "epoch,step,train_mae,val_mae,wall_s\n";
    }

    AeTrainResult result;
    result.initial_val_mae = autoencoder_val_mae(model, val_set, cfg.threads);
    result.val_history.push_back(result.initial_val_mae);

    auto log_row = [&](int64_t epoch, int64_t step, double train_mae, double val_mae) {
        if (!log.is_open()) return;
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%lld,%lld,%.6g,%.6g,%.2f\n",
                      static_cast<long long>(epoch), static_cast<long long>(step), train_mae,
                      val_mae, wall);
        log << buf;
    };
    log_row(0, 0, 0.0, result.initial_val_mae);

    // shard count is fixed by the batch, not the worker count, so results
    // do not depend on --threads
    const int shards = cfg.batch >= 2 ? 2 : 1;
    const int64_t shard_size = cfg.batch / shards;
    double running_train = 0.0;
    int64_t running_count = 0;

    for (int64_t step = 0; step < cfg.steps; ++step) {
        Rng batch_rng(derive_seed(cfg.seed, "ae-batch", static_cast<uint64_t>(step)));
        std::vector<int64_t> idx(static_cast<size_t>(cfg.batch));
        for (auto& i : idx) {
            i = batch_rng.uniform_int(0, static_cast<int64_t>(frames.size()) - 1);
        }

        std::vector<Gradients> shard_grads(static_cast<size_t>(shards));
        std::vector<double> shard_loss(static_cast<size_t>(shards), 0.0);
        parallel_for(shards, cfg.threads, [&](int64_t s) {
            std::vector<int64_t> sub(idx.begin() + s * shard_size,
                                     (s == shards - 1) ? idx.end()
                                                       : idx.begin() + (s + 1) * shard_size);
            Tensor x = assemble_batch(frames, sub, cfg.augment, cfg.seed,
                                      step * shards + s);
            Rng drop_rng(derive_seed(cfg.seed, "ae-drop", static_cast<uint64_t>(step),
                                     static_cast<uint64_t>(s)));
            Tensor xh = model.decode(model.encode(x, &drop_rng), &drop_rng);
            Tensor loss = ae_loss(x, xh);
            shard_loss[static_cast<size_t>(s)] = loss.item();
            shard_grads[static_cast<size_t>(s)] = backward(loss);
        });

        Gradients total;
        std::vector<float> weights(static_cast<size_t>(shards));
        for (int s = 0; s < shards; ++s) {
            const int64_t sz = (s == shards - 1) ? cfg.batch - shard_size * (shards - 1)
                                                 : shard_size;
            weights[static_cast<size_t>(s)] =
                static_cast<float>(sz) / static_cast<float>(cfg.batch);
        }
        accumulate_gradients(model.params(), shard_grads, total, weights);
        const float lr_now = cosine_lr(cfg.lr, step, cfg.steps, cfg.warmup);
        adam_step(model.params(), total, state, adam_cfg, lr_now);

        for (int s = 0; s < shards; ++s) running_train += shard_loss[static_cast<size_t>(s)];
        running_count += shards;

        if ((step + 1) % cfg.val_every == 0 || step + 1 == cfg.steps) {
            const double val_mae = autoencoder_val_mae(model, val_set, cfg.threads);
            const int64_t epoch = (step + 1 + cfg.val_every - 1) / cfg.val_every;
            log_row(epoch, step + 1, running_train / static_cast<double>(running_count), val_mae);
            running_train = 0.0;
            running_count = 0;
            result.val_history.push_back(val_mae);
            result.final_val_mae = val_mae;
            if (!cfg.checkpoint_path.empty()) save_checkpoint(cfg.checkpoint_path, model.params());
            if (val_mae > cfg.divergence_factor * std::max(result.initial_val_mae, 1e-9)) {
                result.diverged = true;
                break;
            }
        }
    }
    return result;
}

}  // namespace latemu
