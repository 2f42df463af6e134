#include "latemu/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>

#include "json.hpp"
#include "latemu/checkpoint.hpp"
#include "latemu/metrics.hpp"
#include "latemu/optim.hpp"
#include "latemu/report.hpp"
#include "latemu/rollout.hpp"
#include "latemu/threading.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace latemu {
namespace cli {

namespace {

uint64_t tag_hash(const std::string& s) {
    return std::hash<std::string>{}(s);
}

void write_json(const std::string& path, const json& j) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("pipeline: cannot write '" + path + "'");
    os << j.dump(2) << "\n";
}

std::optional<json> read_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) return std::nullopt;
    try {
        return json::parse(is);
    } catch (...) {
        return std::nullopt;
    }
}

bool marker_done(const std::string& path, const std::string& config_hash) {
    auto j = read_json(path);
    return j && j->value("done", false) && j->value("config_hash", std::string()) == config_hash;
}

void require_dataset(const ExperimentConfig& cfg) {
    if (!dataset_ready(cfg.dataset, cfg.data_root(), cfg.config_hash)) {
        throw StageError("missing dependency: run 'generate' first (dataset '" +
                         cfg.dataset.name + "' absent or stale)");
    }
}

void require_ae(const ExperimentConfig& cfg, const std::string& ae_id) {
    if (!marker_done(ae_meta_path(cfg, ae_id), cfg.config_hash)) {
        throw StageError("missing dependency: run 'train-ae' for autoencoder '" + ae_id + "'");
    }
}

std::string ae_hash(const ExperimentConfig& cfg, const std::string& ae_id) {
    return file_hash_hex(ae_checkpoint_path(cfg, ae_id));
}

void require_cache(const ExperimentConfig& cfg, const std::string& ae_id,
                   const std::string& hash) {
    LatentCachePaths cache{cfg.cache_root()};
    for (int64_t i = 0; i < cfg.dataset.total_count(); ++i) {
        if (!fs::exists(cache.entry(cfg.dataset.name, hash, i))) {
            throw StageError("missing dependency: run 'encode' for autoencoder '" + ae_id + "'");
        }
    }
}

ConvAutoencoder load_ae_model(const ExperimentConfig& cfg, const std::string& ae_id) {
    ConvAutoencoder ae(cfg.ae_config(cfg.autoencoder(ae_id)));
    load_checkpoint(ae_checkpoint_path(cfg, ae_id), ae.params());
    return ae;
}

struct LatentBundleSet {
    std::vector<Trajectory> trajs;
    std::vector<std::vector<float>> theta_cond;  // normalized per trajectory
    int64_t channels = 0, grid_h = 0, grid_w = 0;
    int64_t starts_per_traj = 0;

    int64_t bundle = 0;

    void init(std::vector<Trajectory> source, const Normalizer& norm, int64_t bundle_frames) {
        trajs = std::move(source);
        bundle = bundle_frames;
        if (trajs.empty()) throw StageError("empty latent split");
        channels = trajs[0].fields[0].channels;
        grid_h = trajs[0].fields[0].height;
        grid_w = trajs[0].fields[0].width;
        starts_per_traj = trajs[0].frame_count() - bundle_frames + 1;
        if (starts_per_traj < 1) throw StageError("trajectories shorter than the bundle");
        for (const auto& t : trajs) theta_cond.push_back(norm.apply_theta(t.theta));
    }

    int64_t theta_dim() const { return static_cast<int64_t>(theta_cond[0].size()); }

    // rows: (traj, start) pairs
    Tensor gather_bundles(const std::vector<std::pair<int64_t, int64_t>>& rows) const {
        const int64_t frame_elems = channels * grid_h * grid_w;
        std::vector<float> data;
        data.reserve(rows.size() * static_cast<size_t>(bundle * frame_elems));
        for (const auto& [ti, start] : rows) {
            for (int64_t f = 0; f < bundle; ++f) {
                const auto& v = trajs[static_cast<size_t>(ti)]
                                    .fields[static_cast<size_t>(start + f)]
                                    .values;
                data.insert(data.end(), v.begin(), v.end());
            }
        }
        return Tensor::from_data(
            {static_cast<int64_t>(rows.size()), bundle, channels, grid_h, grid_w},
            std::move(data));
    }

    Tensor gather_theta(const std::vector<std::pair<int64_t, int64_t>>& rows) const {
        std::vector<float> data;
        for (const auto& [ti, start] : rows) {
            (void)start;
            const auto& th = theta_cond[static_cast<size_t>(ti)];
            data.insert(data.end(), th.begin(), th.end());
        }
        return Tensor::from_data({static_cast<int64_t>(rows.size()), theta_dim()},
                                 std::move(data));
    }
};

struct DrawnBatch {
    std::vector<std::pair<int64_t, int64_t>> rows;
    std::vector<Mask> masks;
    std::vector<float> t;
    std::vector<float> eps;
};

DrawnBatch draw_batch(const LatentBundleSet& set, int64_t batch, int64_t bundle_n,
                      const EmulatorTrainEntry& tcfg, bool diffusion, uint64_t stream_seed) {
    Rng rng(stream_seed);
    DrawnBatch b;
    const int64_t frame_elems = set.channels * set.grid_h * set.grid_w;
    for (int64_t i = 0; i < batch; ++i) {
        const int64_t ti = rng.uniform_int(0, static_cast<int64_t>(set.trajs.size()) - 1);
        const int64_t start = rng.uniform_int(0, set.starts_per_traj - 1);
        b.rows.emplace_back(ti, start);
        b.masks.push_back(sample_mask(bundle_n, tcfg.mask_lambda, tcfg.flip_prob, rng));
        b.t.push_back(diffusion ? static_cast<float>(sample_t(rng, tcfg.t_min)) : 0.0f);
    }
    if (diffusion) {
        b.eps.resize(static_cast<size_t>(batch * set.bundle * frame_elems));
        for (auto& v : b.eps) v = rng.normal();
    }
    return b;
}

double emulator_val_loss(const DenoiserNet& net, const LatentBundleSet& val,
                         const ExperimentConfig& cfg, bool diffusion, uint64_t seed) {
    NoGradGuard ng;
    const int64_t batches = 4;
    double acc = 0.0;
    for (int64_t i = 0; i < batches; ++i) {
        DrawnBatch b = draw_batch(val, cfg.emulator_train.batch, cfg.bundle_n,
                                  cfg.emulator_train, diffusion, derive_seed(seed, "em-val", i));
        Tensor z = val.gather_bundles(b.rows);
        Tensor theta = val.gather_theta(b.rows);
        Tensor loss = diffusion ? dsm_loss(net, z, theta, b.masks, b.t, b.eps)
                                : solver_loss(net, z, theta, b.masks);
        acc += loss.item();
    }
    return acc / static_cast<double>(batches);
}

struct EvalAccumulator {
    // per (field, lead): sums over trajectories
    std::vector<std::vector<double>> vrmse_sum, ps_low_sum, ps_mid_sum, ps_high_sum;
    std::vector<std::vector<double>> skill_sq_sum, spread_sq_sum;
    int64_t traj_count = 0;
    int64_t fields = 0, leads = 0;
    bool ensemble = false;

    void init(int64_t n_fields, int64_t n_leads, bool has_ensemble) {
        fields = n_fields;
        leads = n_leads;
        ensemble = has_ensemble;
        auto zero = std::vector<std::vector<double>>(
            static_cast<size_t>(n_fields), std::vector<double>(static_cast<size_t>(n_leads), 0.0));
        vrmse_sum = zero;
        ps_low_sum = zero;
        ps_mid_sum = zero;
        ps_high_sum = zero;
        skill_sq_sum = zero;
        spread_sq_sum = zero;
    }
};

std::vector<float> channel_of(const Field& f, int64_t c) {
    const int64_t hw = f.height * f.width;
    return std::vector<float>(f.values.begin() + c * hw, f.values.begin() + (c + 1) * hw);
}

// metrics of one trajectory prediction set against the ground truth
void accumulate_trajectory(EvalAccumulator& acc, const Trajectory& truth,
                           const std::vector<const std::vector<Field>*>& members) {
    const int64_t leads = acc.leads;
    const int64_t channels = truth.fields[0].channels;
    for (int64_t lead = 1; lead <= leads; ++lead) {
        for (int64_t c = 0; c < channels; ++c) {
            const Field& gt = truth.fields[static_cast<size_t>(lead)];
            std::vector<float> gt_c = channel_of(gt, c);

            // ensemble mean prediction for VRMSE
            std::vector<float> mean_c(gt_c.size(), 0.0f);
            for (const auto* m : members) {
                const Field& pf = (*m)[static_cast<size_t>(lead)];
                const int64_t hw = pf.height * pf.width;
                for (int64_t i = 0; i < hw; ++i) {
                    mean_c[static_cast<size_t>(i)] +=
                        pf.values[static_cast<size_t>(c * hw + i)] /
                        static_cast<float>(members.size());
                }
            }
            acc.vrmse_sum[static_cast<size_t>(c)][static_cast<size_t>(lead - 1)] +=
                vrmse(gt_c, mean_c);

            // spectra per member, then averaged
            Spectrum gt_spec = isotropic_spectrum_channel(gt, c);
            double lo = 0.0, mi = 0.0, hi = 0.0;
            for (const auto* m : members) {
                Spectrum ps = isotropic_spectrum_channel((*m)[static_cast<size_t>(lead)], c);
                auto bands = spectrum_band_rmse(gt_spec.power, ps.power);
                lo += bands[0];
                mi += bands[1];
                hi += bands[2];
            }
            const double inv = 1.0 / static_cast<double>(members.size());
            acc.ps_low_sum[static_cast<size_t>(c)][static_cast<size_t>(lead - 1)] += lo * inv;
            acc.ps_mid_sum[static_cast<size_t>(c)][static_cast<size_t>(lead - 1)] += mi * inv;
            acc.ps_high_sum[static_cast<size_t>(c)][static_cast<size_t>(lead - 1)] += hi * inv;

            if (acc.ensemble) {
                std::vector<std::vector<float>> member_chans;
                std::vector<const std::vector<float>*> ptrs;
                member_chans.reserve(members.size());
                for (const auto* m : members) {
                    member_chans.push_back(channel_of((*m)[static_cast<size_t>(lead)], c));
                }
                for (const auto& mc : member_chans) ptrs.push_back(&mc);
                SpreadSkill ss = spread_skill(gt_c, ptrs);
                acc.skill_sq_sum[static_cast<size_t>(c)][static_cast<size_t>(lead - 1)] +=
                    ss.skill * ss.skill;
                acc.spread_sq_sum[static_cast<size_t>(c)][static_cast<size_t>(lead - 1)] +=
                    ss.spread * ss.spread;
            }
        }
    }
    acc.traj_count += 1;
}

// finalized per-lead rows plus horizon rows for one (emulator, compression)
void emit_rows(std::vector<MetricRow>& out, const EvalAccumulator& acc,
               const std::string& emulator, const std::string& compression,
               const std::vector<std::string>& field_names,
               const std::vector<HorizonWindow>& horizons, int64_t ensemble_k) {
    const double inv_traj = 1.0 / static_cast<double>(acc.traj_count);
    const double corr = ensemble_k > 1
                            ? std::sqrt(static_cast<double>(ensemble_k + 1) /
                                        static_cast<double>(ensemble_k))
                            : 0.0;
    // per-field rows plus a cross-field "mean" aggregate
    for (int64_t c = 0; c <= acc.fields; ++c) {
        const bool is_mean = (c == acc.fields);
        const std::string fname = is_mean ? "mean" : field_names[static_cast<size_t>(c)];
        std::vector<double> v_lead(static_cast<size_t>(acc.leads), 0.0);
        std::vector<double> lo_lead = v_lead, mi_lead = v_lead, hi_lead = v_lead,
                            ssr_lead = v_lead, skill_lead = v_lead, spread_lead = v_lead;
        for (int64_t l = 0; l < acc.leads; ++l) {
            auto avg = [&](const std::vector<std::vector<double>>& sums) {
                if (!is_mean) return sums[static_cast<size_t>(c)][static_cast<size_t>(l)] * inv_traj;
                double s = 0.0;
                for (int64_t cc = 0; cc < acc.fields; ++cc) {
                    s += sums[static_cast<size_t>(cc)][static_cast<size_t>(l)] * inv_traj;
                }
                return s / static_cast<double>(acc.fields);
            };
            v_lead[static_cast<size_t>(l)] = avg(acc.vrmse_sum);
            lo_lead[static_cast<size_t>(l)] = avg(acc.ps_low_sum);
            mi_lead[static_cast<size_t>(l)] = avg(acc.ps_mid_sum);
            hi_lead[static_cast<size_t>(l)] = avg(acc.ps_high_sum);
            if (acc.ensemble) {
                const double skill = std::sqrt(avg(acc.skill_sq_sum));
                const double spread = std::sqrt(avg(acc.spread_sq_sum));
                skill_lead[static_cast<size_t>(l)] = skill;
                spread_lead[static_cast<size_t>(l)] = spread;
                ssr_lead[static_cast<size_t>(l)] = skill > 1e-12 ? corr * spread / skill : 0.0;
            }
        }
        std::vector<int64_t> leads(static_cast<size_t>(acc.leads));
        for (int64_t l = 0; l < acc.leads; ++l) leads[static_cast<size_t>(l)] = l + 1;

        for (int64_t l = 0; l < acc.leads; ++l) {
            MetricRow r;
            r.emulator = emulator;
            r.compression = compression;
            r.field = fname;
            r.lead = std::to_string(l + 1);
            r.vrmse = v_lead[static_cast<size_t>(l)];
            r.ps_low = lo_lead[static_cast<size_t>(l)];
            r.ps_mid = mi_lead[static_cast<size_t>(l)];
            r.ps_high = hi_lead[static_cast<size_t>(l)];
            if (acc.ensemble) {
                r.has_ensemble = true;
                r.skill = skill_lead[static_cast<size_t>(l)];
                r.spread = spread_lead[static_cast<size_t>(l)];
                if (ensemble_k > 1 && skill_lead[static_cast<size_t>(l)] > 1e-12) {
                    r.has_ssr = true;
                    r.ssr = ssr_lead[static_cast<size_t>(l)];
                }
            }
            out.push_back(std::move(r));
        }
        for (const auto& h : horizons) {
            if (h.begin > acc.leads) continue;
            HorizonWindow clipped{h.begin, std::min(h.end, acc.leads)};
            MetricRow r;
            r.emulator = emulator;
            r.compression = compression;
            r.field = fname;
            r.lead = h.label();
            r.vrmse = horizon_mean(v_lead, leads, clipped);
            r.ps_low = horizon_mean(lo_lead, leads, clipped);
            r.ps_mid = horizon_mean(mi_lead, leads, clipped);
            r.ps_high = horizon_mean(hi_lead, leads, clipped);
            if (acc.ensemble) {
                r.has_ensemble = true;
                r.skill = horizon_mean(skill_lead, leads, clipped);
                r.spread = horizon_mean(spread_lead, leads, clipped);
                if (ensemble_k > 1) {
                    r.has_ssr = true;
                    r.ssr = horizon_mean(ssr_lead, leads, clipped);
                }
            }
            out.push_back(std::move(r));
        }
    }
}

}  // namespace

std::string ae_checkpoint_path(const ExperimentConfig& cfg, const std::string& ae_id) {
    return cfg.models_dir() + "/ae_" + ae_id + ".ckpt";
}
std::string ae_meta_path(const ExperimentConfig& cfg, const std::string& ae_id) {
    return cfg.models_dir() + "/ae_" + ae_id + ".json";
}
std::string emulator_checkpoint_path(const ExperimentConfig& cfg, const std::string& ae_id,
                                     const std::string& kind) {
    return cfg.models_dir() + "/em_" + ae_id + "_" + kind + ".ckpt";
}
static std::string emulator_meta_path(const ExperimentConfig& cfg, const std::string& ae_id,
                                      const std::string& kind) {
    return cfg.models_dir() + "/em_" + ae_id + "_" + kind + ".json";
}
std::string rollout_dir(const ExperimentConfig& cfg, const std::string& ae_id,
                        const std::string& kind) {
    return cfg.rollouts_dir() + "/" + ae_id + "/" + kind;
}
std::string metrics_csv_path(const ExperimentConfig& cfg) {
    return cfg.reports_dir() + "/metrics.csv";
}

void run_generate(const ExperimentConfig& cfg, bool force) {
    fs::create_directories(cfg.data_root());
    const int64_t written =
        generate_dataset(cfg.dataset, cfg.data_root(), cfg.config_hash, cfg.effective_threads(),
                         force);
    std::printf("[generate] dataset '%s': %s (%lld trajectories)\n", cfg.dataset.name.c_str(),
                written == 0 ? "up to date" : "generated", static_cast<long long>(
                    written == 0 ? cfg.dataset.total_count() : written));
}

void run_train_ae(const ExperimentConfig& cfg, const std::string& ae_id, bool force) {
    require_dataset(cfg);
    fs::create_directories(cfg.models_dir());
    const std::string meta_path = ae_meta_path(cfg, ae_id);
    if (!force && marker_done(meta_path, cfg.config_hash)) {
        std::printf("[train-ae] %s: up to date\n", ae_id.c_str());
        return;
    }
    const AutoencoderEntry& entry = cfg.autoencoder(ae_id);
    Normalizer norm = load_dataset_normalizer(cfg.dataset, cfg.data_root());
    auto normalize_all = [&](Split s) {
        auto split = load_split(cfg.dataset, cfg.data_root(), s);
        for (auto& t : split) {
            for (auto& f : t.fields) f = norm.apply(f);
        }
        return split;
    };
    auto train_set = normalize_all(Split::Train);
    auto val_set = normalize_all(Split::Val);

    ConvAutoencoder model(cfg.ae_config(entry));
    AeTrainConfig tc = entry.train;
    tc.threads = cfg.effective_threads();
    tc.seed = derive_seed(cfg.seed, "ae-train", tag_hash(ae_id), entry.train.seed);
    tc.checkpoint_path = ae_checkpoint_path(cfg, ae_id);
    tc.log_path = cfg.models_dir() + "/ae_" + ae_id + "_log.csv";
    std::printf("[train-ae] %s: %lld steps, compression rate %lld\n", ae_id.c_str(),
                static_cast<long long>(tc.steps),
                static_cast<long long>(cfg.ae_config(entry).compression_rate()));
    AeTrainResult result = train_autoencoder(model, train_set, val_set, tc);
    if (result.diverged) {
        throw NumericalError("train-ae " + ae_id + ": validation loss diverged");
    }
    json meta;
    meta["done"] = true;
    meta["config_hash"] = cfg.config_hash;
    meta["compression_rate"] = cfg.ae_config(entry).compression_rate();
    meta["initial_val_mae"] = result.initial_val_mae;
    meta["final_val_mae"] = result.final_val_mae;
    write_json(meta_path, meta);
    std::printf("[train-ae] %s: val MAE %.4f -> %.4f\n", ae_id.c_str(), result.initial_val_mae,
                result.final_val_mae);
}

void run_encode(const ExperimentConfig& cfg, const std::string& ae_id, bool force) {
    require_dataset(cfg);
    require_ae(cfg, ae_id);
    ConvAutoencoder ae = load_ae_model(cfg, ae_id);
    Normalizer norm = load_dataset_normalizer(cfg.dataset, cfg.data_root());
    LatentCachePaths cache{cfg.cache_root()};
    const std::string hash = ae_hash(cfg, ae_id);
    if (force) fs::remove_all(cache.dir(cfg.dataset.name, hash));
    EncodeStats stats =
        encode_dataset(ae, hash, cfg.dataset, cfg.data_root(), norm, cache,
                       cfg.effective_threads());
    std::printf("[encode] %s: %lld encoded, %lld cached (hash %s)\n", ae_id.c_str(),
                static_cast<long long>(stats.encoded), static_cast<long long>(stats.skipped),
                hash.c_str());
}

void run_train_emulator(const ExperimentConfig& cfg, const std::string& ae_id,
                        const std::string& kind, bool force) {
    if (kind != "diffusion" && kind != "solver") {
        throw ConfigError("train-emulator: kind must be diffusion or solver");
    }
    require_dataset(cfg);
    require_ae(cfg, ae_id);
    const std::string hash = ae_hash(cfg, ae_id);
    require_cache(cfg, ae_id, hash);
    const std::string meta_path = emulator_meta_path(cfg, ae_id, kind);
    if (!force && marker_done(meta_path, cfg.config_hash)) {
        std::printf("[train-emulator] %s/%s: up to date\n", ae_id.c_str(), kind.c_str());
        return;
    }
    Normalizer norm = load_dataset_normalizer(cfg.dataset, cfg.data_root());
    LatentCachePaths cache{cfg.cache_root()};
    LatentBundleSet train_set, val_set;
    train_set.init(load_latent_split(cfg.dataset, cache, hash, Split::Train), norm,
                   cfg.bundle_n + 1);
    val_set.init(load_latent_split(cfg.dataset, cache, hash, Split::Val), norm, cfg.bundle_n + 1);

    const bool diffusion = (kind == "diffusion");
    DenoiserConfig dc;
    dc.channels = train_set.channels;
    dc.grid_h = train_set.grid_h;
    dc.grid_w = train_set.grid_w;
    dc.bundle = cfg.bundle_n + 1;
    dc.theta_dim = train_set.theta_dim();
    dc.embed = cfg.net.embed;
    dc.blocks = cfg.net.blocks;
    dc.heads = cfg.net.heads;
    dc.mlp_ratio = cfg.net.mlp_ratio;
    dc.patch = cfg.net.patch;
    dc.dropout = cfg.net.dropout;
    dc.qk_norm = cfg.net.qk_norm;
    dc.use_rope = cfg.net.rope;
    dc.value_residual = cfg.net.value_residual;
    dc.time_conditioned = diffusion;
    dc.init_seed = derive_seed(cfg.seed, "em-init", tag_hash(ae_id + "/" + kind));
    DenoiserNet net(dc);

    const EmulatorTrainEntry& tc = cfg.emulator_train;
    const uint64_t train_seed = derive_seed(cfg.seed, "em-train", tag_hash(ae_id + "/" + kind),
                                            tc.seed);
    AdamConfig adam_cfg;
    adam_cfg.lr = tc.lr;
    adam_cfg.grad_clip = tc.grad_clip;
    AdamState state;
    state.init(net.params());

    std::ofstream log(cfg.models_dir() + "/em_" + ae_id + "_" + kind + "_log.csv",
                      std::ios::trunc);
    log << "step,loss,lr\n";

    const double initial_val = emulator_val_loss(net, val_set, cfg, diffusion, train_seed);
    double last_val = initial_val;
    std::printf("[train-emulator] %s/%s: %lld steps, initial val loss %.4f\n", ae_id.c_str(),
                kind.c_str(), static_cast<long long>(tc.steps), initial_val);

    const int shards = tc.batch >= 2 ? 2 : 1;
    const int64_t shard_size = tc.batch / shards;
    for (int64_t step = 0; step < tc.steps; ++step) {
        std::vector<Gradients> shard_grads(static_cast<size_t>(shards));
        std::vector<double> shard_loss(static_cast<size_t>(shards), 0.0);
        parallel_for(shards, cfg.effective_threads(), [&](int64_t s) {
            const int64_t rows = (s == shards - 1) ? tc.batch - shard_size * (shards - 1)
                                                   : shard_size;
            DrawnBatch b = draw_batch(train_set, rows, cfg.bundle_n, tc, diffusion,
                                      derive_seed(train_seed, "em-draw",
                                                  static_cast<uint64_t>(step),
                                                  static_cast<uint64_t>(s)));
            Tensor z = train_set.gather_bundles(b.rows);
            Tensor theta = train_set.gather_theta(b.rows);
            Rng drop_rng(derive_seed(train_seed, "em-drop", static_cast<uint64_t>(step),
                                     static_cast<uint64_t>(s)));
            Tensor loss = diffusion
                              ? dsm_loss(net, z, theta, b.masks, b.t, b.eps, &drop_rng)
                              : solver_loss(net, z, theta, b.masks, &drop_rng);
            shard_loss[static_cast<size_t>(s)] = loss.item();
            shard_grads[static_cast<size_t>(s)] = backward(loss);
        });
        Gradients total;
        std::vector<float> weights(static_cast<size_t>(shards));
        for (int s = 0; s < shards; ++s) {
            const int64_t rows = (s == shards - 1) ? tc.batch - shard_size * (shards - 1)
                                                   : shard_size;
            weights[static_cast<size_t>(s)] =
                static_cast<float>(rows) / static_cast<float>(tc.batch);
        }
        accumulate_gradients(net.params(), shard_grads, total, weights);
        const float lr_now = cosine_lr(tc.lr, step, tc.steps, tc.warmup);
        adam_step(net.params(), total, state, adam_cfg, lr_now);

        double step_loss = 0.0;
        for (int s = 0; s < shards; ++s) {
            step_loss += shard_loss[static_cast<size_t>(s)] * weights[static_cast<size_t>(s)];
        }
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%lld,%.6g,%.6g\n", static_cast<long long>(step + 1),
                      step_loss, static_cast<double>(lr_now));
        log << buf;

        if ((step + 1) % tc.val_every == 0 || step + 1 == tc.steps) {
            last_val = emulator_val_loss(net, val_set, cfg, diffusion, train_seed);
            save_checkpoint(emulator_checkpoint_path(cfg, ae_id, kind), net.params());
            if (last_val > tc.divergence_factor * std::max(initial_val, 1e-9)) {
                throw NumericalError("train-emulator " + ae_id + "/" + kind +
                                     ": validation loss diverged at step " +
                                     std::to_string(step + 1));
            }
        }
    }
    json meta;
    meta["done"] = true;
    meta["config_hash"] = cfg.config_hash;
    meta["initial_val_loss"] = initial_val;
    meta["final_val_loss"] = last_val;
    meta["ae_hash"] = hash;
    write_json(meta_path, meta);
    std::printf("[train-emulator] %s/%s: val loss %.4f -> %.4f\n", ae_id.c_str(), kind.c_str(),
                initial_val, last_val);
}

void run_rollout(const ExperimentConfig& cfg, const std::string& ae_id, const std::string& kind,
                 std::optional<uint64_t> seed_override, bool force) {
    require_dataset(cfg);
    require_ae(cfg, ae_id);
    const std::string hash = ae_hash(cfg, ae_id);
    require_cache(cfg, ae_id, hash);

    DenoiserNet* net_ptr = nullptr;
    std::unique_ptr<DenoiserNet> net;
    if (kind != "persistence") {
        if (!marker_done(emulator_meta_path(cfg, ae_id, kind), cfg.config_hash)) {
            throw StageError("missing dependency: run 'train-emulator' for '" + ae_id + "/" +
                             kind + "'");
        }
    }
    const std::string out_dir = rollout_dir(cfg, ae_id, kind);
    const uint64_t seed = seed_override.value_or(cfg.eval_seed);
    const std::string done_path = out_dir + "/done.json";
    {
        auto j = read_json(done_path);
        if (!force && j && j->value("config_hash", std::string()) == cfg.config_hash &&
            j->value("seed", uint64_t{0}) == seed) {
            std::printf("[rollout] %s/%s: up to date\n", ae_id.c_str(), kind.c_str());
            return;
        }
    }
    fs::create_directories(out_dir);

    ConvAutoencoder ae = load_ae_model(cfg, ae_id);
    Normalizer norm = load_dataset_normalizer(cfg.dataset, cfg.data_root());
    LatentCachePaths cache{cfg.cache_root()};
    auto latents = load_latent_split(cfg.dataset, cache, hash, Split::Test);
    auto truth_meta = load_split(cfg.dataset, cfg.data_root(), Split::Test);

    if (kind != "persistence") {
        Normalizer dummy;  // theta_dim comes from the data
        LatentBundleSet probe;
        probe.init({latents[0]}, norm, cfg.bundle_n + 1);
        DenoiserConfig dc;
        dc.channels = probe.channels;
        dc.grid_h = probe.grid_h;
        dc.grid_w = probe.grid_w;
        dc.bundle = cfg.bundle_n + 1;
        dc.theta_dim = probe.theta_dim();
        dc.embed = cfg.net.embed;
        dc.blocks = cfg.net.blocks;
        dc.heads = cfg.net.heads;
        dc.mlp_ratio = cfg.net.mlp_ratio;
        dc.patch = cfg.net.patch;
        dc.dropout = cfg.net.dropout;
        dc.qk_norm = cfg.net.qk_norm;
        dc.use_rope = cfg.net.rope;
        dc.value_residual = cfg.net.value_residual;
        dc.time_conditioned = (kind == "diffusion");
        dc.init_seed = derive_seed(cfg.seed, "em-init", tag_hash(ae_id + "/" + kind));
        net = std::make_unique<DenoiserNet>(dc);
        load_checkpoint(emulator_checkpoint_path(cfg, ae_id, kind), net->params());
        net_ptr = net.get();
    }

    RolloutPlan plan;
    plan.bundle_n = cfg.bundle_n;
    plan.context = cfg.eval_context;
    plan.ensemble = kind == "persistence" ? 1 : cfg.ensemble;
    plan.total_frames = cfg.dataset.frames + 1;
    plan.kind = kind;
    EmulatorBundle em;
    em.net = net_ptr;
    em.sched.t_min = cfg.emulator_train.t_min;
    em.sampler_steps = cfg.sampler_steps;
    em.method = cfg.sampler_method == "euler" ? OdeMethod::Euler : OdeMethod::AB3;

    int64_t blow_ups = 0;
    for (size_t ti = 0; ti < latents.size(); ++ti) {
        const Trajectory& lat = latents[ti];
        auto theta_cond = norm.apply_theta(lat.theta);
        auto result = rollout(em, lat.fields[0], theta_cond, plan,
                              derive_seed(seed, "rollout", tag_hash(ae_id + "/" + kind), ti),
                              cfg.effective_threads());
        for (int64_t k = 0; k < plan.ensemble; ++k) {
            auto pixel = decode_rollout(ae, norm, result.members[static_cast<size_t>(k)],
                                        cfg.effective_threads());
            Trajectory out;
            out.fields = std::move(pixel);
            out.theta = truth_meta[ti].theta;
            out.stride = truth_meta[ti].stride;
            out.boundary = truth_meta[ti].boundary;
            out.channel_names = truth_meta[ti].channel_names;
            out.channel_transforms = truth_meta[ti].channel_transforms;
            out.seed = lat.seed;
            out.config_hash = cfg.config_hash;
            json extra;
            extra["emulator"] = kind;
            extra["member"] = k;
            extra["ae"] = ae_id;
            extra["blow_up"] = result.blow_up[static_cast<size_t>(k)] != 0;
            extra["rollout_seed"] = seed;
            out.extra = extra.dump();
            char name[64];
            std::snprintf(name, sizeof(name), "/traj_%05lld_m%02lld.traj",
                          static_cast<long long>(ti), static_cast<long long>(k));
            save_trajectory(out_dir + name, out);
            if (result.blow_up[static_cast<size_t>(k)]) ++blow_ups;
        }
    }
    json done;
    done["config_hash"] = cfg.config_hash;
    done["seed"] = seed;
    done["members"] = plan.ensemble;
    done["trajectories"] = static_cast<int64_t>(latents.size());
    done["blow_ups"] = blow_ups;
    write_json(done_path, done);
    std::printf("[rollout] %s/%s: %lld trajectories x %lld members (%lld blow-ups)\n",
                ae_id.c_str(), kind.c_str(), static_cast<long long>(latents.size()),
                static_cast<long long>(plan.ensemble), static_cast<long long>(blow_ups));
}

void run_evaluate(const ExperimentConfig& cfg) {
    require_dataset(cfg);
    fs::create_directories(cfg.reports_dir());
    auto truth = load_split(cfg.dataset, cfg.data_root(), Split::Test);
    if (truth.empty()) throw StageError("evaluate: empty test split");
    const std::vector<std::string> field_names = truth[0].channel_names;
    const int64_t leads = cfg.dataset.frames;
    LatentCachePaths cache{cfg.cache_root()};

    std::vector<MetricRow> rows;
    bool any = false;

    for (const auto& entry : cfg.autoencoders) {
        if (!marker_done(ae_meta_path(cfg, entry.id), cfg.config_hash)) continue;
        any = true;
        const std::string hash = ae_hash(cfg, entry.id);
        require_cache(cfg, entry.id, hash);
        const std::string rate =
            std::to_string(cfg.ae_config(entry).compression_rate());

        // reconstruction baseline: decode of the cached ground-truth latents
        ConvAutoencoder ae = load_ae_model(cfg, entry.id);
        Normalizer norm = load_dataset_normalizer(cfg.dataset, cfg.data_root());
        auto latents = load_latent_split(cfg.dataset, cache, hash, Split::Test);
        EvalAccumulator acc;
        acc.init(static_cast<int64_t>(field_names.size()), leads, false);
        std::vector<std::vector<Field>> recon(latents.size());
        parallel_for(static_cast<int64_t>(latents.size()), cfg.effective_threads(),
                     [&](int64_t ti) {
                         recon[static_cast<size_t>(ti)] = decode_rollout(
                             ae, norm, latents[static_cast<size_t>(ti)].fields, 1);
                     });
        for (size_t ti = 0; ti < latents.size(); ++ti) {
            const std::vector<Field>* member = &recon[ti];
            accumulate_trajectory(acc, truth[ti], {member});
        }
        emit_rows(rows, acc, "autoencoder", rate, field_names, cfg.horizons, 1);

        // emulator rollouts, when present
        std::vector<std::string> kinds = cfg.emulator_kinds;
        kinds.push_back("persistence");
        for (const auto& kind : kinds) {
            const std::string dir = rollout_dir(cfg, entry.id, kind);
            auto done = read_json(dir + "/done.json");
            if (!done) continue;
            if (done->value("config_hash", std::string()) != cfg.config_hash) {
                throw StageError("evaluate: rollout '" + entry.id + "/" + kind +
                                 "' was produced under a different config hash; rerun 'rollout'");
            }
            const int64_t members = done->value("members", int64_t{0});
            EvalAccumulator eacc;
            eacc.init(static_cast<int64_t>(field_names.size()), leads, members > 1);
            int64_t excluded = 0;
            for (size_t ti = 0; ti < truth.size(); ++ti) {
                std::vector<Trajectory> loaded;
                for (int64_t k = 0; k < members; ++k) {
                    char name[64];
                    std::snprintf(name, sizeof(name), "/traj_%05lld_m%02lld.traj",
                                  static_cast<long long>(ti), static_cast<long long>(k));
                    Trajectory t = load_trajectory(dir + name);
                    if (t.config_hash != cfg.config_hash) {
                        throw StageError("evaluate: mixed config hashes in rollout outputs");
                    }
                    const json extra = t.extra.empty() ? json::object() : json::parse(t.extra);
                    if (extra.value("blow_up", false)) {
                        ++excluded;
                        continue;
                    }
                    loaded.push_back(std::move(t));
                }
                if (loaded.empty()) continue;
                std::vector<const std::vector<Field>*> ptrs;
                for (const auto& t : loaded) ptrs.push_back(&t.fields);
                accumulate_trajectory(eacc, truth[ti], ptrs);
            }
            if (excluded > 0) {
                std::fprintf(stderr, "[evaluate] %s/%s: %lld blown-up members excluded\n",
                             entry.id.c_str(), kind.c_str(), static_cast<long long>(excluded));
            }
            if (eacc.traj_count > 0) {
                emit_rows(rows, eacc, kind, rate, field_names, cfg.horizons, members);
            }
        }
    }
    if (!any) {
        throw StageError("evaluate: no trained autoencoder found; run 'train-ae' first");
    }
    write_metrics_csv(metrics_csv_path(cfg), rows, cfg.config_hash);
    write_metric_svgs(cfg.reports_dir(), rows, cfg.config_hash);
    std::printf("[evaluate] wrote %zu rows to %s\n", rows.size(),
                metrics_csv_path(cfg).c_str());
}

std::vector<std::string> sweep_plan(const ExperimentConfig& cfg) {
    std::vector<std::string> plan;
    plan.push_back("generate " + cfg.dataset.name);
    for (const auto& entry : cfg.autoencoders) {
        plan.push_back("train-ae " + entry.id);
        plan.push_back("encode " + entry.id);
        for (const auto& kind : cfg.emulator_kinds) {
            plan.push_back("train-emulator " + entry.id + " " + kind);
            plan.push_back("rollout " + entry.id + " " + kind);
        }
        plan.push_back("rollout " + entry.id + " persistence");
    }
    plan.push_back("evaluate");
    return plan;
}

void run_sweep(const ExperimentConfig& cfg, bool force) {
    run_generate(cfg, force);
    for (const auto& entry : cfg.autoencoders) {
        run_train_ae(cfg, entry.id, force);
        run_encode(cfg, entry.id, force);
        for (const auto& kind : cfg.emulator_kinds) {
            run_train_emulator(cfg, entry.id, kind, force);
            run_rollout(cfg, entry.id, kind, std::nullopt, force);
        }
        run_rollout(cfg, entry.id, "persistence", std::nullopt, force);
    }
    run_evaluate(cfg);
}

}  // namespace cli
}  // namespace latemu
