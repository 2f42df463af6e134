#include "latemu/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "json.hpp"
#include "latemu/checkpoint.hpp"
#include "latemu/threading.hpp"

namespace latemu {

using nlohmann::json;

namespace {

// Reject unknown keys so config typos surface immediately.
void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!allowed.count(it.key())) {
            throw ConfigError("config: unknown field '" + where + it.key() + "'");
        }
    }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("config: bad value for '" + where + key + "': " + e.what());
    }
}

void read_range(const json& j, const char* key, ThetaRange& out, const std::string& where) {
    if (!j.contains(key)) return;
    std::vector<double> v;
    read(j, key, v, where);
    if (v.size() != 2) throw ConfigError("config: '" + where + key + "' must be [lo, hi]");
    out.lo = v[0];
    out.hi = v[1];
}

void parse_dataset(const json& j, DatasetSpec& d) {
    const std::string w = "dataset.";
    check_keys(j, {"name", "generator", "H", "W", "L", "stride", "counts", "seed0", "vx", "vy",
                   "nu", "ic_power", "feed", "kill", "blob_count"},
               w);
    read(j, "name", d.name, w);
    read(j, "generator", d.generator, w);
    read(j, "H", d.height, w);
    read(j, "W", d.width, w);
    read(j, "L", d.frames, w);
    read(j, "stride", d.stride, w);
    if (j.contains("counts")) {
        const auto& c = j.at("counts");
        check_keys(c, {"train", "val", "test"}, w + "counts.");
        read(c, "train", d.train_count, w + "counts.");
        read(c, "val", d.val_count, w + "counts.");
        read(c, "test", d.test_count, w + "counts.");
    }
    read(j, "seed0", d.seed0, w);
    read_range(j, "vx", d.vx, w);
    read_range(j, "vy", d.vy, w);
    read_range(j, "nu", d.nu, w);
    read(j, "ic_power", d.ic_power, w);
    read_range(j, "feed", d.feed, w);
    read_range(j, "kill", d.kill, w);
    read(j, "blob_count", d.blob_count, w);
    if (d.generator != "advection" && d.generator != "grayscott") {
        throw ConfigError("config: dataset.generator must be advection or grayscott");
    }
}

void parse_ae_train(const json& j, AeTrainConfig& t, const std::string& w) {
    check_keys(j, {"steps", "batch", "lr", "warmup", "grad_clip", "val_every", "augment", "seed",
                   "divergence_factor"},
               w);
    read(j, "steps", t.steps, w);
    read(j, "batch", t.batch, w);
    read(j, "lr", t.lr, w);
    read(j, "warmup", t.warmup, w);
    read(j, "grad_clip", t.grad_clip, w);
    read(j, "val_every", t.val_every, w);
    read(j, "augment", t.augment, w);
    read(j, "seed", t.seed, w);
    read(j, "divergence_factor", t.divergence_factor, w);
}

void parse_ae_entry(const json& j, AutoencoderEntry& e, const std::string& w) {
    check_keys(j, {"id", "c_latent", "channels", "blocks", "attn_bottom", "heads", "dropout",
                   "identity_init", "train"},
               w);
    read(j, "id", e.id, w);
    read(j, "c_latent", e.latent_channels, w);
    read(j, "channels", e.channels, w);
    read(j, "blocks", e.blocks_per_level, w);
    read(j, "attn_bottom", e.attn_bottom, w);
    read(j, "heads", e.heads, w);
    read(j, "dropout", e.dropout, w);
    read(j, "identity_init", e.identity_init, w);
    if (j.contains("train")) parse_ae_train(j.at("train"), e.train, w + "train.");
}

json range_json(const ThetaRange& r) { return json::array({r.lo, r.hi}); }

}  // namespace

std::string ExperimentConfig::cache_root() const {
    const char* env = std::getenv("LATEMU_CACHE");
    if (env != nullptr && env[0] != '\0') return std::string(env);
    return output_dir + "/cache";
}

const AutoencoderEntry& ExperimentConfig::autoencoder(const std::string& id) const {
    for (const auto& e : autoencoders) {
        if (e.id == id) return e;
    }
    throw ConfigError("config: no autoencoder entry with id '" + id + "'");
}

AutoencoderConfig ExperimentConfig::ae_config(const AutoencoderEntry& entry) const {
    AutoencoderConfig cfg;
    cfg.in_channels = 2;  // both synthetic generators emit two channels
    cfg.height = dataset.height;
    cfg.width = dataset.width;
    cfg.channels = entry.channels;
    cfg.blocks_per_level = entry.blocks_per_level;
    cfg.latent_channels = entry.latent_channels;
    cfg.attn_bottom = entry.attn_bottom;
    cfg.heads = entry.heads;
    cfg.dropout = entry.dropout;
    cfg.identity_init = entry.identity_init;
    cfg.padding = Pad::Periodic;
    cfg.init_seed = derive_seed(seed, "ae-arch", std::hash<std::string>{}(entry.id));
    return cfg;
}

int ExperimentConfig::effective_threads() const {
    return threads > 0 ? threads : default_threads();
}

ExperimentConfig default_config() {
    ExperimentConfig cfg;
    cfg.dataset.name = "adv64";
    cfg.dataset.height = 64;
    cfg.dataset.width = 64;
    cfg.dataset.frames = 64;
    cfg.dataset.train_count = 512;
    cfg.dataset.val_count = 16;
    cfg.dataset.test_count = 16;

    AutoencoderEntry c16;
    c16.id = "c16";
    c16.latent_channels = 16;
    c16.channels = {32, 64, 128, 128};
    AutoencoderEntry c4 = c16;
    c4.id = "c4";
    c4.latent_channels = 4;
    AutoencoderEntry c1 = c16;
    c1.id = "c1";
    c1.latent_channels = 1;
    cfg.autoencoders = {c16, c4, c1};
    cfg.horizons = {{1, 10}, {11, 32}, {33, 64}};
    return cfg;
}

ExperimentConfig config_from_json_text(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("config: parse error in " + origin + ": " + e.what());
    }
    ExperimentConfig cfg = default_config();
    const std::string w;
    check_keys(j, {"name", "seed", "output_dir", "threads", "dataset", "autoencoders",
                   "emulator", "sampler", "evaluation"},
               "");
    read(j, "name", cfg.name, w);
    read(j, "seed", cfg.seed, w);
    read(j, "output_dir", cfg.output_dir, w);
    read(j, "threads", cfg.threads, w);
    if (j.contains("dataset")) parse_dataset(j.at("dataset"), cfg.dataset);
    if (j.contains("autoencoders")) {
        cfg.autoencoders.clear();
        int idx = 0;
        for (const auto& e : j.at("autoencoders")) {
            AutoencoderEntry entry;
            parse_ae_entry(e, entry, "autoencoders[" + std::to_string(idx) + "].");
            cfg.autoencoders.push_back(entry);
            ++idx;
        }
        if (cfg.autoencoders.empty()) throw ConfigError("config: autoencoders list is empty");
    }
    if (j.contains("emulator")) {
        const auto& e = j.at("emulator");
        check_keys(e, {"kinds", "bundle", "net", "train"}, "emulator.");
        read(e, "kinds", cfg.emulator_kinds, "emulator.");
        read(e, "bundle", cfg.bundle_n, "emulator.");
        if (e.contains("net")) {
            const auto& n = e.at("net");
            check_keys(n, {"embed", "blocks", "heads", "mlp_ratio", "patch", "dropout", "qk_norm",
                           "rope", "value_residual"},
                       "emulator.net.");
            read(n, "embed", cfg.net.embed, "emulator.net.");
            read(n, "blocks", cfg.net.blocks, "emulator.net.");
            read(n, "heads", cfg.net.heads, "emulator.net.");
            read(n, "mlp_ratio", cfg.net.mlp_ratio, "emulator.net.");
            read(n, "patch", cfg.net.patch, "emulator.net.");
            read(n, "dropout", cfg.net.dropout, "emulator.net.");
            read(n, "qk_norm", cfg.net.qk_norm, "emulator.net.");
            read(n, "rope", cfg.net.rope, "emulator.net.");
            read(n, "value_residual", cfg.net.value_residual, "emulator.net.");
        }
        if (e.contains("train")) {
            const auto& t = e.at("train");
            check_keys(t, {"steps", "batch", "lr", "warmup", "grad_clip", "val_every", "seed",
                           "t_min", "mask_lambda", "flip_prob", "divergence_factor"},
                       "emulator.train.");
            read(t, "steps", cfg.emulator_train.steps, "emulator.train.");
            read(t, "batch", cfg.emulator_train.batch, "emulator.train.");
            read(t, "lr", cfg.emulator_train.lr, "emulator.train.");
            read(t, "warmup", cfg.emulator_train.warmup, "emulator.train.");
            read(t, "grad_clip", cfg.emulator_train.grad_clip, "emulator.train.");
            read(t, "val_every", cfg.emulator_train.val_every, "emulator.train.");
            read(t, "seed", cfg.emulator_train.seed, "emulator.train.");
            read(t, "t_min", cfg.emulator_train.t_min, "emulator.train.");
            read(t, "mask_lambda", cfg.emulator_train.mask_lambda, "emulator.train.");
            read(t, "flip_prob", cfg.emulator_train.flip_prob, "emulator.train.");
            read(t, "divergence_factor", cfg.emulator_train.divergence_factor,
                 "emulator.train.");
        }
        for (const auto& k : cfg.emulator_kinds) {
            if (k != "diffusion" && k != "solver") {
                throw ConfigError("config: emulator kind '" + k + "' is not trainable");
            }
        }
    }
    if (j.contains("sampler")) {
        const auto& s = j.at("sampler");
        check_keys(s, {"n_steps", "method"}, "sampler.");
        read(s, "n_steps", cfg.sampler_steps, "sampler.");
        read(s, "method", cfg.sampler_method, "sampler.");
        if (cfg.sampler_method != "ab3" && cfg.sampler_method != "euler") {
            throw ConfigError("config: sampler.method must be ab3 or euler");
        }
    }
    if (j.contains("evaluation")) {
        const auto& e = j.at("evaluation");
        check_keys(e, {"ensemble", "context", "horizons", "seed"}, "evaluation.");
        read(e, "ensemble", cfg.ensemble, "evaluation.");
        read(e, "context", cfg.eval_context, "evaluation.");
        read(e, "seed", cfg.eval_seed, "evaluation.");
        if (e.contains("horizons")) {
            cfg.horizons.clear();
            for (const auto& h : e.at("horizons")) {
                std::vector<int64_t> v = h.get<std::vector<int64_t>>();
                if (v.size() != 2 || v[0] > v[1]) {
                    throw ConfigError("config: evaluation.horizons entries must be [a, b]");
                }
                cfg.horizons.push_back({v[0], v[1]});
            }
        }
    }
    cfg.config_hash = [&cfg] {
        const std::string canon = config_canonical_json(cfg);
        return bytes_hash_hex(canon.data(), canon.size());
    }();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return config_from_json_text(text, path);
}

std::string config_canonical_json(const ExperimentConfig& cfg) {
    json j;
    j["name"] = cfg.name;
    j["seed"] = cfg.seed;
    const auto& d = cfg.dataset;
    j["dataset"] = {{"name", d.name},       {"generator", d.generator},
                    {"H", d.height},        {"W", d.width},
                    {"L", d.frames},        {"stride", d.stride},
                    {"train", d.train_count}, {"val", d.val_count},
                    {"test", d.test_count}, {"seed0", d.seed0},
                    {"vx", range_json(d.vx)}, {"vy", range_json(d.vy)},
                    {"nu", range_json(d.nu)}, {"ic_power", d.ic_power},
                    {"feed", range_json(d.feed)}, {"kill", range_json(d.kill)},
                    {"blob_count", d.blob_count}};
    j["autoencoders"] = json::array();
    for (const auto& e : cfg.autoencoders) {
        j["autoencoders"].push_back(
            {{"id", e.id},
             {"c_latent", e.latent_channels},
             {"channels", e.channels},
             {"blocks", e.blocks_per_level},
             {"attn_bottom", e.attn_bottom},
             {"heads", e.heads},
             {"dropout", e.dropout},
             {"identity_init", e.identity_init},
             {"train",
              {{"steps", e.train.steps},
               {"batch", e.train.batch},
               {"lr", e.train.lr},
               {"warmup", e.train.warmup},
               {"grad_clip", e.train.grad_clip},
               {"val_every", e.train.val_every},
               {"augment", e.train.augment},
               {"seed", e.train.seed}}}});
    }
    j["emulator"] = {{"kinds", cfg.emulator_kinds},
                     {"bundle", cfg.bundle_n},
                     {"net",
                      {{"embed", cfg.net.embed},
                       {"blocks", cfg.net.blocks},
                       {"heads", cfg.net.heads},
                       {"mlp_ratio", cfg.net.mlp_ratio},
                       {"patch", cfg.net.patch},
                       {"dropout", cfg.net.dropout},
                       {"qk_norm", cfg.net.qk_norm},
                       {"rope", cfg.net.rope},
                       {"value_residual", cfg.net.value_residual}}},
                     {"train",
                      {{"steps", cfg.emulator_train.steps},
                       {"batch", cfg.emulator_train.batch},
                       {"lr", cfg.emulator_train.lr},
                       {"warmup", cfg.emulator_train.warmup},
                       {"grad_clip", cfg.emulator_train.grad_clip},
                       {"val_every", cfg.emulator_train.val_every},
                       {"seed", cfg.emulator_train.seed},
                       {"t_min", cfg.emulator_train.t_min},
                       {"mask_lambda", cfg.emulator_train.mask_lambda},
                       {"flip_prob", cfg.emulator_train.flip_prob}}}};
    j["sampler"] = {{"n_steps", cfg.sampler_steps}, {"method", cfg.sampler_method}};
    json horizons = json::array();
    for (const auto& h : cfg.horizons) horizons.push_back(json::array({h.begin, h.end}));
    j["evaluation"] = {{"ensemble", cfg.ensemble},
                       {"context", cfg.eval_context},
                       {"horizons", horizons},
                       {"seed", cfg.eval_seed}};
    return j.dump();
}

}  // namespace latemu
