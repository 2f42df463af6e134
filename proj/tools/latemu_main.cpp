#include <cstdio>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "latemu/pipeline.hpp"

int main(int argc, char** argv) {
    CLI::App app{"latemu: latent-space emulation laboratory for synthetic dynamical systems"};
    app.require_subcommand(1);

    std::string config_path;
    std::string output_dir;
    int threads = 0;
    bool force = false;
    std::string ae_id;
    std::string kind = "diffusion";
    std::optional<uint64_t> seed;
    bool plan_only = false;

    app.add_option("--config", config_path, "experiment config JSON (defaults when omitted)");
    app.add_option("--output-dir", output_dir, "override the configured output directory");
    app.add_option("--threads", threads, "cap worker threads (0: hardware default)");
    app.add_flag("--force", force, "redo completed stages");

    auto* gen = app.add_subcommand("generate", "generate the synthetic dataset");
    auto* tae = app.add_subcommand("train-ae", "train one autoencoder");
    tae->add_option("--ae", ae_id, "autoencoder id from the config")->required();
    auto* enc = app.add_subcommand("encode", "populate the latent cache");
    enc->add_option("--ae", ae_id)->required();
    auto* tem = app.add_subcommand("train-emulator", "train a latent emulator");
    tem->add_option("--ae", ae_id)->required();
    tem->add_option("--kind", kind, "diffusion | solver");
    auto* rol = app.add_subcommand("rollout", "autoregressive rollout on the test split");
    rol->add_option("--ae", ae_id)->required();
    rol->add_option("--kind", kind, "diffusion | solver | persistence");
    rol->add_option("--seed", seed, "override the evaluation seed");
    auto* eva = app.add_subcommand("evaluate", "metrics CSV and SVG plots");
    auto* swp = app.add_subcommand("sweep", "full compression-rate x emulator matrix");
    swp->add_flag("--plan-only", plan_only, "print the stage plan and exit");

    CLI11_PARSE(app, argc, argv);

    try {
        latemu::ExperimentConfig cfg = config_path.empty()
                                           ? latemu::config_from_json_text("{}", "<defaults>")
                                           : latemu::load_config(config_path);
        if (!output_dir.empty()) cfg.output_dir = output_dir;
        if (threads > 0) cfg.threads = threads;

        if (gen->parsed()) {
            latemu::cli::run_generate(cfg, force);
        } else if (tae->parsed()) {
            latemu::cli::run_train_ae(cfg, ae_id, force);
        } else if (enc->parsed()) {
            latemu::cli::run_encode(cfg, ae_id, force);
        } else if (tem->parsed()) {
            latemu::cli::run_train_emulator(cfg, ae_id, kind, force);
        } else if (rol->parsed()) {
            latemu::cli::run_rollout(cfg, ae_id, kind, seed, force);
        } else if (eva->parsed()) {
            latemu::cli::run_evaluate(cfg);
        } else if (swp->parsed()) {
            if (plan_only) {
                for (const auto& line : latemu::cli::sweep_plan(cfg)) {
                    std::printf("%s\n", line.c_str());
                }
            } else {
                latemu::cli::run_sweep(cfg, force);
            }
        }
    } catch (const latemu::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const latemu::StageError& e) {
        std::fprintf(stderr, "dependency error: %s\n", e.what());
        return 3;
    } catch (const latemu::NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 4;
    } catch (const latemu::NonFiniteError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
