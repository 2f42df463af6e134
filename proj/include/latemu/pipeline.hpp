#pragma once

#include <optional>
#include <string>
#include <vector>

#include "latemu/config.hpp"

namespace latemu {

// A required earlier stage has not produced its outputs (exit code 3).
struct StageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training diverged or produced non-finite values (exit code 4).
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace cli {

void run_generate(const ExperimentConfig& cfg, bool force);
void run_train_ae(const ExperimentConfig& cfg, const std::string& ae_id, bool force);
void run_encode(const ExperimentConfig& cfg, const std::string& ae_id, bool force);
void run_train_emulator(const ExperimentConfig& cfg, const std::string& ae_id,
                        const std::string& kind, bool force);
void run_rollout(const ExperimentConfig& cfg, const std::string& ae_id, const std::string& kind,
                 std::optional<uint64_t> seed_override, bool force);
void run_evaluate(const ExperimentConfig& cfg);

// Ordered stage list the sweep would execute (one line per stage).
std::vector<std::string> sweep_plan(const ExperimentConfig& cfg);
void run_sweep(const ExperimentConfig& cfg, bool force);

// Artifact paths shared with the tests.
std::string ae_checkpoint_path(const ExperimentConfig& cfg, const std::string& ae_id);
std::string ae_meta_path(const ExperimentConfig& cfg, const std::string& ae_id);
std::string emulator_checkpoint_path(const ExperimentConfig& cfg, const std::string& ae_id,
                                     const std::string& kind);
std::string rollout_dir(const ExperimentConfig& cfg, const std::string& ae_id,
                        const std::string& kind);
std::string metrics_csv_path(const ExperimentConfig& cfg);

}  // namespace cli

}  // namespace latemu
