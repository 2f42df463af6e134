#pragma once

#include <string>
#include <vector>

#include "latemu/field.hpp"

namespace latemu {

struct MetricRow {
    std::string emulator;     // autoencoder | diffusion | solver | persistence
    std::string compression;  // rate, as printed in tables
    std::string field;        // channel name or "mean"
    std::string lead;         // frame index or "a:b" horizon label
    double vrmse = 0.0;
    double ps_low = 0.0;
    double ps_mid = 0.0;
    double ps_high = 0.0;
    double skill = 0.0;
    double spread = 0.0;
    double ssr = 0.0;
    bool has_ensemble = false;  // skill/spread/ssr only meaningful with K > 1
    bool has_ssr = false;
};

// Deterministic CSV with the config hash embedded as a leading comment.
void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows,
                       const std::string& config_hash);

std::vector<MetricRow> read_metrics_csv(const std::string& path, std::string* config_hash);

// One line chart per metric: lead time on x, one polyline per
// (emulator, compression) series; only per-frame rows are plotted.
void write_metric_svgs(const std::string& dir, const std::vector<MetricRow>& rows,
                       const std::string& config_hash);

}  // namespace latemu
