// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fodiff/baselines.hpp"

/// End-to-end comparison run: trains each variant of the ablation ladder with
/// a shared configuration, restores the test split with each, and writes the
/// comparison tables and severity-group summaries.
namespace fodiff::eval {

struct AblationConfig {
  std::filesystem::path manifest;
  std::filesystem::path out_dir;
  train::TrainConfig train;
  net::NetConfig net;
  restore::RestoreOptions restore;
  std::vector<net::Variant> variants{net::Variant::uncond, net::Variant::vol, net::Variant::vol_enc,
                                     net::Variant::full};
  int severity_groups = 5;
  /// Reuse a variant's finished training when its checkpoint matches.
  bool reuse_trained = true;
  std::function<void(const std::string&)> log;
};

struct AblationResult {
  std::vector<train::FitResult> fits; ///< per variant
  std::vector<VariantResult> variants;
  std::vector<std::vector<SeverityGroup>> groups; ///< per variant
  std::filesystem::path report_path;
};

AblationResult run_ablation(const AblationConfig& config);

/// JSON form of an ablation outcome, as written to report.json.
nlohmann::json ablation_report_json(const AblationResult& result);
/// Human-readable tables (Table-1 and Table-2 layouts plus severity groups)
/// rendered from report.json.
std::string render_report(const nlohmann::json& report);

} // namespace fodiff::eval
