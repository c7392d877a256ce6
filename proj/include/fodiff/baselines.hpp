// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fodiff/data_store.hpp"
#include "fodiff/evaluation.hpp"
#include "fodiff/restorer.hpp"
#include "fodiff/trainer.hpp"

/// Restores a test split with each model variant and assembles the
/// comparison tables.
namespace fodiff::eval {

struct VariantResult {
  ComparisonRow row;
  std::vector<SeverityRecord> records; ///< integrity before (corrupted) and after (restored) per item
  std::vector<double> integrity_gt;    ///< per item
  std::vector<FodImage> restored;      ///< per item, in test-split order
};

/// Restores every item with `model` and scores it inside the item's mask.
VariantResult evaluate_variant(const std::string& name, const train::Model& model,
                               const std::vector<io::LoadedItem>& test, const restore::RestoreOptions& options,
                               const sh::Tessellation& tess);

/// One row per variant of the ablation ladder, in the order uncond, vol,
/// vol_enc, full. Throws ConfigError naming every missing checkpoint.
std::vector<VariantResult> run_baselines(const std::map<std::string, std::filesystem::path>& checkpoints,
                                         const std::vector<io::LoadedItem>& test,
                                         const restore::RestoreOptions& options, const sh::Tessellation& tess);

} // namespace fodiff::eval
