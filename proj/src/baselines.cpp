// SPDX-License-Identifier: Apache-2.0
#include "fodiff/baselines.hpp"

namespace fodiff::eval {

namespace fs = std::filesystem;

VariantResult evaluate_variant(const std::string& name, const train::Model& model,
                               const std::vector<io::LoadedItem>& test, const restore::RestoreOptions& options,
                               const sh::Tessellation& tess)
{
  if (test.empty())
    throw InvalidArgument("evaluate_variant: empty test split");
  VariantResult res;
  res.row.variant = name;
  RmseAccumulator rmse;
  AngularAccumulator angular(tess);
  for (const auto& item : test) {
    FodImage restored = restore::restore_image(item.corrupted, item.mask, model, options);
    rmse.add(item.gt, restored, item.mask);
    angular.add(item.gt, restored, item.mask);
    res.records.push_back(
        {item.meta.id, item.meta.severity, integrity(item.corrupted, item.mask), integrity(restored, item.mask)});
    res.integrity_gt.push_back(integrity(item.gt, item.mask));
    res.restored.push_back(std::move(restored));
  }
  res.row.rmse = rmse.result();
  res.row.angular = angular.report();
  return res;
}

std::vector<VariantResult> run_baselines(const std::map<std::string, fs::path>& checkpoints,
                                         const std::vector<io::LoadedItem>& test,
                                         const restore::RestoreOptions& options, const sh::Tessellation& tess)
{
  const std::vector<std::string> ladder{"uncond", "vol", "vol_enc", "full"};
  std::string missing;
  for (const auto& v : ladder) {
    const auto it = checkpoints.find(v);
    if (it == checkpoints.end() || !fs::exists(it->second))
      missing += (missing.empty() ? "" : ", ") + v +
                 (it == checkpoints.end() ? std::string(" (not given)") : " (" + it->second.string() + ")");
  }
  if (!missing.empty())
    throw ConfigError("run_baselines: missing variant checkpoints: " + missing);
  std::vector<VariantResult> out;
  for (const auto& v : ladder)
    out.push_back(evaluate_variant(v, train::load_model(checkpoints.at(v)), test, options, tess));
  return out;
}

} // namespace fodiff::eval
