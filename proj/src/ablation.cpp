// SPDX-License-Identifier: Apache-2.0
#include "fodiff/ablation.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace fodiff::eval {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// True when `dir` holds a finished run of exactly this configuration.
bool finished_run(const fs::path& dir, const train::TrainConfig& tc, const net::NetConfig& nc, net::Variant v)
{
  const fs::path latest = dir / "latest.ckpt";
  if (!fs::exists(latest) || !fs::exists(dir / "best.ckpt"))
    return false;
  try {
    const io::Checkpoint ck = io::load_checkpoint(latest);
    net::NetConfig expected = nc;
    expected.apply_variant(v);
    return ck.meta.at("train").get<train::TrainConfig>() == tc && ck.meta.at("net").get<net::NetConfig>() == expected &&
           ck.meta.at("state").at("iteration").get<int>() == tc.iterations;
  } catch (const std::exception&) {
    return false;
  }
}

json distribution_json(const Distribution& d)
{
  return {{"mean", d.mean}, {"std", d.std}, {"q1", d.q1}, {"median", d.median}, {"q3", d.q3}};
}

json mean_std_json(const std::optional<MeanStd>& m)
{
  if (!m)
    return nullptr;
  return {{"mean", m->mean}, {"std", m->std}, {"count", m->count}};
}

std::optional<MeanStd> mean_std_from(const json& j)
{
  if (j.is_null())
    return std::nullopt;
  return MeanStd{j.at("mean").get<double>(), j.at("std").get<double>(), j.at("count").get<std::size_t>()};
}

} // namespace

AblationResult run_ablation(const AblationConfig& config)
{
  const auto say = [&](const std::string& s) {
    if (config.log)
      config.log(s);
  };
  std::error_code ec;
  fs::create_directories(config.out_dir, ec);
  if (ec)
    throw IoError("cannot create output directory (" + ec.message() + ")", config.out_dir.string());
  const io::Manifest manifest = io::read_manifest(config.manifest);
  const auto test = io::load_split(manifest, "test");
  if (test.empty())
    throw ConfigError("ablate: the manifest has no test split");
  const sh::Tessellation tess = sh::Tessellation::icosphere(4);

  AblationResult res;
  for (net::Variant v : config.variants) {
    const std::string name = net::variant_name(v);
    const fs::path dir = config.out_dir / name;
    train::FitOptions fo;
    fo.resume = config.reuse_trained && finished_run(dir, config.train, config.net, v);
    const int every = std::max(1, config.train.iterations / 20);
    fo.on_iteration = [&](int it, double loss, double lr) {
      if (it % every == 0)
        say(name + ": iteration " + std::to_string(it) + " loss " + std::to_string(loss) + " lr " +
            std::to_string(lr));
    };
    say(name + (fo.resume ? ": reusing finished training" : ": training"));
    const train::FitResult fit = train::fit(config.train, config.net, v, config.manifest, dir, fo);
    say(name + ": validation " + std::to_string(fit.initial_val) + " -> best " + std::to_string(fit.best_val));
    res.fits.push_back(fit);
    const train::Model model = train::load_model(fit.best_path);
    say(name + ": restoring " + std::to_string(test.size()) + " test images");
    VariantResult vr = evaluate_variant(name, model, test, config.restore, tess);
    for (std::size_t i = 0; i < test.size(); ++i)
      io::write_fod(dir / (test[i].meta.id + "_restored.fodc"), vr.restored[i]);
    res.groups.push_back(severity_grouping(vr.records, config.severity_groups));
    res.variants.push_back(std::move(vr));
  }
  res.report_path = config.out_dir / "report.json";
  const json report = ablation_report_json(res);
  {
    std::ofstream out(res.report_path);
    if (!out)
      throw IoError("cannot write report", res.report_path.string());
    out << report.dump(2) << '\n';
  }
  std::ofstream tables(config.out_dir / "report.txt");
  tables << render_report(report);
  return res;
}

json ablation_report_json(const AblationResult& result)
{
  json variants = json::array();
  for (std::size_t i = 0; i < result.variants.size(); ++i) {
    const VariantResult& vr = result.variants[i];
    json rec = json::array();
    for (std::size_t k = 0; k < vr.records.size(); ++k)
      rec.push_back({{"id", vr.records[k].id},
                     {"severity", vr.records[k].severity},
                     {"integrity_corrupted", vr.records[k].integrity_before},
                     {"integrity_restored", vr.records[k].integrity_after},
                     {"integrity_gt", vr.integrity_gt[k]}});
    json groups = json::array();
    if (i < result.groups.size())
      for (const auto& g : result.groups[i])
        groups.push_back({{"ids", g.ids},
                          {"severity_min", g.severity_min},
                          {"severity_max", g.severity_max},
                          {"corrupted", distribution_json(g.before)},
                          {"restored", distribution_json(g.after)}});
    json v = {{"variant", vr.row.variant},
              {"rmse", {{"per_order", vr.row.rmse.per_order}, {"overall", vr.row.rmse.overall}}},
              {"angular",
               {{"first", mean_std_json(vr.row.angular.first)},
                {"second", mean_std_json(vr.row.angular.second)},
                {"voxels", vr.row.angular.voxels},
                {"first_excluded", vr.row.angular.first_excluded},
                {"second_excluded", vr.row.angular.second_excluded}}},
              {"records", rec},
              {"groups", groups}};
    if (i < result.fits.size())
      v["training"] = {{"initial_val", result.fits[i].initial_val},
                       {"best_val", result.fits[i].best_val},
                       {"best_checkpoint", result.fits[i].best_path.string()}};
    variants.push_back(v);
  }
  return {{"format", "fodiff-ablation-report"}, {"variants", variants}};
}

std::string render_report(const json& report)
{
  if (report.value("format", "") != "fodiff-ablation-report")
    throw FormatError("not an ablation report", 0);
  std::vector<ComparisonRow> rows;
  for (const auto& v : report.at("variants")) {
    ComparisonRow r;
    r.variant = v.at("variant").get<std::string>();
    r.rmse.per_order = v.at("rmse").at("per_order").get<std::array<double, sh::kNumOrders>>();
    r.rmse.overall = v.at("rmse").at("overall").get<double>();
    const auto& a = v.at("angular");
    r.angular.first = mean_std_from(a.at("first"));
    r.angular.second = mean_std_from(a.at("second"));
    r.angular.voxels = a.at("voxels").get<std::size_t>();
    r.angular.first_excluded = a.at("first_excluded").get<std::size_t>();
    r.angular.second_excluded = a.at("second_excluded").get<std::size_t>();
    rows.push_back(r);
  }
  std::ostringstream os;
  os << "# RMSE of FOD coefficients inside distortion masks (test split)\n" << rmse_table(rows) << "\n";
  os << "# Angular differences of the two largest ground-truth peaks (degrees)\n" << angular_table(rows) << "\n";
  os << "# L=0 integrity by severity group (mean corrupted -> mean restored)\n";
  os << "variant\tgroup\tseverity_range\tn\tcorrupted_mean\trestored_mean\trestored_q1\trestored_q3\n";
  os << std::fixed << std::setprecision(4);
  for (const auto& v : report.at("variants")) {
    int gi = 0;
    for (const auto& g : v.at("groups")) {
      os << v.at("variant").get<std::string>() << '\t' << ++gi << '\t' << g.at("severity_min").get<double>() << '-'
         << g.at("severity_max").get<double>() << '\t' << g.at("ids").size() << '\t'
         << g.at("corrupted").at("mean").get<double>() << '\t' << g.at("restored").at("mean").get<double>() << '\t'
         << g.at("restored").at("q1").get<double>() << '\t' << g.at("restored").at("q3").get<double>() << '\n';
    }
  }
  return os.str();
}

} // namespace fodiff::eval
