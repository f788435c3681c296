// Command-line front end: synth / train / downscale / evaluate / explain /
// delta / render. Every run is reproducible from (run-config, seed, inputs);
// outputs are containers, PGM images, and line-delimited text tables.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "downscale/downscale.hpp"

namespace fs = std::filesystem;
using namespace dsc;

namespace {

// Files created by the current command; removed again if the command fails so
// no partial outputs survive.
std::vector<std::string> g_created;

std::string out_path(const RunConfig& cfg, const std::string& name) {
  fs::path dir = cfg.get("out_dir", ".");
  fs::create_directories(dir);
  std::string p = (dir / name).string();
  g_created.push_back(p);
  return p;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw input_error("cannot open for writing: " + path);
  out << text;
}

void write_manifest(const RunConfig& cfg, const std::string& command) {
  std::ostringstream os;
  os << "version " << kSoftwareVersion << "\n"
     << "command " << command << "\n"
     << "seed " << cfg.get_seed() << "\n"
     << "config_hash " << std::hex << fnv1a64(cfg.raw) << std::dec << "\n";
  write_text(out_path(cfg, "manifest.txt"), os.str());
}

GridGeometry geometry_from_config(const RunConfig& cfg,
                                  const std::string& prefix) {
  return GridGeometry::regular(
      cfg.get_double(prefix + ".lat0", 0.0), cfg.get_double(prefix + ".dlat", 1.0),
      std::size_t(cfg.get_int(prefix + ".nlat", 0)),
      cfg.get_double(prefix + ".lon0", 0.0), cfg.get_double(prefix + ".dlon", 1.0),
      std::size_t(cfg.get_int(prefix + ".nlon", 0)));
}

std::vector<ChannelSpec> channels_from_config(const RunConfig& cfg,
                                              const std::string& key) {
  std::vector<ChannelSpec> out;
  std::istringstream is(cfg.require(key));
  std::string tok;
  while (std::getline(is, tok, ',')) {
    auto at = tok.find('@');
    if (at == std::string::npos)
      throw input_error("channel spec must be name@level: " + tok);
    out.push_back({tok.substr(0, at), std::stoi(tok.substr(at + 1))});
  }
  return out;
}

// mask = all | block:r0,r1,c0,c1 (half-open row/col ranges)
LandMask mask_from_config(const RunConfig& cfg, const std::string& key,
                          std::size_t rows, std::size_t cols) {
  const std::string spec = cfg.get(key, "all");
  if (spec == "all") return LandMask::all(rows, cols);
  if (spec.rfind("block:", 0) == 0) {
    std::istringstream is(spec.substr(6));
    std::size_t r0, r1, c0, c1;
    char comma;
    is >> r0 >> comma >> r1 >> comma >> c0 >> comma >> c1;
    if (!is || r1 > rows || c1 > cols || r0 >= r1 || c0 >= c1)
      throw input_error("bad mask block spec: " + spec);
    std::vector<std::uint8_t> m(rows * cols, 0);
    for (std::size_t r = r0; r < r1; ++r)
      for (std::size_t c = c0; c < c1; ++c) m[r * cols + c] = 1;
    return LandMask(rows, cols, std::move(m));
  }
  throw input_error("unknown mask spec: " + spec);
}

void put_series(Container& c, const TargetField& series,
                const GridGeometry& geometry, const LandMask& mask) {
  containerio::put_target_field(c, "series", series);
  containerio::put_geometry(c, "series.geometry", geometry);
  containerio::put_mask(c, "series.mask", mask);
}

struct SeriesFile {
  TargetField series;
  GridGeometry geometry;
  LandMask mask;
};

SeriesFile load_series(const std::string& path) {
  Container c = read_container(path);
  SeriesFile out;
  out.series = containerio::get_target_field(c, "series");
  out.geometry = containerio::get_geometry(c, "series.geometry");
  out.mask = containerio::get_mask(c, "series.mask");
  return out;
}

GriddedField load_predictors(const std::string& path) {
  Container c = read_container(path);
  return containerio::get_gridded_field(c, "predictors");
}

// ---- subcommands ----------------------------------------------------------

void cmd_synth(const RunConfig& cfg) {
  SyntheticSpec spec;
  spec.seed = cfg.get_seed();
  spec.predictor_geometry = geometry_from_config(cfg, "synth.predictor");
  spec.channels = channels_from_config(cfg, "synth.channels");
  spec.causal_channel = std::size_t(cfg.get_int("synth.causal_channel", 0));
  spec.predictand_geometry =
      cfg.has("synth.predictand.nlat")
          ? geometry_from_config(cfg, "synth.predictand")
          : spec.predictor_geometry;
  spec.mask = mask_from_config(cfg, "synth.mask",
                               spec.predictand_geometry.rows(),
                               spec.predictand_geometry.cols());
  spec.radius_km = cfg.get_double("synth.radius_km", 250.0);
  spec.noise_std = cfg.get_double("synth.noise_std", 0.0);
  spec.start = Date::parse(cfg.get("synth.start", "2000-01-01"));
  spec.days = std::size_t(cfg.get_int("synth.days", 0));
  spec.future_days = std::size_t(cfg.get_int("synth.future_days", 0));
  for (int m = 1; m <= 12; ++m)
    spec.monthly_shift[std::size_t(m - 1)] =
        cfg.get_double("synth.shift.m" + std::to_string(m), 0.0);

  SynthResult result = synth_generate(spec);

  Container pc;
  containerio::put_gridded_field(pc, "predictors", result.predictors);
  write_container(out_path(cfg, "predictors.dsc"), pc);

  Container tc;
  put_series(tc, result.predictand, spec.predictand_geometry, spec.mask);
  write_container(out_path(cfg, "predictand.dsc"), tc);

  Container truth;
  containerio::put_truth(truth, "truth", result.truth);
  write_container(out_path(cfg, "truth.dsc"), truth);

  if (result.gcm_predictors) {
    Container gc;
    containerio::put_gridded_field(gc, "predictors", *result.gcm_predictors);
    write_container(out_path(cfg, "gcm_predictors.dsc"), gc);
    Container gr;
    put_series(gr, *result.gcm_reference, spec.predictand_geometry, spec.mask);
    write_container(out_path(cfg, "gcm_reference.dsc"), gr);
  }
  write_manifest(cfg, "synth");
}

ArchitectureConfig arch_from_config(const RunConfig& cfg,
                                    const GriddedField& predictors,
                                    const LandMask& mask) {
  ArchitectureConfig arch;
  arch.architecture = parse_architecture(cfg.require("arch.name"));
  arch.in_channels = predictors.nchan();
  arch.in_h = predictors.geometry.rows();
  arch.in_w = predictors.geometry.cols();
  arch.mask = mask;
  arch.width_scale = cfg.get_double("arch.scale", 1.0);
  arch.upsample_factor = std::size_t(cfg.get_int("arch.upsample", 1));
  return arch;
}

void cmd_train(const RunConfig& cfg) {
  GriddedField predictors = load_predictors(cfg.require("train.predictors"));
  SeriesFile predictand = load_series(cfg.require("train.predictand"));

  const DateRange fit_period =
      cfg.has("train.standardize_period")
          ? DateRange::parse(cfg.require("train.standardize_period"))
          : DateRange{predictors.times.front(), predictors.times.back()};
  Standardizer standardizer = fit_standardizer(predictors, fit_period);
  GriddedField standardized = apply_standardizer(predictors, standardizer);

  ArchitectureConfig arch = arch_from_config(cfg, predictors, predictand.mask);
  ModelGraph<float> model = build_model<float>(arch);

  TrainConfig tc;
  tc.learning_rate = cfg.get_double("train.lr", 1e-4);
  tc.batch_size = std::size_t(cfg.get_int("train.batch", 100));
  tc.max_epochs = std::size_t(cfg.get_int("train.max_epochs", 100));
  tc.patience = std::size_t(cfg.get_int("train.patience", 30));
  tc.val_fraction = cfg.get_double("train.val_fraction", 0.10);
  tc.seed = cfg.get_seed();

  TrainResult result = train(model, standardized, predictand.series, tc);

  Container ckpt;
  containerio::put_checkpoint(ckpt, model);
  containerio::put_standardizer(ckpt, "std", standardizer);
  containerio::put_geometry(ckpt, "predictand.geometry", predictand.geometry);
  containerio::put_mask(ckpt, "predictand.mask", predictand.mask);
  ckpt.set_meta("arch.name", architecture_name(arch.architecture));
  ckpt.set_meta("arch.scale", std::to_string(arch.width_scale));
  ckpt.set_meta("arch.upsample", std::to_string(arch.upsample_factor));
  write_container(out_path(cfg, "checkpoint.dsc"), ckpt);

  write_text(out_path(cfg, "train_log.txt"), result.log_table());
  write_manifest(cfg, "train");
}

struct LoadedModel {
  ModelGraph<float> model{Shape{}};
  Standardizer standardizer;
  GridGeometry predictand_geometry;
  LandMask mask;
};

LoadedModel load_model(const std::string& checkpoint_path) {
  Container ckpt = read_container(checkpoint_path);
  LoadedModel lm;
  lm.standardizer = containerio::get_standardizer(ckpt, "std");
  lm.predictand_geometry =
      containerio::get_geometry(ckpt, "predictand.geometry");
  lm.mask = containerio::get_mask(ckpt, "predictand.mask");
  ArchitectureConfig arch;
  arch.architecture = parse_architecture(ckpt.require_meta("arch.name"));
  arch.in_channels = lm.standardizer.channels.size();
  arch.in_h = lm.standardizer.geometry.rows();
  arch.in_w = lm.standardizer.geometry.cols();
  arch.mask = lm.mask;
  arch.width_scale = std::stod(ckpt.require_meta("arch.scale"));
  arch.upsample_factor = std::stoul(ckpt.require_meta("arch.upsample"));
  lm.model = build_model<float>(arch);
  containerio::load_checkpoint(ckpt, lm.model);
  return lm;
}

void cmd_downscale(const RunConfig& cfg) {
  LoadedModel lm = load_model(cfg.require("downscale.checkpoint"));
  GriddedField predictors = load_predictors(cfg.require("downscale.predictors"));

  // Consistency check: refuse standardization parameters fitted on a
  // different geometry.
  if (predictors.geometry != lm.standardizer.geometry)
    throw input_error(
        "downscale: standardizer was fitted on a different geometry");

  if (cfg.get_int("downscale.adjust", 0)) {
    GriddedField obs =
        load_predictors(cfg.require("downscale.adjust.obs_predictors"));
    const DateRange obs_period =
        DateRange::parse(cfg.require("downscale.adjust.obs_period"));
    const DateRange hist_period =
        DateRange::parse(cfg.require("downscale.adjust.hist_period"));
    MonthlyMoments gcm_moments = fit_monthly_moments(predictors, hist_period);
    MonthlyMoments obs_moments = fit_monthly_moments(obs, obs_period);
    predictors = adjust_gcm_monthly(predictors, gcm_moments, obs_moments);
  }

  GriddedField standardized = apply_standardizer(predictors, lm.standardizer);
  TargetField predictions = predict(lm.model, standardized);

  Container out;
  put_series(out, predictions, lm.predictand_geometry, lm.mask);
  write_container(out_path(cfg, "predictions.dsc"), out);
  write_manifest(cfg, "downscale");
}

void cmd_evaluate(const RunConfig& cfg) {
  SeriesFile pred = load_series(cfg.require("evaluate.predictions"));
  SeriesFile obs = load_series(cfg.require("evaluate.observations"));

  const auto bias_p02 = bias_map(pred.series, obs.series, ValidationIndex::P02);
  const auto bias_mean =
      bias_map(pred.series, obs.series, ValidationIndex::Mean);
  const auto bias_p98 = bias_map(pred.series, obs.series, ValidationIndex::P98);
  const auto rmse = rmse_map(pred.series, obs.series);

  Container out;
  containerio::put_geometry(out, "maps.geometry", pred.geometry);
  containerio::put_mask(out, "maps.mask", pred.mask);
  auto add = [&](const char* name, const std::vector<double>& m) {
    out.add_f64(name, {m.size()}, m);
  };
  add("bias_p02", bias_p02);
  add("bias_mean", bias_mean);
  add("bias_p98", bias_p98);
  add("rmse", rmse);
  write_container(out_path(cfg, "evaluate_maps.dsc"), out);

  std::ostringstream summary;
  summary.precision(10);
  summary << "index\tspatial_mean_abs\n"
          << "P02\t" << spatial_mean_abs(bias_p02) << "\n"
          << "mean\t" << spatial_mean_abs(bias_mean) << "\n"
          << "P98\t" << spatial_mean_abs(bias_p98) << "\n"
          << "RMSE\t" << spatial_mean_abs(rmse) << "\n";
  write_text(out_path(cfg, "summary.txt"), summary.str());
  write_manifest(cfg, "evaluate");
}

void cmd_explain(const RunConfig& cfg) {
  LoadedModel lm = load_model(cfg.require("explain.checkpoint"));
  GriddedField predictors = load_predictors(cfg.require("explain.predictors"));
  if (predictors.geometry != lm.standardizer.geometry)
    throw input_error("explain: standardizer was fitted on a different geometry");
  GriddedField standardized = apply_standardizer(predictors, lm.standardizer);

  std::vector<std::size_t> day_idx;
  if (cfg.has("explain.period")) {
    const DateRange period = DateRange::parse(cfg.require("explain.period"));
    for (std::size_t t = 0; t < standardized.ntime(); ++t)
      if (period.contains(standardized.times[t])) day_idx.push_back(t);
  } else {
    for (std::size_t t = 0; t < standardized.ntime(); ++t) day_idx.push_back(t);
  }
  if (day_idx.empty()) throw input_error("explain: period selects no days");

  const std::size_t steps = std::size_t(cfg.get_int("explain.steps", 50));
  const PeriodAggregation agg = cfg.get("explain.aggregate", "mean") == "sum"
                                    ? PeriodAggregation::Sum
                                    : PeriodAggregation::Mean;
  std::optional<std::size_t> channel;
  if (cfg.get("explain.channel", "0") != "all")
    channel = std::size_t(cfg.get_int("explain.channel", 0));
  const bool sdm_normalize = cfg.get_int("explain.sdm_normalize", 0) != 0;

  const Shape& in_shape = lm.model.input_shape;
  const std::size_t feat = shape_numel(in_shape);
  Tensor<float> baseline(in_shape);  // all-zeros standardized field

  std::vector<SaliencyCube> cubes;
  std::size_t zero_flagged = 0;
  for (std::size_t t : day_idx) {
    Tensor<float> x(in_shape);
    for (std::size_t i = 0; i < feat; ++i)
      x[i] = float(standardized.data[t * feat + i]);
    Tensor<double> raw = attribute_day(lm.model, x, baseline, steps);
    cubes.push_back(normalize_threshold(raw, standardized.times[t],
                                        lm.model.arch, "zeros", steps));
    zero_flagged += cubes.back().zero_locations.size();
  }

  Tensor<double> asm_field = accumulate_asm(cubes, agg);
  std::vector<double> sdm =
      compute_sdm(cubes, standardized.geometry,
                  mask_latlons(lm.predictand_geometry, lm.mask), channel, agg,
                  sdm_normalize);

  Container out;
  containerio::put_geometry(out, "asm.geometry", standardized.geometry);
  containerio::put_channels(out, "asm.channels", standardized.channels);
  out.add_f64("asm", asm_field.shape, asm_field.v);
  containerio::put_geometry(out, "sdm.geometry", lm.predictand_geometry);
  containerio::put_mask(out, "sdm.mask", lm.mask);
  out.add_f64("sdm", {sdm.size()}, sdm);
  out.set_meta("xai.steps", std::to_string(steps));
  out.set_meta("xai.zero_locations_flagged", std::to_string(zero_flagged));
  if (cfg.get_int("explain.save_cubes", 0)) {
    const Shape& cs = cubes.front().values.shape;
    Tensor<double> all({cubes.size(), cs[0], cs[1], cs[2], cs[3]});
    for (std::size_t d = 0; d < cubes.size(); ++d)
      std::copy_n(cubes[d].values.data(), cubes[d].values.numel(),
                  all.data() + d * cubes[d].values.numel());
    out.add_f64("cubes", all.shape, all.v);
  }
  write_container(out_path(cfg, "xai.dsc"), out);
  write_manifest(cfg, "explain");
}

RegionSet regions_from_config(const RunConfig& cfg) {
  RegionSet rs;
  for (const auto& [key, value] : cfg.values) {
    if (key.rfind("region.", 0) != 0) continue;
    Region r;
    r.name = key.substr(7);
    std::istringstream is(value);
    std::string vertex;
    while (std::getline(is, vertex, ';')) {
      std::istringstream vs(vertex);
      double lon, lat;
      char comma;
      vs >> lon >> comma >> lat;
      if (!vs) throw input_error("bad region vertex in " + key + ": " + vertex);
      r.polygon.emplace_back(lon, lat);
    }
    if (r.polygon.size() < 3)
      throw input_error("region " + r.name + " needs at least 3 vertices");
    rs.regions.push_back(std::move(r));
  }
  if (rs.regions.empty()) throw input_error("delta: no region.* keys in config");
  return rs;
}

void cmd_delta(const RunConfig& cfg) {
  SeriesFile model = load_series(cfg.require("delta.model_series"));
  SeriesFile gcm = load_series(cfg.require("delta.gcm_series"));
  const DateRange hist = DateRange::parse(cfg.require("delta.hist_period"));

  std::vector<DeltaPeriodSpec> periods;
  {
    std::istringstream is(cfg.require("delta.future_periods"));
    std::string tok;
    while (std::getline(is, tok, ';'))
      periods.push_back({tok, DateRange::parse(tok)});
  }
  std::vector<ValidationIndex> indices;
  {
    std::istringstream is(cfg.get("delta.indices", "mean,p02,p98"));
    std::string tok;
    while (std::getline(is, tok, ',')) indices.push_back(parse_index(tok));
  }
  std::vector<MonthFilter> filters;
  {
    std::istringstream is(cfg.get("delta.months", "annual"));
    std::string tok;
    while (std::getline(is, tok, ',')) filters.push_back(MonthFilter::parse(tok));
  }
  RegionSet regions = regions_from_config(cfg);

  DeltaReport report = pseudo_reality_report(
      model.series, gcm.series, hist, periods, indices, filters, regions,
      mask_latlons(model.geometry, model.mask),
      cfg.get_double("delta.threshold_degc", 2.0));
  write_text(out_path(cfg, "delta_report.txt"), report.to_tsv());
  write_manifest(cfg, "delta");
}

void cmd_render(const std::string& container_path, const std::string& array,
                const std::string& output, long index) {
  Container c = read_container(container_path);
  const ContainerArray& a = c.require_array(array);
  Tensor<double> values;
  if (a.shape.size() == 2 && index < 0) {
    values.shape = a.shape;
  } else if (a.shape.size() == 3 && index >= 0) {
    if (std::size_t(index) >= a.shape[0])
      throw input_error("render: index out of range");
    values.shape = {a.shape[1], a.shape[2]};
  } else {
    throw input_error(
        "render: array must be 2-D, or 3-D with --index selecting a slice");
  }
  const std::size_t n = shape_numel(values.shape);
  const std::size_t off = index >= 0 ? std::size_t(index) * n : 0;
  values.v.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    values.v[i] = a.dtype == 'f' ? double(a.f[off + i]) : a.d[off + i];

  g_created.push_back(output);
  if (c.find_meta(array + ".geometry.lats")) {
    render_heatmap(output, values,
                   containerio::get_geometry(c, array + ".geometry"));
  } else {
    write_pgm(output, values);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"perfect-prognosis CNN downscaling toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string render_container, render_array, render_output;
  long render_index = -1;

  auto add_cfg = [&](CLI::App* sub) {
    sub->add_option("config", config_path, "run-config file (key=value)")
        ->required();
  };
  CLI::App* synth = app.add_subcommand("synth", "generate synthetic dataset");
  CLI::App* train_cmd = app.add_subcommand("train", "fit and checkpoint a model");
  CLI::App* down = app.add_subcommand("downscale", "apply a checkpoint");
  CLI::App* eval = app.add_subcommand("evaluate", "bias/RMSE maps and summaries");
  CLI::App* explain = app.add_subcommand("explain", "saliency, ASM and SDM");
  CLI::App* delta = app.add_subcommand("delta", "pseudo-reality delta report");
  for (CLI::App* sub : {synth, train_cmd, down, eval, explain, delta})
    add_cfg(sub);

  CLI::App* render = app.add_subcommand("render", "render an array to PGM");
  render->add_option("container", render_container)->required();
  render->add_option("array", render_array)->required();
  render->add_option("output", render_output)->required();
  render->add_option("--index", render_index, "slice index for 3-D arrays");

  CLI11_PARSE(app, argc, argv);

  auto fail = [](const char* category, const std::exception& e, int code) {
    for (const std::string& p : g_created) {
      std::error_code ec;
      fs::remove(p, ec);
    }
    std::cerr << "error: " << category << ": " << e.what() << "\n";
    return code;
  };

  try {
    if (render->parsed()) {
      cmd_render(render_container, render_array, render_output, render_index);
      return 0;
    }
    RunConfig cfg = RunConfig::load(config_path);
    if (synth->parsed()) cmd_synth(cfg);
    else if (train_cmd->parsed()) cmd_train(cfg);
    else if (down->parsed()) cmd_downscale(cfg);
    else if (eval->parsed()) cmd_evaluate(cfg);
    else if (explain->parsed()) cmd_explain(cfg);
    else if (delta->parsed()) cmd_delta(cfg);
    return 0;
  } catch (const format_error& e) {
    return fail("format", e, 2);
  } catch (const numeric_error& e) {
    return fail("numeric", e, 3);
  } catch (const input_error& e) {
    return fail("input", e, 1);
  } catch (const std::exception& e) {
    return fail("input", e, 1);
  }
}
