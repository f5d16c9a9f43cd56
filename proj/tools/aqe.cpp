// aqe: command-line front end.
//
// Exit codes: 0 success, 1 unexpected failure, 2 configuration error,
// 3 data error, 4 numerical failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>

#include "aqe/config.hpp"
#include "aqe/dataset.hpp"
#include "aqe/evaluation.hpp"
#include "aqe/features.hpp"
#include "aqe/ingest.hpp"
#include "aqe/mapgen.hpp"
#include "aqe/neuralnet.hpp"
#include "aqe/synth.hpp"
#include "aqe/trainer.hpp"

namespace fs = std::filesystem;
using namespace aqe;

namespace {

struct Options {
  std::string config;
  std::string out = ".";
  unsigned threads = 0;  // 0: take [run] threads from the config
  bool deterministic = false;
};

RunConfig load_run_config(const Options& o) {
  RunConfig cfg = o.config.empty() ? parse_config("") : load_config(o.config);
  if (o.threads > 0) cfg.threads = o.threads;
  if (o.deterministic) cfg.deterministic = true;
  if (cfg.deterministic) cfg.threads = 1;
  cfg.threads = std::max(1u, cfg.threads);
  cfg.train.deterministic = cfg.deterministic;
  cfg.train.threads = cfg.threads;
  return cfg;
}

std::string out_path(const Options& o, const std::string& name) {
  fs::create_directories(o.out);
  return (fs::path(o.out) / name).string();
}

void require_data(const RunConfig& cfg) {
  if (cfg.data.stations.empty() || cfg.data.sensors.empty() || cfg.data.roads.empty() || cfg.data.traffic.empty()) {
    throw ConfigError("[data] must name stations, sensors, roads and traffic");
  }
}

std::unique_ptr<FeatureContext> load_context(const RunConfig& cfg, std::vector<IngestReport>* reports = nullptr,
                                             std::size_t* rejected = nullptr) {
  require_data(cfg);
  auto loaded = load_sources(cfg.data);
  for (const auto& r : loaded.reports) {
    log_info(r.source + ": " + std::to_string(r.accepted) + "/" + std::to_string(r.total_rows) + " rows accepted");
  }
  if (!loaded.rejections.empty()) log_info(std::to_string(loaded.rejections.size()) + " station values rejected as outliers");
  if (reports) *reports = loaded.reports;
  if (rejected) *rejected = loaded.rejections.size();
  return std::make_unique<FeatureContext>(loaded.sources, cfg.features);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct LoadedModel {
  std::string name;
  Model model;
};

std::vector<LoadedModel> load_models(const std::vector<std::string>& paths) {
  if (paths.empty()) throw ConfigError("--models needs at least one model file");
  std::vector<LoadedModel> out;
  for (const auto& p : paths) {
    LoadedModel m{std::string(to_string(load_model(p).config.variant)), load_model(p)};
    for (const auto& other : out) {
      if (other.name == m.name) m.name = fs::path(p).stem().string();
    }
    out.push_back(std::move(m));
  }
  return out;
}

struct EvalInputs {
  std::vector<DataPoint> points;
  std::vector<Target> targets;
  std::vector<NamedPredictions> predictions;  // benchmark first
  Support support;
};

EvalInputs prepare_eval(const FeatureContext& ctx, const std::string& eval_path, const std::vector<LoadedModel>& models,
                        unsigned threads) {
  EvalInputs in;
  in.points = load_dataset(eval_path);
  if (in.points.empty()) throw DataError(eval_path + ": evaluation dataset is empty");
  in.targets = targets_of(in.points);
  in.predictions.push_back({"benchmark", benchmark_predictions(ctx, in.points)});
  for (const auto& m : models) in.predictions.push_back({m.name, model_predictions(m.model, in.points, threads)});
  in.support = shared_support(in.targets, &in.predictions.front().values);
  return in;
}

std::vector<double> point_densities(const FeatureContext& ctx, const std::vector<DataPoint>& points) {
  std::vector<double> d;
  d.reserve(points.size());
  for (const auto& p : points) d.push_back(ctx.sensor_density(p.location));
  return d;
}

// ---------------------------------------------------------------------------

void cmd_gen_synth(const Options& o, std::optional<std::uint64_t> seed) {
  RunConfig cfg = load_run_config(o);
  if (seed) cfg.synth.seed = *seed;
  const auto gw = generate(cfg.synth, o.out);
  log_info("wrote " + std::to_string(gw.station_rows) + " station rows, " + std::to_string(gw.sensor_rows) +
           " sensor rows, " + std::to_string(gw.road_rows) + " road segments, " + std::to_string(gw.traffic_rows) +
           " traffic rows to " + o.out);
  std::string world = "# generated world\n[data]\nstations = stations.csv\nsensors = sensors.csv\nroads = roads.csv\n"
                      "traffic = traffic.csv\n";
  // A region around the most heavily instrumented city.
  const City* big = nullptr;
  for (const auto& c : gw.cities) {
    if (!big || c.weight > big->weight) big = &c;
  }
  if (big) {
    const double dlat = 2.0 * big->spread_km / kKmPerDegree;
    const double dlon = dlat / std::cos(big->center.lat * std::numbers::pi / 180.0);
    world += "\n[region main_city]\nlat_min = " + kv::fmt(big->center.lat - dlat) + "\nlat_max = " +
             kv::fmt(big->center.lat + dlat) + "\nlon_min = " + kv::fmt(big->center.lon - dlon) + "\nlon_max = " +
             kv::fmt(big->center.lon + dlon) + "\n";
  }
  write_text_file(out_path(o, "world.cfg"), world);
}

void cmd_build_dataset(const Options& o, const std::string& variant_name) {
  const RunConfig cfg = load_run_config(o);
  const Variant v = variant_name.empty() ? Variant::station_and_sensor : parse_variant(variant_name);
  std::vector<IngestReport> reports;
  std::size_t rejected = 0;
  const auto ctx = load_context(cfg, &reports, &rejected);
  auto points = build_dataset(*ctx, v, std::nullopt, cfg.threads);
  if (points.empty()) throw DataError("no station measurements to build a dataset from");
  const auto plan = stratified_split(station_densities(*ctx), cfg.split_ratio, cfg.split_seed);
  const auto split = apply_split(std::move(points), plan);
  save_dataset(split.train, v, out_path(o, "train.agds"));
  save_dataset(split.eval, v, out_path(o, "eval.agds"));
  save_split_plan(plan, out_path(o, "split.txt"));
  std::string rep;
  for (const auto& r : reports) {
    rep += r.source + " total=" + std::to_string(r.total_rows) + " accepted=" + std::to_string(r.accepted) +
           " dropped=" + std::to_string(r.dropped) + " na_cells=" + std::to_string(r.na_cells) + "\n";
    for (const auto& i : r.issues) rep += "  " + i + "\n";
  }
  rep += "outlier_rejections=" + std::to_string(rejected) + "\n";
  write_text_file(out_path(o, "ingest_report.txt"), rep);
  log_info("dataset: " + std::to_string(split.train.size()) + " train / " + std::to_string(split.eval.size()) +
           " eval points (" + std::to_string(plan.train_station_ids.size()) + " / " +
           std::to_string(plan.eval_station_ids.size()) + " stations)");
}

void cmd_train(const Options& o, const std::string& variant_name, std::string train_path, std::string eval_path) {
  RunConfig cfg = load_run_config(o);
  if (!variant_name.empty()) cfg.variant = parse_variant(variant_name);
  if (train_path.empty()) train_path = out_path(o, "train.agds");
  if (eval_path.empty()) eval_path = out_path(o, "eval.agds");
  const auto train_points = load_dataset(train_path);
  const auto eval_points = fs::exists(eval_path) ? load_dataset(eval_path) : std::vector<DataPoint>{};
  const std::string name(to_string(cfg.variant));
  if (!cfg.train.checkpoint_path.empty() && fs::path(cfg.train.checkpoint_path).is_relative()) {
    cfg.train.checkpoint_path = out_path(o, cfg.train.checkpoint_path);
  }
  const auto res = train(ModelConfig::for_variant(cfg.variant), train_points, eval_points, cfg.train);
  save_model(res.model, out_path(o, name + ".model"));
  save_norm_stats(res.model.norm, out_path(o, name + ".norm.txt"));
  write_text_file(out_path(o, name + ".train_report.txt"), report_text(res.report));
  for (const auto p : kPollutants) {
    if (const auto& st = res.report.eval[index_of(p)]) {
      log_info(name + " eval " + std::string(to_string(p)) + " msle " + fmt_metric(st->msle) + " mae " +
               fmt_metric(st->mae));
    }
  }
}

void cmd_evaluate(const Options& o, const std::string& models_arg, std::string eval_path) {
  const RunConfig cfg = load_run_config(o);
  if (eval_path.empty()) eval_path = out_path(o, "eval.agds");
  const auto models = load_models(split_list(models_arg));
  const auto ctx = load_context(cfg);
  const auto in = prepare_eval(*ctx, eval_path, models, cfg.threads);
  const auto table = metrics_table(in.predictions, in.targets, in.support);
  write_text_file(out_path(o, "metrics.csv"), metrics_csv(table));
  write_text_file(out_path(o, "metrics.txt"),
                  metrics_text(table, "evaluation stations, pairs with a benchmark value"));
  std::cerr << metrics_text(table);
}

void cmd_eval_density(const Options& o, const std::string& models_arg, std::string eval_path) {
  const RunConfig cfg = load_run_config(o);
  if (eval_path.empty()) eval_path = out_path(o, "eval.agds");
  const auto models = load_models(split_list(models_arg));
  const auto ctx = load_context(cfg);
  const auto in = prepare_eval(*ctx, eval_path, models, cfg.threads);
  const auto rep = density_batches(point_densities(*ctx, in.points), in.predictions, in.targets, in.support);
  write_text_file(out_path(o, "density.csv"), density_csv(rep));
  std::string txt = "median density " + fmt_metric(rep.median_density) + ", " + std::to_string(rep.kept_points) +
                    " points at or above it\n";
  std::vector<double> md;
  for (const auto& b : rep.batches) md.push_back(b.mean_density);
  // Each model over the benchmark, then later --models entries over earlier ones.
  for (std::size_t i = 0; i < in.predictions.size(); ++i) {
    for (std::size_t j = i + 1; j < in.predictions.size(); ++j) {
      const auto imp = batch_improvements(rep, in.predictions[i].name, in.predictions[j].name);
      txt += "improvement of " + in.predictions[j].name + " over " + in.predictions[i].name +
             ": spearman with density " + fmt_metric(spearman(imp, md)) + ", top-bottom " +
             fmt_metric(imp.back() - imp.front()) + "\n";
    }
  }
  write_text_file(out_path(o, "density.txt"), txt);
  std::cerr << txt;
}

void cmd_eval_region(const Options& o, const std::string& models_arg, std::string eval_path,
                     const std::string& region_name) {
  const RunConfig cfg = load_run_config(o);
  if (eval_path.empty()) eval_path = out_path(o, "eval.agds");
  std::vector<RegionSpec> regions;
  if (region_name.empty()) {
    regions = cfg.regions;
    if (regions.empty()) throw ConfigError("no [region NAME] sections in the config");
  } else {
    regions.push_back(cfg.region(region_name));
  }
  const auto models = load_models(split_list(models_arg));
  const auto ctx = load_context(cfg);
  const auto in = prepare_eval(*ctx, eval_path, models, cfg.threads);
  const auto density = point_densities(*ctx, in.points);
  std::size_t written = 0;
  for (const auto& r : regions) {
    const bool all = region_name.empty();
    RegionReport rep;
    try {
      rep = region_metrics(in.points, density, r, in.predictions, in.support);
    } catch (const DataError& e) {
      if (!all) throw;
      log_warn(std::string(e.what()) + ", skipped");
      continue;
    }
    ++written;
    write_text_file(out_path(o, "region_" + r.name + ".csv"), metrics_csv(rep.metrics));
    const std::string title = "region " + r.name + ": " + std::to_string(rep.stations) +
                              " evaluation stations, mean sensor density " + fmt_metric(rep.mean_density);
    write_text_file(out_path(o, "region_" + r.name + ".txt"), metrics_text(rep.metrics, title));
    std::cerr << metrics_text(rep.metrics, title);
  }
  if (written == 0) throw DataError("no configured region contains evaluation points");
}

void cmd_predict_map(const Options& o, const std::string& model_path, const std::string& hour,
                     const std::vector<double>& bbox, std::optional<double> cell) {
  RunConfig cfg = load_run_config(o);
  GridSpec spec = cfg.map;
  if (!hour.empty()) {
    const auto t = parse_timestamp(hour);
    if (!t) throw ConfigError("--hour: bad timestamp " + hour);
    spec.hour = hour_of(*t);
  } else if (!cfg.map_hour_set) {
    throw ConfigError("map hour not given (--hour or [map] hour)");
  }
  if (!bbox.empty()) {
    if (bbox.size() != 4) throw ConfigError("--bbox needs lat_min,lat_max,lon_min,lon_max");
    spec.box = {bbox[0], bbox[1], bbox[2], bbox[3]};
  }
  if (cell) spec.cell_m = *cell;
  const Model model = load_model(model_path);
  const auto ctx = load_context(cfg);
  const auto rasters = render(model, *ctx, spec, cfg.threads);
  const std::string stem = "map_" + std::string(to_string(model.config.variant)) + "_";
  for (const auto p : kPollutants) {
    const auto& r = rasters[index_of(p)];
    const std::string base = stem + std::string(to_string(p));
    write_raster_csv(r, out_path(o, base + ".csv"));
    write_raster_asc(r, out_path(o, base + ".asc"));
    write_raster_pgm(r, out_path(o, base + ".pgm"));
    const auto [m, s] = mean_std(r.values);
    log_info(base + ": " + std::to_string(r.nrows) + "x" + std::to_string(r.ncols) + " cells, mean " + fmt_metric(m) +
             " std " + fmt_metric(s));
  }
}

int cmd_gradcheck(std::uint64_t seed, std::size_t configs) {
  if (configs == 0) throw ConfigError("--configs must be >= 1");
  Rng rng(seed);
  double worst = 0;
  std::size_t checked = 0, skipped = 0;
  for (std::size_t i = 0; i < configs; ++i) {
    const Variant v = kVariants[i % kVariants.size()];
    const auto c = random_small_config(v, rng);
    const auto r = gradient_check(c, rng());
    worst = std::max(worst, r.max_rel_error);
    checked += r.checked;
    skipped += r.skipped_kinks;
  }
  std::printf("max relative error %.3e over %zu configs (%zu coordinates, %zu at kinks skipped)\n", worst, configs,
              checked, skipped);
  if (!(worst < 1e-4)) throw NumericalError("gradient check failed: max relative error " + fmt_metric(worst));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Air-quality prediction engine: PM2.5 / PM10 from stations, low-cost sensors and traffic"};
  app.require_subcommand(1);
  Options o;
  const auto common = [&o](CLI::App* sub, bool needs_out = true) {
    sub->add_option("--config", o.config, "Run configuration file")->check(CLI::ExistingFile);
    if (needs_out) sub->add_option("--out", o.out, "Output directory")->capture_default_str();
    sub->add_option("--threads", o.threads, "Worker threads (0: from config)")->capture_default_str();
    sub->add_flag("--deterministic", o.deterministic, "Force single-threaded numerics");
  };

  std::optional<std::uint64_t> synth_seed;
  auto* gen = app.add_subcommand("gen-synth", "Generate a synthetic world");
  common(gen);
  gen->add_option("--seed", synth_seed, "World seed (overrides [synth] seed)");

  std::string variant, train_path, eval_path, models, region, model_path, hour;
  std::vector<double> bbox;
  std::optional<double> cell;

  auto* build = app.add_subcommand("build-dataset", "Build and split the hourly dataset");
  common(build);
  build->add_option("--variant", variant, "Feature variant (default station_and_sensor)");

  auto* tr = app.add_subcommand("train", "Train one model variant");
  common(tr);
  tr->add_option("--variant", variant, "station | sensor | station_and_sensor (default from config)");
  tr->add_option("--train", train_path, "Training dataset (default OUT/train.agds)");
  tr->add_option("--eval", eval_path, "Evaluation dataset (default OUT/eval.agds)");

  auto* ev = app.add_subcommand("evaluate", "Metrics table for models and the benchmark");
  common(ev);
  ev->add_option("--models", models, "Comma-separated model files")->required();
  ev->add_option("--eval", eval_path, "Evaluation dataset (default OUT/eval.agds)");

  auto* ed = app.add_subcommand("eval-density", "Metrics by sensor-density batch");
  common(ed);
  ed->add_option("--models", models, "Comma-separated model files")->required();
  ed->add_option("--eval", eval_path, "Evaluation dataset (default OUT/eval.agds)");

  auto* er = app.add_subcommand("eval-region", "Metrics inside configured regions");
  common(er);
  er->add_option("--models", models, "Comma-separated model files")->required();
  er->add_option("--eval", eval_path, "Evaluation dataset (default OUT/eval.agds)");
  er->add_option("--region", region, "Region name (default: every configured region)");

  auto* pm = app.add_subcommand("predict-map", "Render concentration rasters");
  common(pm);
  pm->add_option("--model", model_path, "Model file")->required()->check(CLI::ExistingFile);
  pm->add_option("--hour", hour, "Hour, YYYY-MM-DDTHH:MMZ (default [map] hour)");
  pm->add_option("--bbox", bbox, "lat_min,lat_max,lon_min,lon_max (default [map])")->delimiter(',');
  pm->add_option("--cell", cell, "Cell size in meters (default [map] cell_m = 50)");

  std::uint64_t gc_seed = 7;
  std::size_t gc_configs = 20;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the analytic gradients");
  gc->add_option("--seed", gc_seed, "Seed")->capture_default_str();
  gc->add_option("--configs", gc_configs, "Random configurations to check")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) cmd_gen_synth(o, synth_seed);
    else if (build->parsed()) cmd_build_dataset(o, variant);
    else if (tr->parsed()) cmd_train(o, variant, train_path, eval_path);
    else if (ev->parsed()) cmd_evaluate(o, models, eval_path);
    else if (ed->parsed()) cmd_eval_density(o, models, eval_path);
    else if (er->parsed()) cmd_eval_region(o, models, eval_path, region);
    else if (pm->parsed()) cmd_predict_map(o, model_path, hour, bbox, cell);
    else if (gc->parsed()) return cmd_gradcheck(gc_seed, gc_configs);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
