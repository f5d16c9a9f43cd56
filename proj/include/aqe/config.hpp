#pragma once

// Run configuration: INI-style "key = value" lines grouped under [section]
// headers. Every key has a default; unknown sections and keys are errors.
//
//   [data]     stations, sensors, roads, traffic   (relative to the file)
//   [features] density_d_km, context_d_km, sensor_lookback_hours
//   [split]    ratio, seed
//   [train]    variant, epochs, batch_size, lr, shuffle_seed, init_seed, checkpoint
//   [run]      threads, deterministic
//   [synth]    seed, stations, sensors, cities, hours, sensor_noise, humidity_bias
//   [map]      lat_min, lat_max, lon_min, lon_max, cell_m, hour
//   [region NAME]  lat_min, lat_max, lon_min, lon_max

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "aqe/common.hpp"
#include "aqe/evaluation.hpp"
#include "aqe/features.hpp"
#include "aqe/ingest.hpp"
#include "aqe/mapgen.hpp"
#include "aqe/synth.hpp"
#include "aqe/timeutil.hpp"
#include "aqe/trainer.hpp"

namespace aqe {

struct RunConfig {
  SourcePaths data;
  FeatureOptions features;
  double split_ratio = 0.8;
  std::uint64_t split_seed = 1;
  Variant variant = Variant::station_and_sensor;
  TrainConfig train;
  unsigned threads = 1;
  bool deterministic = true;
  WorldSpec synth;
  GridSpec map;
  bool map_hour_set = false;
  std::vector<RegionSpec> regions;

  void validate() const {
    if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ConfigError("split.ratio must be in (0, 1)");
    if (!(features.density_kernel_km > 0) || !(features.context_kernel_km > 0)) {
      throw ConfigError("kernel distances must be positive");
    }
    if (features.sensor_lookback_hours < 1) throw ConfigError("sensor_lookback_hours must be >= 1");
    train.validate();
    synth.validate();
    for (const auto& r : regions) {
      if (!r.box.well_ordered()) throw ConfigError("region " + r.name + ": bounds are not well ordered");
    }
  }

  const RegionSpec& region(const std::string& name) const {
    for (const auto& r : regions) {
      if (r.name == name) return r;
    }
    throw ConfigError("no region named " + name);
  }
};

namespace detail {

inline double cfg_double(const std::string& key, const std::string& v) {
  double out;
  if (!csv::parse_double(v, out)) throw ConfigError(key + ": not a number: " + v);
  return out;
}

inline std::uint64_t cfg_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc{} || r.ptr != v.data() + v.size()) throw ConfigError(key + ": not a non-negative integer: " + v);
  return out;
}

inline bool cfg_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": not a boolean: " + v);
}

}  // namespace detail

/// Parses configuration text. Relative data paths resolve against `base_dir`.
inline RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {}) {
  using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;
  const auto path_of = [base_dir](const std::string& v) {
    std::filesystem::path p(v);
    return (p.is_absolute() || base_dir.empty() ? p : base_dir / p).lexically_normal().string();
  };
  const auto D = [](auto member) {
    return Setter([member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = detail::cfg_double(k, v); });
  };
  const std::map<std::string, std::map<std::string, Setter>> table{
      {"data",
       {{"stations", [&](RunConfig& c, auto&, auto& v) { c.data.stations = path_of(v); }},
        {"sensors", [&](RunConfig& c, auto&, auto& v) { c.data.sensors = path_of(v); }},
        {"roads", [&](RunConfig& c, auto&, auto& v) { c.data.roads = path_of(v); }},
        {"traffic", [&](RunConfig& c, auto&, auto& v) { c.data.traffic = path_of(v); }}}},
      {"features",
       {{"density_d_km", D([](RunConfig& c) -> double& { return c.features.density_kernel_km; })},
        {"context_d_km", D([](RunConfig& c) -> double& { return c.features.context_kernel_km; })},
        {"sensor_lookback_hours",
         [](RunConfig& c, auto& k, auto& v) { c.features.sensor_lookback_hours = static_cast<int>(detail::cfg_uint(k, v)); }}}},
      {"split",
       {{"ratio", D([](RunConfig& c) -> double& { return c.split_ratio; })},
        {"seed", [](RunConfig& c, auto& k, auto& v) { c.split_seed = detail::cfg_uint(k, v); }}}},
      {"train",
       {{"variant",
         [](RunConfig& c, auto&, auto& v) {
           try {
             c.variant = parse_variant(v);
           } catch (const std::exception& e) {
             throw ConfigError(e.what());
           }
         }},
        {"epochs", [](RunConfig& c, auto& k, auto& v) { c.train.epochs = detail::cfg_uint(k, v); }},
        {"batch_size", [](RunConfig& c, auto& k, auto& v) { c.train.batch_size = detail::cfg_uint(k, v); }},
        {"lr", D([](RunConfig& c) -> double& { return c.train.lr; })},
        {"shuffle_seed", [](RunConfig& c, auto& k, auto& v) { c.train.shuffle_seed = detail::cfg_uint(k, v); }},
        {"init_seed", [](RunConfig& c, auto& k, auto& v) { c.train.init_seed = detail::cfg_uint(k, v); }},
        {"checkpoint", [](RunConfig& c, auto&, auto& v) { c.train.checkpoint_path = v; }}}},
      {"run",
       {{"threads", [](RunConfig& c, auto& k, auto& v) { c.threads = static_cast<unsigned>(detail::cfg_uint(k, v)); }},
        {"deterministic", [](RunConfig& c, auto& k, auto& v) { c.deterministic = detail::cfg_bool(k, v); }}}},
      {"synth",
       {{"seed", [](RunConfig& c, auto& k, auto& v) { c.synth.seed = detail::cfg_uint(k, v); }},
        {"stations", [](RunConfig& c, auto& k, auto& v) { c.synth.stations = detail::cfg_uint(k, v); }},
        {"sensors", [](RunConfig& c, auto& k, auto& v) { c.synth.sensors = detail::cfg_uint(k, v); }},
        {"cities", [](RunConfig& c, auto& k, auto& v) { c.synth.cities = detail::cfg_uint(k, v); }},
        {"hours", [](RunConfig& c, auto& k, auto& v) { c.synth.hours = detail::cfg_uint(k, v); }},
        {"sensor_noise", D([](RunConfig& c) -> double& { return c.synth.sensor_noise; })},
        {"humidity_bias", D([](RunConfig& c) -> double& { return c.synth.humidity_bias; })},
        {"lat_min", D([](RunConfig& c) -> double& { return c.synth.box.lat_min; })},
        {"lat_max", D([](RunConfig& c) -> double& { return c.synth.box.lat_max; })},
        {"lon_min", D([](RunConfig& c) -> double& { return c.synth.box.lon_min; })},
        {"lon_max", D([](RunConfig& c) -> double& { return c.synth.box.lon_max; })}}},
      {"map",
       {{"lat_min", D([](RunConfig& c) -> double& { return c.map.box.lat_min; })},
        {"lat_max", D([](RunConfig& c) -> double& { return c.map.box.lat_max; })},
        {"lon_min", D([](RunConfig& c) -> double& { return c.map.box.lon_min; })},
        {"lon_max", D([](RunConfig& c) -> double& { return c.map.box.lon_max; })},
        {"cell_m", D([](RunConfig& c) -> double& { return c.map.cell_m; })},
        {"hour",
         [](RunConfig& c, auto& k, auto& v) {
           const auto t = parse_timestamp(v);
           if (!t) throw ConfigError(k + ": bad timestamp " + v);
           c.map.hour = hour_of(*t);
           c.map_hour_set = true;
         }}}},
  };
  const std::map<std::string, std::function<double&(BoundingBox&)>> region_keys{
      {"lat_min", [](BoundingBox& b) -> double& { return b.lat_min; }},
      {"lat_max", [](BoundingBox& b) -> double& { return b.lat_max; }},
      {"lon_min", [](BoundingBox& b) -> double& { return b.lon_min; }},
      {"lon_max", [](BoundingBox& b) -> double& { return b.lon_max; }},
  };

  RunConfig cfg;
  std::string section;
  RegionSpec* region = nullptr;
  std::size_t line_no = 0;
  std::string line;
  std::istringstream in(text);
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = "config line " + std::to_string(line_no) + ": ";
    auto t = csv::trim(line);
    if (const auto hash = t.find('#'); hash != std::string_view::npos) t = csv::trim(t.substr(0, hash));
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(where + "unterminated section header");
      const std::string name(csv::trim(t.substr(1, t.size() - 2)));
      region = nullptr;
      if (name.rfind("region ", 0) == 0) {
        const std::string rname(csv::trim(std::string_view(name).substr(7)));
        if (rname.empty()) throw ConfigError(where + "region needs a name");
        for (const auto& r : cfg.regions) {
          if (r.name == rname) throw ConfigError(where + "duplicate region " + rname);
        }
        cfg.regions.push_back({rname, {}});
        region = &cfg.regions.back();
        section = "region";
      } else if (table.count(name)) {
        section = name;
      } else {
        throw ConfigError(where + "unknown section [" + name + "]");
      }
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected key = value");
    const std::string key(csv::trim(t.substr(0, eq)));
    const std::string value(csv::trim(t.substr(eq + 1)));
    if (section.empty()) throw ConfigError(where + "key " + key + " outside any section");
    if (region) {
      const auto it = region_keys.find(key);
      if (it == region_keys.end()) throw ConfigError(where + "unknown key " + key + " in [region " + region->name + "]");
      it->second(region->box) = detail::cfg_double(key, value);
      continue;
    }
    const auto& keys = table.at(section);
    const auto it = keys.find(key);
    if (it == keys.end()) throw ConfigError(where + "unknown key " + key + " in [" + section + "]");
    it->second(cfg, section + "." + key, value);
  }
  cfg.validate();
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::filesystem::path(path).parent_path());
}

}  // namespace aqe
