#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "rmo/error.hpp"
#include "rmo/recurrent_net.hpp"

namespace rmo {

/// Parameter count of one gmLSTM serving a d x p matrix: 34 d^2 + 1024 (d p + 1).
inline std::uint64_t gmlstm_param_count(std::uint64_t d, std::uint64_t p) {
  if (d < 1 || p < 1) throw DimensionError("gmlstm_param_count needs d, p >= 1");
  return 34 * d * d + 1024 * (d * p + 1);
}

struct ShapeCatalog {
  std::string model;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> shapes;
};

inline ShapeCatalog vgg16_catalog() {
  return {"vgg16",
          {{576, 64}, {576, 128}, {1152, 128}, {1152, 256}, {2304, 256}, {2304, 512}, {4608, 512}}};
}

inline ShapeCatalog resnet18_catalog() {
  return {"resnet18",
          {{147, 64},
           {576, 64},
           {576, 128},
           {1152, 128},
           {1152, 256},
           {2304, 256},
           {2304, 512},
           {4608, 512}}};
}

inline ShapeCatalog resnet50_catalog() {
  return {"resnet50",
          {{576, 64},
           {256, 64},
           {256, 128},
           {1152, 128},
           {512, 128},
           {512, 256},
           {2304, 256},
           {1024, 256},
           {1024, 512},
           {4608, 512},
           {2048, 512}}};
}

inline std::vector<ShapeCatalog> all_catalogs() {
  return {vgg16_catalog(), resnet18_catalog(), resnet50_catalog()};
}

/// Catalog by name; throws ConfigError for unknown names.
inline ShapeCatalog catalog_by_name(const std::string& name) {
  for (ShapeCatalog& c : all_catalogs())
    if (c.model == name) return c;
  throw ConfigError("unknown model '" + name + "' (expected vgg16, resnet18 or resnet50)");
}

/// Storage at 4 bytes per parameter. MB is mebibytes.
struct MemoryFigures {
  std::uint64_t params = 0;
  std::uint64_t bytes = 0;
  double mb = 0.0;
  double kb = 0.0;

  static MemoryFigures from_params(std::uint64_t params) {
    MemoryFigures f;
    f.params = params;
    f.bytes = 4 * params;
    f.mb = static_cast<double>(f.bytes) / 1048576.0;
    f.kb = static_cast<double>(f.bytes) / 1024.0;
    return f;
  }
};

struct MemoryReport {
  std::string model;
  MemoryFigures gmlstm;
  MemoryFigures ours;
};

inline MemoryFigures ours_report(std::size_t hidden = 20, std::size_t num_layers = 2) {
  return MemoryFigures::from_params(count_parameters(hidden, num_layers));
}

inline MemoryReport catalog_report(const ShapeCatalog& catalog) {
  if (catalog.shapes.empty()) throw ConfigError("catalog_report: empty catalog");
  std::uint64_t total = 0;
  for (const auto& [d, p] : catalog.shapes) total += gmlstm_param_count(d, p);
  return {catalog.model, MemoryFigures::from_params(total), ours_report()};
}

struct FlopModel {
  std::uint64_t subspace = 0;
  std::uint64_t full_matrix = 0;
};

/// Per-step adaptation cost: 16d + 16p for the subspace optimizer against
/// 16 p^2 d + p d^2 + 18 p d for full-matrix adaptation.
inline FlopModel adaptation_flop_model(std::uint64_t d, std::uint64_t p) {
  if (d < 1 || p < 1) throw DimensionError("adaptation_flop_model needs d, p >= 1");
  return {16 * d + 16 * p, 16 * p * p * d + p * d * d + 18 * p * d};
}

/// `%.5g` rendering used for the mb column.
inline std::string format_mb(double mb) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.5g", mb);
  return buf;
}

/// CSV with header model,method,params,bytes,mb. One gmlstm row per catalog
/// followed by a single row for the subspace optimizer.
inline std::string memory_report_csv(const std::vector<ShapeCatalog>& catalogs) {
  std::string out = "model,method,params,bytes,mb\n";
  for (const ShapeCatalog& c : catalogs) {
    const MemoryReport r = catalog_report(c);
    out += r.model + ",gmlstm," + std::to_string(r.gmlstm.params) + "," +
           std::to_string(r.gmlstm.bytes) + "," + format_mb(r.gmlstm.mb) + "\n";
  }
  const MemoryFigures ours = ours_report();
  out += "any,subspace," + std::to_string(ours.params) + "," + std::to_string(ours.bytes) + "," +
         format_mb(ours.mb) + "\n";
  return out;
}

}  // namespace rmo
