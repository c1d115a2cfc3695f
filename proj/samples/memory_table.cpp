// Parameter and memory footprint of a gmLSTM per network against the
// shared subspace optimizer.

#include <cstdio>

#include "rmo/rmo.hpp"

int main() {
  const rmo::MemoryFigures ours = rmo::ours_report();
  for (const rmo::ShapeCatalog& cat : rmo::all_catalogs()) {
    const rmo::MemoryReport r = rmo::catalog_report(cat);
    std::printf("%-9s gmlstm %14llu params %12s MB   ours %s MB (%.0fx smaller)\n", r.model.c_str(),
                static_cast<unsigned long long>(r.gmlstm.params), rmo::format_mb(r.gmlstm.mb).c_str(),
                rmo::format_mb(ours.mb).c_str(), r.gmlstm.mb / ours.mb);
  }
  const rmo::FlopModel f = rmo::adaptation_flop_model(64, 16);
  std::printf("adapt flops at 64x16: subspace %llu, full-matrix %llu\n",
              static_cast<unsigned long long>(f.subspace), static_cast<unsigned long long>(f.full_matrix));
}
