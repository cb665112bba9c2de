#pragma once

// Pareto archive over the objective space (both coordinates minimized)
// and the near-optimal filter around its front.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "objrace/objectives.hpp"
#include "objrace/planner.hpp"

namespace objrace {

/// Equal-weight scalarization used as the CMA-ES fitness.
inline double scalarize(const ObjectivePoint& o) { return o.agg + o.res; }

/// Orders by scalarized value, ties by agg.
inline bool scalar_less(const ObjectivePoint& a, const ObjectivePoint& b) {
  const double sa = scalarize(a), sb = scalarize(b);
  if (sa != sb) return sa < sb;
  return a.agg < b.agg;
}

inline bool dominates(const ObjectivePoint& a, const ObjectivePoint& b) {
  return a.agg <= b.agg && a.res <= b.res && (a.agg < b.agg || a.res < b.res);
}

struct ArchiveEntry {
  AgentParams params;
  ObjectivePoint obj;
  int generation = 0;
  int genome_id = 0;
};

class ParetoArchive {
 public:
  /// Logs the candidate and inserts it into the front unless an incumbent
  /// dominates it. Returns whether it entered the front.
  bool insert(const ArchiveEntry& e) {
    if (!std::isfinite(e.obj.agg) || !std::isfinite(e.obj.res)) {
      throw std::invalid_argument("pareto: non-finite objectives");
    }
    explored_.push_back(e);
    for (const auto& f : front_) {
      if (dominates(f.obj, e.obj)) return false;
    }
    std::erase_if(front_, [&](const ArchiveEntry& f) { return dominates(e.obj, f.obj); });
    front_.push_back(e);
    return true;
  }

  const std::vector<ArchiveEntry>& entries() const { return front_; }
  const std::vector<ArchiveEntry>& all_explored() const { return explored_; }

 private:
  std::vector<ArchiveEntry> front_;
  std::vector<ArchiveEntry> explored_;
};

/// Explored points within d_near of some front entry, in exploration order.
inline std::vector<ArchiveEntry> near_optimal_set(const ParetoArchive& archive, double d_near) {
  if (archive.entries().empty()) throw std::invalid_argument("near_optimal_set: empty front");
  if (!(d_near >= 0.0)) throw std::invalid_argument("near_optimal_set: d_near must be >= 0");
  std::vector<ArchiveEntry> out;
  for (const auto& e : archive.all_explored()) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& f : archive.entries()) best = std::min(best, distance(e.obj, f.obj));
    if (best <= d_near) out.push_back(e);
  }
  return out;
}

}  // namespace objrace
