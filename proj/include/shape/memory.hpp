#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "shape/tensor.hpp"

namespace shape {

enum class StageMode { Settle, Refine, Escape };

std::string mode_name(StageMode m);

// Event-time record handed to the memory write rule.
struct EventSummary {
  Tensor q;
  Tensor p;
  double f = 0.0;
  Tensor g;
  StageMode mode = StageMode::Settle;
};

struct MemoryConfig {
  bool enabled = true;
  int dim = 2;
  double halfwidth = 5.0;
  // weights of the induced potentials
  double w_mem = 0.2;
  double w_bar = 1.0;
};

// Slow event-scale memory. For d <= 2 this is an explicit multigrid of
// occupancy/value statistics (levels 8/16/32 cells per axis); for d > 2 the
// levels hold blockwise summaries over fixed coordinate subsets (one global
// coarse block, then blocks of 4 coordinates). Cells are stored sparsely.
class Memory {
 public:
  Memory() = default;
  explicit Memory(const MemoryConfig& config);

  // Fixed-length readout: per level the containing cell's (normalized
  // occupancy, mean f, mean |g|, best f), averaged over the level's blocks;
  // zeros for unvisited cells. Length = 4 * levels (0 when disabled).
  std::vector<double> read(const Tensor& q) const;
  int readout_length() const;

  // No-op when trigger is false. Otherwise updates the visited cell path on
  // every level: occupancy increment, streaming means, best-f min-update.
  void write(const EventSummary& summary, bool trigger);

  // 1/(1 + finest-level occupancy at the cell containing c).
  double novelty(const Tensor& c) const;

  // Repulsive Gaussian bumps at visited finest-level cell centers
  // (U_mem, always on) and at recorded-minimum cells (V_bar, escape mode
  // only). Returns values and accumulates analytic gradients.
  struct PotentialEval {
    double u_mem = 0.0;
    Tensor u_mem_grad;
    double v_bar = 0.0;
    Tensor v_bar_grad;
  };
  PotentialEval potential(const Tensor& q, StageMode mode) const;

  int64_t finest_occupancy(const Tensor& q) const;
  int64_t total_writes() const { return writes_; }
  const MemoryConfig& config() const { return config_; }

  // occupancy consistency across levels for the cell path containing q
  std::vector<int64_t> occupancy_path(const Tensor& q) const;

  std::string to_string() const;  // debugging snapshot

 private:
  struct Cell {
    int64_t occupancy = 0;
    double mean_f = 0.0;
    double mean_gnorm = 0.0;
    double best_f = 0.0;
    int64_t minimum_hits = 0;
    std::vector<double> center;  // over the owning block's coordinates
  };
  struct Block {
    int coord_begin = 0;
    int coord_count = 0;
    std::map<uint64_t, Cell> cells;
  };
  struct Level {
    int bins_per_coord = 0;
    std::vector<Block> blocks;
  };

  uint64_t cell_key(const Level& lvl, const Block& blk, const Tensor& q, std::vector<double>* center) const;
  double bin_width(const Level& lvl) const { return 2.0 * config_.halfwidth / lvl.bins_per_coord; }

  MemoryConfig config_;
  std::vector<Level> levels_;
  int64_t writes_ = 0;
};

}  // namespace shape
