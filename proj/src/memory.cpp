#include "shape/memory.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "shape/error.hpp"

namespace shape {

std::string mode_name(StageMode m) {
  switch (m) {
    case StageMode::Settle: return "settle";
    case StageMode::Refine: return "refine";
    case StageMode::Escape: return "escape";
  }
  return "unknown";
}

Memory::Memory(const MemoryConfig& config) : config_(config) {
  if (!config_.enabled) return;
  const int d = config_.dim;
  if (d <= 2) {
    for (int bins : {8, 16, 32}) {
      Level lvl;
      lvl.bins_per_coord = bins;
      lvl.blocks.push_back(Block{0, d, {}});
      levels_.push_back(std::move(lvl));
    }
  } else {
    Level coarse;
    coarse.bins_per_coord = 2;
    coarse.blocks.push_back(Block{0, d, {}});
    levels_.push_back(std::move(coarse));

    Level fine;
    fine.bins_per_coord = 4;
    for (int begin = 0; begin < d; begin += 4) fine.blocks.push_back(Block{begin, std::min(4, d - begin), {}});
    levels_.push_back(std::move(fine));
  }
}

int Memory::readout_length() const { return 4 * static_cast<int>(levels_.size()); }

uint64_t Memory::cell_key(const Level& lvl, const Block& blk, const Tensor& q,
                          std::vector<double>* center) const {
  const double hw = config_.halfwidth;
  const double w = bin_width(lvl);
  uint64_t key = 1469598103934665603ULL;  // FNV offset basis
  if (center) center->resize(static_cast<size_t>(blk.coord_count));
  for (int i = 0; i < blk.coord_count; ++i) {
    const double x = std::clamp(q.values[static_cast<size_t>(blk.coord_begin + i)], -hw, hw - 1e-12);
    const int bin = std::clamp(static_cast<int>((x + hw) / w), 0, lvl.bins_per_coord - 1);
    key = (key ^ static_cast<uint64_t>(bin + 1)) * 1099511628211ULL;
    if (center) (*center)[static_cast<size_t>(i)] = -hw + (bin + 0.5) * w;
  }
  return key;
}

std::vector<double> Memory::read(const Tensor& q) const {
  std::vector<double> out;
  out.reserve(static_cast<size_t>(readout_length()));
  for (const auto& lvl : levels_) {
    double occ = 0.0, mf = 0.0, mg = 0.0, bf = 0.0;
    for (const auto& blk : lvl.blocks) {
      const auto it = blk.cells.find(cell_key(lvl, blk, q, nullptr));
      if (it == blk.cells.end()) continue;
      const Cell& c = it->second;
      occ += static_cast<double>(c.occupancy) / (1.0 + static_cast<double>(c.occupancy));
      mf += c.mean_f;
      mg += c.mean_gnorm;
      bf += c.best_f;
    }
    const double nb = static_cast<double>(lvl.blocks.size());
    out.push_back(occ / nb);
    out.push_back(mf / nb);
    out.push_back(mg / nb);
    out.push_back(bf / nb);
  }
  return out;
}

void Memory::write(const EventSummary& summary, bool trigger) {
  if (!trigger || !config_.enabled) return;
  ++writes_;
  const double gnorm = ops::norm2(summary.g).scalar_value();
  // a stalled event with a small gradient marks the cell as a recorded minimum
  const bool minimum_like = gnorm <= 1e-3 * (1.0 + std::abs(summary.f));
  for (auto& lvl : levels_) {
    for (auto& blk : lvl.blocks) {
      std::vector<double> center;
      const uint64_t key = cell_key(lvl, blk, summary.q, &center);
      Cell& c = blk.cells[key];
      if (c.occupancy == 0) {
        c.best_f = summary.f;
        c.center = std::move(center);
      }
      c.occupancy += 1;
      const double n = static_cast<double>(c.occupancy);
      c.mean_f += (summary.f - c.mean_f) / n;
      c.mean_gnorm += (gnorm - c.mean_gnorm) / n;
      c.best_f = std::min(c.best_f, summary.f);
      if (minimum_like) c.minimum_hits += 1;
    }
  }
}

double Memory::novelty(const Tensor& c) const {
  if (levels_.empty()) return 1.0;
  const Level& finest = levels_.back();
  double occ = 0.0;
  for (const auto& blk : finest.blocks) {
    const auto it = blk.cells.find(cell_key(finest, blk, c, nullptr));
    if (it != blk.cells.end()) occ += static_cast<double>(it->second.occupancy);
  }
  occ /= static_cast<double>(finest.blocks.size());
  return 1.0 / (1.0 + occ);
}

int64_t Memory::finest_occupancy(const Tensor& q) const {
  if (levels_.empty()) return 0;
  const Level& finest = levels_.back();
  int64_t occ = 0;
  for (const auto& blk : finest.blocks) {
    const auto it = blk.cells.find(cell_key(finest, blk, q, nullptr));
    if (it != blk.cells.end()) occ += it->second.occupancy;
  }
  return occ;
}

std::vector<int64_t> Memory::occupancy_path(const Tensor& q) const {
  std::vector<int64_t> path;
  for (const auto& lvl : levels_) {
    int64_t occ = 0;
    for (const auto& blk : lvl.blocks) {
      const auto it = blk.cells.find(cell_key(lvl, blk, q, nullptr));
      if (it != blk.cells.end()) occ += it->second.occupancy;
    }
    path.push_back(occ);
  }
  return path;
}

Memory::PotentialEval Memory::potential(const Tensor& q, StageMode mode) const {
  PotentialEval out;
  out.u_mem_grad = Tensor::zeros(q.shape);
  out.v_bar_grad = Tensor::zeros(q.shape);
  if (levels_.empty()) return out;

  const Level& finest = levels_.back();
  const double sigma = bin_width(finest);
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  const bool bar_active = (mode == StageMode::Escape) && config_.w_bar > 0.0;

  for (const auto& blk : finest.blocks) {
    for (const auto& [key, cell] : blk.cells) {
      double d2 = 0.0;
      for (int i = 0; i < blk.coord_count; ++i) {
        const double diff = q.values[static_cast<size_t>(blk.coord_begin + i)] - cell.center[static_cast<size_t>(i)];
        d2 += diff * diff;
      }
      const double bump = std::exp(-d2 * inv2s2);
      const double occ = static_cast<double>(cell.occupancy);
      const double u = config_.w_mem * occ * bump;
      out.u_mem += u;
      const double vb = bar_active && cell.minimum_hits > 0 ? config_.w_bar * occ * bump : 0.0;
      out.v_bar += vb;
      for (int i = 0; i < blk.coord_count; ++i) {
        const double diff = q.values[static_cast<size_t>(blk.coord_begin + i)] - cell.center[static_cast<size_t>(i)];
        const double dgrad = -2.0 * inv2s2 * diff;
        out.u_mem_grad.values[static_cast<size_t>(blk.coord_begin + i)] += u * dgrad;
        if (vb > 0.0) out.v_bar_grad.values[static_cast<size_t>(blk.coord_begin + i)] += vb * dgrad;
      }
    }
  }
  return out;
}

std::string Memory::to_string() const {
  std::ostringstream out;
  out << "memory dim=" << config_.dim << " levels=" << levels_.size() << " writes=" << writes_ << "\n";
  for (size_t l = 0; l < levels_.size(); ++l) {
    const auto& lvl = levels_[l];
    size_t cells = 0;
    for (const auto& blk : lvl.blocks) cells += blk.cells.size();
    out << "level " << l << " bins=" << lvl.bins_per_coord << " blocks=" << lvl.blocks.size()
        << " visited_cells=" << cells << "\n";
    for (const auto& blk : lvl.blocks)
      for (const auto& [key, c] : blk.cells)
        out << "  cell " << key << " occ=" << c.occupancy << " mean_f=" << c.mean_f << " best_f=" << c.best_f
            << " min_hits=" << c.minimum_hits << "\n";
  }
  return out.str();
}

}  // namespace shape
