#include "shape/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "shape/error.hpp"

namespace shape {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

bool parse_bool(const std::string& v, int line) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("line " + std::to_string(line) + ": expected a boolean, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : v) {
    if (c == ',' || c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

char csv_buf_tag;  // anchor for translation-unit locality

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  (void)csv_buf_tag;
  return buf;
}

}  // namespace

BenchConfig parse_config(const std::string& text) {
  BenchConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;

  auto apply = [&](const std::string& sec, const std::string& key, const std::string& value, int ln) {
    const std::string k = sec + "." + key;
    try {
      if (k == "task.family") cfg.family = family_from_name(value);
      else if (k == "task.dim") cfg.dim = std::stoi(value);
      else if (k == "task.count") cfg.task_count = std::stoi(value);
      else if (k == "task.seed") cfg.seed = std::stoull(value);
      else if (k == "task.rotate") cfg.task_options.rotate = parse_bool(value, ln);
      else if (k == "task.wells") cfg.task_options.wells = std::stoi(value);
      else if (k == "task.lj_eps") cfg.task_options.lj_eps = std::stod(value);
      else if (k == "task.lj_sigma") cfg.task_options.lj_sigma = std::stod(value);
      else if (k == "task.phase_noise") cfg.task_options.phase_noise = std::stod(value);
      else if (k == "task.control_system")
        cfg.task_options.control_system =
            value == "pendulum" ? ControlSystem::Pendulum : ControlSystem::DoubleIntegrator;
      else if (k == "oracle.kind") cfg.oracle.kind = oracle_from_name(value);
      else if (k == "oracle.sigma_g") cfg.oracle.sigma_g = std::stod(value);
      else if (k == "oracle.zo_eps") cfg.oracle.zo_epsilon = std::stod(value);
      else if (k == "oracle.zo_directions") cfg.oracle.zo_directions = std::stoi(value);
      else if (k == "oracle.minibatch") cfg.oracle.minibatch = std::stoi(value);
      else if (k == "methods.list") cfg.methods = split_list(value);
      else if (k == "methods.checkpoint") cfg.checkpoint = value;
      else if (k == "budget.total") cfg.budget = std::stoll(value);
      else if (k == "budget.particles") cfg.particles = std::stoi(value);
      else if (k == "train.epochs") cfg.train_epochs = std::stoi(value);
      else if (k == "train.seed") cfg.train_seed = std::stoull(value);
      else if (k == "train.use_memory") cfg.use_memory = parse_bool(value, ln);
      else if (k == "train.train_controller") cfg.train_controller = parse_bool(value, ln);
      else throw ConfigError("line " + std::to_string(ln) + ": unknown key '" + k + "'");
    } catch (const std::invalid_argument&) {
      throw ConfigError("line " + std::to_string(ln) + ": bad value '" + value + "' for " + k);
    } catch (const std::out_of_range&) {
      throw ConfigError("line " + std::to_string(ln) + ": value out of range for " + k);
    }
  };

  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": unclosed section header");
      section = t.substr(1, t.size() - 2);
      continue;
    }
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value, got '" + t + "'");
    if (section.empty()) throw ConfigError("line " + std::to_string(line_no) + ": key outside any section");
    apply(section, trim(t.substr(0, eq)), trim(t.substr(eq + 1)), line_no);
  }

  // environment overrides: SHAPE_SECTION_KEY
  const char* kSections[] = {"task", "oracle", "methods", "budget", "train"};
  const char* kKeys[] = {"family", "dim", "count", "seed", "rotate", "wells", "lj_eps", "lj_sigma",
                         "phase_noise", "control_system", "kind", "sigma_g", "zo_eps", "zo_directions",
                         "minibatch", "list", "checkpoint", "total", "particles", "epochs", "use_memory",
                         "train_controller"};
  for (const char* sec : kSections)
    for (const char* key : kKeys) {
      const std::string env_name = "SHAPE_" + upper(sec) + "_" + upper(key);
      if (const char* v = std::getenv(env_name.c_str())) apply(sec, key, v, 0);
    }
  return cfg;
}

BenchConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string render_config(const BenchConfig& cfg) {
  std::ostringstream out;
  out << "[task]\n"
      << "family = " << family_name(cfg.family) << "\n"
      << "dim = " << cfg.dim << "\n"
      << "count = " << cfg.task_count << "\n"
      << "seed = " << cfg.seed << "\n"
      << "rotate = " << (cfg.task_options.rotate ? "true" : "false") << "\n"
      << "wells = " << cfg.task_options.wells << "\n"
      << "[oracle]\n"
      << "kind = " << oracle_name(cfg.oracle.kind) << "\n"
      << "sigma_g = " << cfg.oracle.sigma_g << "\n"
      << "zo_eps = " << cfg.oracle.zo_epsilon << "\n"
      << "zo_directions = " << cfg.oracle.zo_directions << "\n"
      << "[methods]\n"
      << "list = ";
  for (size_t i = 0; i < cfg.methods.size(); ++i) out << (i ? ", " : "") << cfg.methods[i];
  out << "\n";
  if (!cfg.checkpoint.empty()) out << "checkpoint = " << cfg.checkpoint << "\n";
  out << "[budget]\n"
      << "total = " << cfg.budget << "\n"
      << "particles = " << cfg.particles << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------

BenchReport run_benchmark(const BenchConfig& cfg, const PolicyPair* policies, ExecMode exec) {
  const int grid = cfg.task_count * cfg.particles;
  const int n_methods = static_cast<int>(cfg.methods.size());
  std::vector<MetricsRow> rows(static_cast<size_t>(grid) * n_methods);
  std::map<std::string, std::vector<double>> curves;
  std::vector<std::vector<std::vector<double>>> per_cell_curves(
      static_cast<size_t>(grid), std::vector<std::vector<double>>(static_cast<size_t>(n_methods)));

  for (const auto& name : cfg.methods)
    if (name == "shape" && policies == nullptr)
      throw ConfigError("the learned method needs trained policies (checkpoint or [train])");

  parallel_for(grid, exec, [&](int64_t cell) {
    const int task_idx = static_cast<int>(cell) / cfg.particles;
    const int particle = static_cast<int>(cell) % cfg.particles;
    TaskSpec task = make_task(cfg.family, cfg.dim, derive_seed(cfg.seed, static_cast<uint64_t>(task_idx)),
                              cfg.task_options);

    RunConfig run_cfg;
    run_cfg.oracle = cfg.oracle;
    run_cfg.budget = cfg.budget;
    run_cfg.seed = derive_seed(cfg.seed, 0xC0FFEE + cell);  // shared across methods

    for (int mi = 0; mi < n_methods; ++mi) {
      const std::string& name = cfg.methods[mi];
      const auto t0 = std::chrono::steady_clock::now();
      RolloutTrace trace;
      if (name == "shape") {
        trace = run_shape(task, run_cfg, *policies);
      } else {
        trace = run_baseline(task, run_cfg, method_from_name(name));
      }
      const auto t1 = std::chrono::steady_clock::now();
      const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
      rows[static_cast<size_t>(cell) * n_methods + mi] =
          compute_metrics(trace, task, name, oracle_name(cfg.oracle.kind), ms);

      // best-so-far gap sampled per call index for the plot
      const double fstar = reference_optimum(task).f_star;
      std::vector<double> curve(static_cast<size_t>(cfg.budget), std::nan(""));
      for (const auto& r : trace.rows)
        if (r.calls_used >= 1 && r.calls_used <= cfg.budget)
          curve[static_cast<size_t>(r.calls_used - 1)] = r.best_f - fstar;
      // forward-fill gaps (ZO consumes several calls per row; early stop
      // freezes the tail at the final best)
      double last = std::nan("");
      for (auto& v : curve) {
        if (std::isnan(v)) v = last;
        else last = v;
      }
      per_cell_curves[static_cast<size_t>(cell)][static_cast<size_t>(mi)] = std::move(curve);
    }
  });

  for (int mi = 0; mi < n_methods; ++mi) {
    std::vector<double> mean(static_cast<size_t>(cfg.budget), 0.0);
    std::vector<int> counts(static_cast<size_t>(cfg.budget), 0);
    for (int cell = 0; cell < grid; ++cell) {
      const auto& c = per_cell_curves[static_cast<size_t>(cell)][static_cast<size_t>(mi)];
      for (size_t k = 0; k < c.size(); ++k)
        if (!std::isnan(c[k])) {
          mean[k] += c[k];
          counts[k] += 1;
        }
    }
    for (size_t k = 0; k < mean.size(); ++k) mean[k] = counts[k] ? mean[k] / counts[k] : std::nan("");
    curves[cfg.methods[static_cast<size_t>(mi)]] = std::move(mean);
  }

  BenchReport report;
  report.rows = std::move(rows);
  report.aggregates = aggregate_rows(report.rows);
  report.best_gap_curves = std::move(curves);
  return report;
}

std::vector<AggregateRow> aggregate_rows(const std::vector<MetricsRow>& rows) {
  std::map<std::string, std::vector<const MetricsRow*>> groups;
  for (const auto& r : rows) groups[r.family + "|" + std::to_string(r.dim) + "|" + r.method].push_back(&r);

  auto mean_of = [](const std::vector<double>& v) {
    double acc = 0;
    for (double x : v) acc += x;
    return v.empty() ? 0.0 : acc / v.size();
  };
  auto std_of = [&](const std::vector<double>& v, double mu) {
    if (v.size() < 2) return 0.0;
    double acc = 0;
    for (double x : v) acc += (x - mu) * (x - mu);
    return std::sqrt(acc / (v.size() - 1));
  };
  auto median_of = [](std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };

  std::vector<AggregateRow> out;
  for (const auto& [key, group] : groups) {
    AggregateRow a;
    const size_t p1 = key.find('|');
    const size_t p2 = key.find('|', p1 + 1);
    a.family = key.substr(0, p1);
    a.dim = std::stoi(key.substr(p1 + 1, p2 - p1 - 1));
    a.method = key.substr(p2 + 1);
    a.runs = static_cast<int>(group.size());
    std::vector<double> fg, bg, fd, ag, calls, hits;
    for (const MetricsRow* r : group) {
      fg.push_back(r->final_gap);
      bg.push_back(r->best_gap);
      fd.push_back(r->final_dist);
      ag.push_back(r->auc_gap);
      calls.push_back(static_cast<double>(r->oracle_calls));
      hits.push_back(static_cast<double>(r->hit));
    }
    a.mean_final_gap = mean_of(fg);
    a.std_final_gap = std_of(fg, a.mean_final_gap);
    a.median_final_gap = median_of(fg);
    a.mean_best_gap = mean_of(bg);
    a.std_best_gap = std_of(bg, a.mean_best_gap);
    a.median_best_gap = median_of(bg);
    a.mean_final_dist = mean_of(fd);
    a.mean_auc_gap = mean_of(ag);
    a.hit_rate = mean_of(hits);
    a.mean_calls = mean_of(calls);
    out.push_back(a);
  }

  // mark the best method (lowest mean best gap) within each family/dim block
  std::map<std::string, size_t> best;
  for (size_t i = 0; i < out.size(); ++i) {
    const std::string block = out[i].family + "|" + std::to_string(out[i].dim);
    auto it = best.find(block);
    if (it == best.end() || out[i].mean_best_gap < out[it->second].mean_best_gap) best[block] = i;
  }
  for (const auto& [block, idx] : best) out[idx].best_method = true;
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace {
constexpr const char* kCsvHeader =
    "task,family,dim,seed,method,oracle,final_dist,final_gap,best_gap,auc_gap,auc_dist,auc_best_gap,hit,"
    "oracle_calls,minima_visited,wall_ms,extra_calls";
}

std::string rows_to_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream out;
  out << kCsvHeader << "\n";
  for (const auto& r : rows) {
    out << r.task_id << ',' << r.family << ',' << r.dim << ',' << r.seed << ',' << r.method << ','
        << r.oracle << ',' << fmt17(r.final_dist) << ',' << fmt17(r.final_gap) << ',' << fmt17(r.best_gap)
        << ',' << fmt17(r.auc_gap) << ',' << fmt17(r.auc_dist) << ',' << fmt17(r.auc_best_gap) << ','
        << r.hit << ',' << r.oracle_calls << ',' << r.minima_visited << ',' << fmt17(r.wall_ms) << ','
        << r.extra_calls << "\n";
  }
  return out.str();
}

std::vector<MetricsRow> rows_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty csv");
  if (trim(line) != kCsvHeader) throw IoError("unexpected csv header");
  std::vector<MetricsRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> f;
    std::string cur;
    for (char c : line) {
      if (c == ',') {
        f.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    f.push_back(cur);
    if (f.size() != 17) throw IoError("csv line " + std::to_string(line_no) + ": wrong column count");
    MetricsRow r;
    r.task_id = f[0];
    r.family = f[1];
    r.dim = std::stoi(f[2]);
    r.seed = std::stoull(f[3]);
    r.method = f[4];
    r.oracle = f[5];
    r.final_dist = std::stod(f[6]);
    r.final_gap = std::stod(f[7]);
    r.best_gap = std::stod(f[8]);
    r.auc_gap = std::stod(f[9]);
    r.auc_dist = std::stod(f[10]);
    r.auc_best_gap = std::stod(f[11]);
    r.hit = std::stoi(f[12]);
    r.oracle_calls = std::stoll(f[13]);
    r.minima_visited = std::stoll(f[14]);
    r.wall_ms = std::stod(f[15]);
    r.extra_calls = std::stoll(f[16]);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string report_to_text(const BenchReport& report) {
  std::ostringstream out;
  out << "family dim method runs best_gap(mean/std/median) final_gap(mean) hit_rate calls\n";
  for (const auto& a : report.aggregates) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-10s %3d %-10s %4d %10.4g/%.4g/%.4g %12.4g %8.3f %10.1f%s\n",
                  a.family.c_str(), a.dim, a.method.c_str(), a.runs, a.mean_best_gap, a.std_best_gap,
                  a.median_best_gap, a.mean_final_gap, a.hit_rate, a.mean_calls,
                  a.best_method ? "  *best*" : "");
    out << buf;
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// SVG rendering

namespace {

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

struct SvgCanvas {
  std::ostringstream body;
  int width = 720, height = 480;
  int left = 70, right = 30, top = 40, bottom = 50;

  double x_of(double frac) const { return left + frac * (width - left - right); }
  double y_of(double frac) const { return top + (1.0 - frac) * (height - top - bottom); }

  std::string finish(const std::string& title) {
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" viewBox=\"0 0 " << width << " " << height << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title
        << "</text>\n"
        << body.str() << "</svg>\n";
    return out.str();
  }
};

}  // namespace

std::string render_best_gap_svg(const BenchReport& report, const std::string& title) {
  SvgCanvas canvas;
  // log-y range over all finite positive values (floored for log scale)
  double lo = 1e300, hi = -1e300;
  size_t max_len = 0;
  for (const auto& [name, curve] : report.best_gap_curves) {
    max_len = std::max(max_len, curve.size());
    for (double v : curve)
      if (std::isfinite(v)) {
        const double cv = std::max(v, 1e-12);
        lo = std::min(lo, cv);
        hi = std::max(hi, cv);
      }
  }
  if (max_len == 0 || lo > hi) return canvas.finish(title + " (no data)");
  lo = std::max(lo * 0.5, 1e-13);
  hi = std::max(hi * 2.0, lo * 10.0);
  const double llo = std::log10(lo), lhi = std::log10(hi);

  // axes
  canvas.body << "<line x1=\"" << canvas.x_of(0) << "\" y1=\"" << canvas.y_of(0) << "\" x2=\""
              << canvas.x_of(1) << "\" y2=\"" << canvas.y_of(0) << "\" stroke=\"black\"/>\n";
  canvas.body << "<line x1=\"" << canvas.x_of(0) << "\" y1=\"" << canvas.y_of(0) << "\" x2=\""
              << canvas.x_of(0) << "\" y2=\"" << canvas.y_of(1) << "\" stroke=\"black\"/>\n";
  canvas.body << "<text x=\"" << canvas.x_of(0.5) << "\" y=\"" << canvas.height - 12
              << "\" text-anchor=\"middle\" font-size=\"12\">oracle calls</text>\n";
  canvas.body << "<text x=\"16\" y=\"" << canvas.y_of(0.5)
              << "\" font-size=\"12\" transform=\"rotate(-90 16 " << canvas.y_of(0.5)
              << ")\" text-anchor=\"middle\">best-so-far gap (log)</text>\n";
  for (int e = static_cast<int>(std::ceil(llo)); e <= static_cast<int>(std::floor(lhi)); ++e) {
    const double fy = (e - llo) / (lhi - llo);
    canvas.body << "<text x=\"" << canvas.x_of(0) - 8 << "\" y=\"" << canvas.y_of(fy) + 4
                << "\" text-anchor=\"end\" font-size=\"10\">1e" << e << "</text>\n";
    canvas.body << "<line x1=\"" << canvas.x_of(0) << "\" y1=\"" << canvas.y_of(fy) << "\" x2=\""
                << canvas.x_of(1) << "\" y2=\"" << canvas.y_of(fy)
                << "\" stroke=\"#dddddd\" stroke-width=\"0.5\"/>\n";
  }

  int color = 0, legend_y = 46;
  for (const auto& [name, curve] : report.best_gap_curves) {
    std::ostringstream pts;
    bool first = true;
    for (size_t k = 0; k < curve.size(); ++k) {
      if (!std::isfinite(curve[k])) continue;
      const double fx = curve.size() > 1 ? static_cast<double>(k) / (curve.size() - 1) : 0.0;
      const double fy = (std::log10(std::max(curve[k], 1e-12)) - llo) / (lhi - llo);
      pts << (first ? "" : " ") << canvas.x_of(fx) << "," << canvas.y_of(std::clamp(fy, 0.0, 1.0));
      first = false;
    }
    const char* c = kPalette[color % 10];
    canvas.body << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\""
                << pts.str() << "\"/>\n";
    canvas.body << "<text x=\"" << canvas.width - 140 << "\" y=\"" << legend_y << "\" font-size=\"11\" fill=\""
                << c << "\">" << name << "</text>\n";
    legend_y += 14;
    ++color;
  }
  return canvas.finish(title);
}

std::string render_rows_svg(const std::vector<MetricsRow>& rows, const std::string& title) {
  SvgCanvas canvas;
  auto aggs = aggregate_rows(rows);
  if (aggs.empty()) return canvas.finish(title + " (no data)");
  double hi = 0;
  for (const auto& a : aggs) hi = std::max(hi, a.mean_best_gap);
  hi = hi <= 0 ? 1.0 : hi * 1.1;
  const double bar_w = 0.8 / aggs.size();
  for (size_t i = 0; i < aggs.size(); ++i) {
    const double x0 = canvas.x_of(0.1 + i * bar_w);
    const double frac = std::max(aggs[i].mean_best_gap, 0.0) / hi;
    const double y1 = canvas.y_of(frac);
    canvas.body << "<rect x=\"" << x0 << "\" y=\"" << y1 << "\" width=\""
                << (canvas.x_of(bar_w) - canvas.x_of(0)) * 0.9 << "\" height=\"" << canvas.y_of(0) - y1
                << "\" fill=\"" << kPalette[i % 10] << "\"/>\n";
    canvas.body << "<text x=\"" << x0 << "\" y=\"" << canvas.y_of(0) + 14 << "\" font-size=\"10\">"
                << aggs[i].method << "</text>\n";
  }
  canvas.body << "<text x=\"16\" y=\"" << canvas.y_of(0.5) << "\" font-size=\"12\" transform=\"rotate(-90 16 "
              << canvas.y_of(0.5) << ")\" text-anchor=\"middle\">mean best gap</text>\n";
  return canvas.finish(title);
}

}  // namespace shape
