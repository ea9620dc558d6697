#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "flare/harness/config.hpp"

namespace flare::harness {

/// One logged evaluation point. `episode_return` is the mean return of the
/// training episodes completed since the previous row; the loss columns are
/// means over the learner updates in the same span (0 until learning starts);
/// `alpha` is the current temperature (for q-learning runs, the current
/// exploration epsilon). `wall_time` is elapsed seconds since run start; it
/// stays in memory / the meta sidecar so the CSV is byte-identical across
/// repeated runs of the same (config, seed).
struct RunRecord {
  int64_t env_step = 0;
  double episode_return = 0;
  double eval_return_mean = 0;
  double eval_return_std = 0;
  double critic_loss = 0;
  double actor_loss = 0;
  double alpha = 0;
  double wall_time = 0;
};

struct RunLog {
  std::vector<RunRecord> rows;
};

inline constexpr std::string_view kCsvHeader =
    "env_step,episode_return,eval_return_mean,eval_return_std,critic_loss,actor_loss,"
    "alpha";

inline std::string csv_row(const RunRecord& r) {
  std::string out = detail::format_int(r.env_step);
  for (double v : {r.episode_return, r.eval_return_mean, r.eval_return_std,
                   r.critic_loss, r.actor_loss, r.alpha}) {
    out += ',';
    out += detail::format_value(v);
  }
  return out;
}

inline void write_csv(const RunLog& log, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("log: cannot open " + path + " for writing");
  f << kCsvHeader << '\n';
  for (const RunRecord& r : log.rows) f << csv_row(r) << '\n';
  if (!f) throw std::runtime_error("log: short write to " + path);
}

inline std::string csv_text(const RunLog& log) {
  std::string out(kCsvHeader);
  out += '\n';
  for (const RunRecord& r : log.rows) {
    out += csv_row(r);
    out += '\n';
  }
  return out;
}

inline RunLog read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("log: cannot open " + path);
  std::string line;
  if (!std::getline(f, line))
    throw std::runtime_error("log: " + path + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader)
    throw std::runtime_error("log: " + path + " has an unexpected header: " + line);
  RunLog log;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    RunRecord r;
    double* cols[] = {&r.episode_return, &r.eval_return_mean, &r.eval_return_std,
                      &r.critic_loss,    &r.actor_loss,       &r.alpha};
    size_t pos = 0, field = 0;
    while (pos <= line.size()) {
      const size_t comma = line.find(',', pos);
      const std::string_view cell(line.data() + pos,
                                  (comma == std::string::npos ? line.size() : comma) - pos);
      const auto bad = [&]() {
        throw std::runtime_error("log: " + path + ":" + std::to_string(lineno) +
                                 ": bad cell '" + std::string(cell) + "'");
      };
      if (field == 0) {
        auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), r.env_step);
        if (ec != std::errc{} || p != cell.data() + cell.size()) bad();
      } else if (field <= 6) {
        double v{};
        auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
        if (ec != std::errc{} || p != cell.data() + cell.size()) bad();
        *cols[field - 1] = v;
      } else {
        bad();
      }
      ++field;
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (field != 7)
      throw std::runtime_error("log: " + path + ":" + std::to_string(lineno) +
                               ": expected 7 columns");
    if (!log.rows.empty() && r.env_step <= log.rows.back().env_step)
      throw std::runtime_error("log: " + path + ": env_step is not monotone");
    log.rows.push_back(r);
  }
  return log;
}

// ---------------------------------------------------------------------------
// Run metadata sidecar (completion marker; carries the wall time so the CSV
// itself stays deterministic)
// ---------------------------------------------------------------------------

namespace detail {
inline std::string json_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size() + 8);
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
  return out;
}
}  // namespace detail

inline void write_meta(const std::string& path, const std::string& hash,
                       const std::string& label, int seed, int64_t final_step,
                       double wall_seconds, const std::string& config_text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("log: cannot open " + path + " for writing");
  f << "{\n"
    << "  \"hash\": \"" << hash << "\",\n"
    << "  \"label\": \"" << detail::json_escape(label) << "\",\n"
    << "  \"seed\": " << seed << ",\n"
    << "  \"final_env_step\": " << final_step << ",\n"
    << "  \"wall_time_s\": " << detail::format_value(wall_seconds) << ",\n"
    << "  \"config\": \"" << detail::json_escape(config_text) << "\"\n"
    << "}\n";
  if (!f) throw std::runtime_error("log: short write to " + path);
}

/// String field from a meta sidecar we wrote, or "" when absent/unreadable.
/// Our labels and hashes never contain escape sequences, so the raw bytes
/// between the quotes are the value.
inline std::string read_meta_field(const std::string& path, const std::string& key) {
  std::ifstream f(path);
  if (!f) return "";
  std::stringstream buf;
  buf << f.rdbuf();
  const std::string text = buf.str();
  const std::string needle = "\"" + key + "\": \"";
  const size_t at = text.find(needle);
  if (at == std::string::npos) return "";
  const size_t start = at + needle.size();
  const size_t end = text.find('"', start);
  if (end == std::string::npos) return "";
  return text.substr(start, end - start);
}

/// Hash recorded in a meta sidecar we wrote, or "" when absent/unreadable.
inline std::string read_meta_hash(const std::string& path) {
  return read_meta_field(path, "hash");
}

// ---------------------------------------------------------------------------
// Aggregation over seeds
// ---------------------------------------------------------------------------

/// Mean and population standard deviation of eval returns at each grid point.
struct Curve {
  std::vector<double> steps;
  std::vector<double> mean;
  std::vector<double> dev;
};

namespace detail {

/// Linear interpolation of (xs, ys) at x; xs must be strictly increasing and
/// bracket x (aggregation only queries inside the common covered range).
inline double lerp_at(const std::vector<double>& xs, const std::vector<double>& ys,
                      double x) {
  const auto it = std::lower_bound(xs.begin(), xs.end(), x);
  if (it == xs.begin()) return ys.front();
  if (it == xs.end()) return ys.back();
  const size_t hi = static_cast<size_t>(it - xs.begin());
  const size_t lo = hi - 1;
  const double t = (x - xs[lo]) / (xs[hi] - xs[lo]);
  return ys[lo] + t * (ys[hi] - ys[lo]);
}

}  // namespace detail

/// Aggregates eval curves from several runs of one variant. Identical grids
/// (the normal case — the harness logs on a fixed eval grid) pass through
/// unchanged; mismatched grids are resampled by linear interpolation onto the
/// sorted union of all logged steps inside the range every log covers.
inline Curve aggregate_eval(const std::vector<RunLog>& logs) {
  if (logs.empty()) throw std::invalid_argument("aggregate: need at least one log");
  for (const RunLog& log : logs)
    if (log.rows.empty()) throw std::invalid_argument("aggregate: empty log");

  bool same_grid = true;
  for (const RunLog& log : logs) {
    if (log.rows.size() != logs[0].rows.size()) same_grid = false;
    else
      for (size_t i = 0; i < log.rows.size(); ++i)
        if (log.rows[i].env_step != logs[0].rows[i].env_step) same_grid = false;
  }

  Curve c;
  if (same_grid) {
    for (const RunRecord& r : logs[0].rows) c.steps.push_back(double(r.env_step));
  } else {
    double lo = -1e300, hi = 1e300;
    std::vector<double> grid;
    for (const RunLog& log : logs) {
      lo = std::max(lo, double(log.rows.front().env_step));
      hi = std::min(hi, double(log.rows.back().env_step));
      for (const RunRecord& r : log.rows) grid.push_back(double(r.env_step));
    }
    if (lo > hi) throw std::invalid_argument("aggregate: logs share no step range");
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    for (double s : grid)
      if (s >= lo && s <= hi) c.steps.push_back(s);
  }

  for (size_t i = 0; i < c.steps.size(); ++i) {
    const double s = c.steps[i];
    double sum = 0.0, sq = 0.0;
    for (const RunLog& log : logs) {
      double v;
      if (same_grid) {
        v = log.rows[i].eval_return_mean;
      } else {
        std::vector<double> xs, ys;
        xs.reserve(log.rows.size());
        ys.reserve(log.rows.size());
        for (const RunRecord& r : log.rows) {
          xs.push_back(double(r.env_step));
          ys.push_back(r.eval_return_mean);
        }
        v = detail::lerp_at(xs, ys, s);
      }
      sum += v;
      sq += v * v;
    }
    const double n = double(logs.size());
    const double m = sum / n;
    c.mean.push_back(m);
    c.dev.push_back(std::sqrt(std::max(0.0, sq / n - m * m)));
  }
  return c;
}

/// Score of a run or variant: mean of the last `window` curve points.
inline double final_score(const Curve& c, int window = 3) {
  if (c.mean.empty()) throw std::invalid_argument("final_score: empty curve");
  const size_t take = std::min<size_t>(size_t(std::max(window, 1)), c.mean.size());
  double sum = 0.0;
  for (size_t i = c.mean.size() - take; i < c.mean.size(); ++i) sum += c.mean[i];
  return sum / double(take);
}

inline double final_score(const RunLog& log, int window = 3) {
  if (log.rows.empty()) throw std::invalid_argument("final_score: empty log");
  const size_t take = std::min<size_t>(size_t(std::max(window, 1)), log.rows.size());
  double sum = 0.0;
  for (size_t i = log.rows.size() - take; i < log.rows.size(); ++i)
    sum += log.rows[i].eval_return_mean;
  return sum / double(take);
}

/// Area under the mean curve by the trapezoid rule (learning-speed score).
inline double area_under_curve(const Curve& c) {
  if (c.steps.size() < 2) return 0.0;
  double area = 0.0;
  for (size_t i = 1; i < c.steps.size(); ++i)
    area += 0.5 * (c.mean[i] + c.mean[i - 1]) * (c.steps[i] - c.steps[i - 1]);
  return area;
}

}  // namespace flare::harness
