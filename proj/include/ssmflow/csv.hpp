#pragma once

// Minimal CSV reading/writing for datasets, chains and sample dumps. Numbers
// are written with 17 significant digits so doubles round-trip exactly.

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "ssmflow/error.hpp"
#include "ssmflow/models.hpp"

namespace ssmflow::csv {

using ad::Index;

inline std::string format(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// Table with a header row; blank cells read as NaN.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  Index column(const std::string& name) const {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c] == name) return static_cast<Index>(c);
    return -1;
  }
};

inline Table read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInput("cannot open " + path.string());
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument(path.string() + ": empty file");
  t.header = split(line);
  Index lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split(line);
    if (cells.size() > t.header.size())
      throw InvalidArgument(path.string() + ":" + std::to_string(lineno) + ": too many cells");
    std::vector<double> row(t.header.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (cells[c].empty()) continue;
      std::size_t used = 0;
      try {
        row[c] = std::stod(cells[c], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != cells[c].size())
        throw InvalidArgument(path.string() + ":" + std::to_string(lineno) + ": bad number '" + cells[c] + "'");
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

class Writer {
 public:
  Writer(const std::filesystem::path& path, const std::vector<std::string>& header) : out_(path), path_(path) {
    if (!out_) throw Error("cannot open " + path.string() + " for writing");
    for (std::size_t c = 0; c < header.size(); ++c) out_ << (c ? "," : "") << header[c];
    out_ << '\n';
  }

  // NaN cells are written blank.
  void row(const std::vector<double>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c) out_ << ',';
      if (!std::isnan(cells[c])) out_ << format(cells[c]);
    }
    out_ << '\n';
    if (!out_) throw Error("write failed on " + path_.string());
  }

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

// ---------------------------------------------------------------------------
// Datasets: `time,y1[,y2,...]`, one row per grid time, blank = missing.

inline void write_dataset(const std::filesystem::path& path, const models::ObservationSeries& obs) {
  std::vector<std::string> header{"time"};
  for (Index o = 0; o < obs.obs_dim(); ++o) header.push_back("y" + std::to_string(o + 1));
  Writer w(path, header);
  for (Index i = 0; i <= obs.steps(); ++i) {
    std::vector<double> row{static_cast<double>(i) * obs.dt};
    for (Index o = 0; o < obs.obs_dim(); ++o)
      row.push_back(obs.has(i) ? obs.values(i, o) : std::numeric_limits<double>::quiet_NaN());
    w.row(row);
  }
}

inline void write_path(const std::filesystem::path& path, const models::LatentPath& x) {
  std::vector<std::string> header{"time"};
  for (Index c = 0; c < x.states.cols(); ++c) header.push_back("x" + std::to_string(c + 1));
  Writer w(path, header);
  for (Index i = 0; i <= x.steps(); ++i) {
    std::vector<double> row{x.time(i)};
    for (Index c = 0; c < x.states.cols(); ++c) row.push_back(x.states(i, c));
    w.row(row);
  }
}

// Maps times onto the grid i * dt. `steps` < 0 takes N from the last row.
// A row is an observation only if all of its y cells are present.
inline models::ObservationSeries read_dataset(const std::filesystem::path& path, Index obs_dim, double dt,
                                              Index steps = -1) {
  const Table t = read(path);
  if (t.header.empty() || t.header[0] != "time") throw InvalidArgument(path.string() + ": first column must be 'time'");
  if (static_cast<Index>(t.header.size()) != obs_dim + 1)
    throw InvalidArgument(path.string() + ": expected " + std::to_string(obs_dim) + " observation columns");
  std::vector<Index> grid;
  Index last = 0;
  for (const auto& row : t.rows) {
    if (std::isnan(row[0])) throw InvalidArgument(path.string() + ": missing time value");
    const double pos = row[0] / dt;
    const Index i = static_cast<Index>(std::llround(pos));
    if (i < 0 || std::abs(pos - static_cast<double>(i)) > 1e-6 * std::max(1.0, std::abs(pos)))
      throw InvalidArgument(path.string() + ": time " + format(row[0]) + " is not on the dt grid");
    grid.push_back(i);
    last = std::max(last, i);
  }
  if (steps < 0) steps = last;
  if (last > steps) throw InvalidArgument(path.string() + ": times extend past the model grid");
  auto obs = models::ObservationSeries::empty(steps, obs_dim, dt);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    Eigen::VectorXd y(obs_dim);
    bool complete = true;
    for (Index o = 0; o < obs_dim; ++o) {
      y[o] = t.rows[r][static_cast<std::size_t>(o + 1)];
      complete = complete && !std::isnan(y[o]);
    }
    if (!complete) continue;
    if (!y.allFinite()) throw InvalidArgument(path.string() + ": non-finite observation");
    if (obs.has(grid[r])) throw InvalidArgument(path.string() + ": duplicate grid time " + format(t.rows[r][0]));
    obs.set(grid[r], y);
  }
  return obs;
}

}  // namespace ssmflow::csv
