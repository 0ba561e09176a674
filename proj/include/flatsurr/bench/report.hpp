#pragma once

// Transfer tables, their aggregates, CSV IO and deterministic SVG line plots.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace flatsurr {

struct TransferRow {
  int epoch = 0;
  std::string target;
  std::uint64_t seed = 0;
  double success_rate = 0;
};

/// Across-seed statistics for one (epoch, target). The pseudo-target
/// "mean" aggregates the per-seed average over all targets.
struct AggregateRow {
  int epoch = 0;
  std::string target;
  int n = 0;
  double mean = 0;
  double sd = 0;  // sample standard deviation, 0 when n == 1
  double lo() const { return mean - 2 * sd; }
  double hi() const { return mean + 2 * sd; }
};

struct TechniqueRow {
  std::string technique;
  std::string base;
  double epsilon = 0;
  double success_rate = 0;
};

inline constexpr const char* kMeanTarget = "mean";

/// Shortest decimal text that parses back to the same double.
std::string fmt_double(double v);

/// Mean and sample standard deviation.
std::pair<double, double> mean_sd(const std::vector<double>& v);

/// Per-seed mean over targets at one epoch, ordered by seed.
std::vector<double> seed_means(const std::vector<TransferRow>& rows, int epoch);

/// Rows sorted by (epoch, target) with the "mean" pseudo-target last per epoch.
std::vector<AggregateRow> aggregate_transfer(const std::vector<TransferRow>& rows);

/// Per target: the earliest epoch with the highest mean.
std::map<std::string, int> argmax_epochs(const std::vector<AggregateRow>& agg);

/// Earliest index of the maximum; throws SpecError on an empty curve.
std::size_t argmax_earliest(const std::vector<double>& curve);

std::string transfer_csv(const std::vector<TransferRow>& rows);
std::vector<TransferRow> parse_transfer_csv(const std::string& text);
std::string aggregate_csv(const std::vector<AggregateRow>& agg);
std::string technique_csv(const std::vector<TechniqueRow>& rows);
std::vector<TechniqueRow> parse_technique_csv(const std::string& text);

/// Minimal CSV table: header names and string cells. Throws FormatError
/// when a required column is missing or a row has the wrong width.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::size_t column(const std::string& name) const;
};
CsvTable parse_csv(const std::string& text, const std::vector<std::string>& required);

// ---- SVG -----------------------------------------------------------------------

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
  std::vector<double> band_lo, band_hi;  // optional, same length as points
  std::optional<double> marker_x;        // triangle marker (e.g. argmax epoch)
};

struct LinePlot {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  std::vector<double> vlines;  // e.g. learning-rate decay epochs
};

/// Fixed 640 x 400 canvas; colours keyed by series name. Empty input still
/// yields axes and a "no data" annotation.
std::string render_svg(const LinePlot& plot);

/// Series colour from a fixed palette, chosen by a hash of the name.
std::string series_color(const std::string& name);

}  // namespace flatsurr
