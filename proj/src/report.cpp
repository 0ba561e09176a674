#include "flatsurr/bench/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "flatsurr/core/error.hpp"
#include "flatsurr/core/graph.hpp"

namespace flatsurr {

std::string fmt_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

namespace {

double parse_double(const std::string& s) {
  double v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw FormatError("not a number: '" + s + "'");
  return v;
}

long long parse_int(const std::string& s) {
  long long v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw FormatError("not an integer: '" + s + "'");
  return v;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::pair<double, double> mean_sd(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

std::vector<double> seed_means(const std::vector<TransferRow>& rows, int epoch) {
  std::map<std::uint64_t, std::pair<double, int>> acc;
  for (const auto& r : rows)
    if (r.epoch == epoch) {
      acc[r.seed].first += r.success_rate;
      acc[r.seed].second += 1;
    }
  std::vector<double> out;
  for (const auto& [seed, s] : acc) out.push_back(s.first / s.second);
  return out;
}

std::vector<AggregateRow> aggregate_transfer(const std::vector<TransferRow>& rows) {
  std::map<std::pair<int, std::string>, std::vector<double>> by_target;
  std::set<int> epochs;
  for (const auto& r : rows) {
    if (r.target == kMeanTarget) throw SpecError("target name 'mean' is reserved");
    by_target[{r.epoch, r.target}].push_back(r.success_rate);
    epochs.insert(r.epoch);
  }
  std::vector<AggregateRow> out;
  for (int e : epochs) {
    for (auto it = by_target.lower_bound({e, std::string()}); it != by_target.end() && it->first.first == e; ++it) {
      const auto [m, sd] = mean_sd(it->second);
      out.push_back(AggregateRow{e, it->first.second, static_cast<int>(it->second.size()), m, sd});
    }
    const auto per_seed = seed_means(rows, e);
    const auto [m, sd] = mean_sd(per_seed);
    out.push_back(AggregateRow{e, kMeanTarget, static_cast<int>(per_seed.size()), m, sd});
  }
  return out;
}

std::map<std::string, int> argmax_epochs(const std::vector<AggregateRow>& agg) {
  std::map<std::string, std::pair<int, double>> best;
  for (const auto& a : agg) {
    auto it = best.find(a.target);
    if (it == best.end() || a.mean > it->second.second ||
        (a.mean == it->second.second && a.epoch < it->second.first))
      best[a.target] = {a.epoch, a.mean};
  }
  std::map<std::string, int> out;
  for (const auto& [t, b] : best) out[t] = b.first;
  return out;
}

std::size_t argmax_earliest(const std::vector<double>& curve) {
  if (curve.empty()) throw SpecError("argmax of an empty curve");
  std::size_t best = 0;
  for (std::size_t i = 1; i < curve.size(); ++i)
    if (curve[i] > curve[best]) best = i;
  return best;
}

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw FormatError("CSV is missing column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

CsvTable parse_csv(const std::string& text, const std::vector<std::string>& required) {
  CsvTable t;
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw FormatError("CSV is empty");
  t.header = split_line(line);
  for (const auto& r : required) t.column(r);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (cells.size() != t.header.size())
      throw FormatError("CSV row has " + std::to_string(cells.size()) + " cells, header has " +
                        std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

std::string transfer_csv(const std::vector<TransferRow>& rows) {
  std::string s = "epoch,target,seed,success_rate\n";
  for (const auto& r : rows)
    s += std::to_string(r.epoch) + ',' + r.target + ',' + std::to_string(r.seed) + ',' + fmt_double(r.success_rate) + '\n';
  return s;
}

std::vector<TransferRow> parse_transfer_csv(const std::string& text) {
  const auto t = parse_csv(text, {"epoch", "target", "seed", "success_rate"});
  const auto ce = t.column("epoch"), ct = t.column("target"), cs = t.column("seed"), cr = t.column("success_rate");
  std::vector<TransferRow> out;
  for (const auto& r : t.rows)
    out.push_back(TransferRow{static_cast<int>(parse_int(r[ce])), r[ct], static_cast<std::uint64_t>(parse_int(r[cs])),
                              parse_double(r[cr])});
  return out;
}

std::string aggregate_csv(const std::vector<AggregateRow>& agg) {
  std::string s = "epoch,target,n,mean,sd,lo,hi\n";
  for (const auto& a : agg)
    s += std::to_string(a.epoch) + ',' + a.target + ',' + std::to_string(a.n) + ',' + fmt_double(a.mean) + ',' +
         fmt_double(a.sd) + ',' + fmt_double(a.lo()) + ',' + fmt_double(a.hi()) + '\n';
  return s;
}

std::string technique_csv(const std::vector<TechniqueRow>& rows) {
  std::string s = "technique,base,epsilon,success_rate\n";
  for (const auto& r : rows)
    s += r.technique + ',' + r.base + ',' + fmt_double(r.epsilon) + ',' + fmt_double(r.success_rate) + '\n';
  return s;
}

std::vector<TechniqueRow> parse_technique_csv(const std::string& text) {
  const auto t = parse_csv(text, {"technique", "base", "epsilon", "success_rate"});
  const auto a = t.column("technique"), b = t.column("base"), e = t.column("epsilon"), r = t.column("success_rate");
  std::vector<TechniqueRow> out;
  for (const auto& row : t.rows) out.push_back(TechniqueRow{row[a], row[b], parse_double(row[e]), parse_double(row[r])});
  return out;
}

// ---- SVG -----------------------------------------------------------------------

namespace {

constexpr double kW = 640, kH = 400;
constexpr double kLeft = 64, kRight = 150, kTop = 36, kBottom = 52;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace

std::string series_color(const std::string& name) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  const auto h = fnv1a64(name.data(), name.size());
  return palette[h % std::size(palette)];
}

std::string render_svg(const LinePlot& plot) {
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" viewBox=\"0 0 " << kW
    << ' ' << kH << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"" << kW << "\" height=\"" << kH << "\" fill=\"white\"/>\n";
  o << "<text x=\"" << num(kW / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape(plot.title)
    << "</text>\n";

  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool any = false;
  for (const auto& s : plot.series)
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      const auto [x, y] = s.points[i];
      double lo = y, hi = y;
      if (s.band_lo.size() == s.points.size()) lo = std::min(lo, s.band_lo[i]), hi = std::max(hi, s.band_hi[i]);
      if (!any) x0 = x1 = x, y0 = lo, y1 = hi, any = true;
      x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, lo), y1 = std::max(y1, hi);
    }
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kTop + ph - (y - y0) / (y1 - y0) * ph; };

  // Axes and ticks.
  o << "<g stroke=\"black\" fill=\"none\">\n";
  o << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(kTop + ph) << "\" x2=\"" << num(kLeft + pw) << "\" y2=\""
    << num(kTop + ph) << "\"/>\n";
  o << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(kTop) << "\" x2=\"" << num(kLeft) << "\" y2=\"" << num(kTop + ph)
    << "\"/>\n</g>\n";
  for (int k = 0; k <= 5; ++k) {
    const double xv = x0 + (x1 - x0) * k / 5, yv = y0 + (y1 - y0) * k / 5;
    o << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(kTop + ph + 16) << "\" text-anchor=\"middle\">"
      << tick_label(xv) << "</text>\n";
    o << "<text x=\"" << num(kLeft - 6) << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\">" << tick_label(yv)
      << "</text>\n";
  }
  o << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"" << num(kH - 12) << "\" text-anchor=\"middle\">"
    << escape(plot.x_label) << "</text>\n";
  o << "<text x=\"16\" y=\"" << num(kTop + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << num(kTop + ph / 2) << ")\">" << escape(plot.y_label) << "</text>\n";

  if (!any) {
    o << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"" << num(kTop + ph / 2)
      << "\" text-anchor=\"middle\" fill=\"gray\" font-size=\"16\">no data</text>\n";
    o << "</svg>\n";
    return o.str();
  }

  for (double v : plot.vlines)
    if (v >= x0 && v <= x1)
      o << "<line x1=\"" << num(px(v)) << "\" y1=\"" << num(kTop) << "\" x2=\"" << num(px(v)) << "\" y2=\""
        << num(kTop + ph) << "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";

  int legend = 0;
  for (const auto& s : plot.series) {
    const std::string c = series_color(s.name);
    if (s.band_lo.size() == s.points.size() && !s.points.empty()) {
      o << "<path fill=\"" << c << "\" fill-opacity=\"0.15\" stroke=\"none\" d=\"";
      for (std::size_t i = 0; i < s.points.size(); ++i)
        o << (i ? " L" : "M") << num(px(s.points[i].first)) << ' ' << num(py(s.band_hi[i]));
      for (std::size_t i = s.points.size(); i-- > 0;)
        o << " L" << num(px(s.points[i].first)) << ' ' << num(py(s.band_lo[i]));
      o << " Z\"/>\n";
    }
    if (!s.points.empty()) {
      o << "<path fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" d=\"";
      for (std::size_t i = 0; i < s.points.size(); ++i)
        o << (i ? " L" : "M") << num(px(s.points[i].first)) << ' ' << num(py(s.points[i].second));
      o << "\"/>\n";
    }
    if (s.marker_x) {
      for (const auto& [x, y] : s.points)
        if (x == *s.marker_x) {
          const double cx = px(x), cy = py(y);
          o << "<path fill=\"" << c << "\" d=\"M" << num(cx) << ' ' << num(cy - 7) << " L" << num(cx - 5) << ' '
            << num(cy - 15) << " L" << num(cx + 5) << ' ' << num(cy - 15) << " Z\"/>\n";
          break;
        }
    }
    const double ly = kTop + 8 + 16 * legend++;
    o << "<line x1=\"" << num(kW - kRight + 12) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(kW - kRight + 30)
      << "\" y2=\"" << num(ly) << "\" stroke=\"" << c << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << num(kW - kRight + 34) << "\" y=\"" << num(ly + 4) << "\">" << escape(s.name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace flatsurr
