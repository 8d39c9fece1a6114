#include <algorithm>
#include <cmath>
#include <cstdio>

#include "hesscope/experiment.hpp"
#include "hesscope/serialize.hpp"

namespace hesscope {

using nlohmann::ordered_json;
using json_util::round9;

namespace {

/// printf into a std::string; every number in the SVGs goes through here so bytes are stable.
template <typename... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

/// Viridis sampled at five stops, linearly interpolated.
std::string viridis(double t) {
  static const double stops[5][3] = {
      {68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
  t = std::clamp(t, 0.0, 1.0) * 4.0;
  const int k = std::min(3, static_cast<int>(t));
  const double f = t - k;
  int rgb[3];
  for (int c = 0; c < 3; ++c) rgb[c] = static_cast<int>(std::lround(stops[k][c] + f * (stops[k + 1][c] - stops[k][c])));
  return fmt("#%02x%02x%02x", rgb[0], rgb[1], rgb[2]);
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

ordered_json rounded(const std::vector<double>& v) {
  ordered_json a = ordered_json::array();
  for (double x : v) a.push_back(round9(x));
  return a;
}

ordered_json aggregates_json(const CriteriaReport& r) {
  ordered_json out = ordered_json::object();
  for (const auto& [name, a] : r.aggregates) {
    out[name] = {{"mean", round9(a.mean)}, {"min", round9(a.min)}, {"max", round9(a.max)}};
  }
  return out;
}

void dump_into(const ordered_json& j, int depth, std::string& out) {
  const std::string pad(static_cast<size_t>(2 * (depth + 1)), ' '), close(static_cast<size_t>(2 * depth), ' ');
  if (j.is_object() || j.is_array()) {
    const bool obj = j.is_object();
    if (j.empty()) {
      out += obj ? "{}" : "[]";
      return;
    }
    out += obj ? "{\n" : "[\n";
    bool first = true;
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!first) out += ",\n";
      first = false;
      out += pad;
      if (obj) out += ordered_json(it.key()).dump() + ": ";
      dump_into(*it, depth + 1, out);
    }
    out += "\n" + close + (obj ? "}" : "]");
  } else if (j.is_number_float()) {
    const double x = j.get<double>();
    out += std::isfinite(x) ? fmt("%.9g", x) : "null";
  } else {
    out += j.dump();
  }
}

}  // namespace

std::string dump_json(const ordered_json& j) {
  std::string out;
  dump_into(j, 0, out);
  return out + "\n";
}

std::string heatmap_svg(const LandscapeGrid& grid, const std::string& title) {
  const int side = grid.spec.side();
  const double cell = std::max(4.0, 400.0 / side);
  const double plot = cell * side, left = 60, top = 40, bar_x = left + plot + 30;
  const double width = bar_x + 90, height = top + plot + 50;

  // log10 of the loss, floored so a zero loss still has a color.
  constexpr double kFloor = 1e-12;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (size_t k = 0; k < grid.losses.size(); ++k) {
    if (!grid.finite[k] || !std::isfinite(grid.losses[k])) continue;
    const double v = std::log10(std::max(grid.losses[k], kFloor));
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(lo <= hi)) lo = hi = 0;
  const double span = hi > lo ? hi - lo : 1.0;

  std::string s = fmt("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n",
                      width, height, width, height);
  s += fmt("<rect width=\"%.0f\" height=\"%.0f\" fill=\"white\"/>\n", width, height);
  s += "<text x=\"" + fmt("%.1f", left) + "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" + escape(title) +
       "</text>\n";
  for (int i = 0; i < side; ++i) {
    for (int j = 0; j < side; ++j) {
      const size_t k = static_cast<size_t>(i * side + j);
      const double loss = grid.losses[k];
      const bool finite = grid.finite[k] && std::isfinite(loss);
      const std::string color = finite ? viridis((std::log10(std::max(loss, kFloor)) - lo) / span) : "#bbbbbb";
      // a runs left to right, b bottom to top.
      s += fmt("<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"%s\"/>\n", left + i * cell,
               top + (side - 1 - j) * cell, cell, cell, color.c_str());
    }
  }
  const double cx = left + (grid.spec.steps / 2 + 0.5) * cell, cy = top + (grid.spec.steps / 2 + 0.5) * cell;
  s += fmt("<path d=\"M%.2f %.2fH%.2fM%.2f %.2fV%.2f\" stroke=\"white\" stroke-width=\"1.5\"/>\n", cx - cell, cy,
           cx + cell, cx, cy - cell, cy + cell);
  s += fmt("<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"none\" stroke=\"black\"/>\n", left, top,
           plot, plot);
  const double r = grid.spec.range;
  s += fmt("<text x=\"%.2f\" y=\"%.2f\" font-family=\"sans-serif\" font-size=\"11\">%.4g</text>\n", left, top + plot + 16, -r);
  s += fmt("<text x=\"%.2f\" y=\"%.2f\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">%.4g</text>\n",
           left + plot, top + plot + 16, r);
  s += fmt("<text x=\"%.2f\" y=\"%.2f\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">a</text>\n",
           left + plot / 2, top + plot + 32);
  s += fmt("<text x=\"%.2f\" y=\"%.2f\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">%.4g</text>\n",
           left - 6, top + plot, -r);
  s += fmt("<text x=\"%.2f\" y=\"%.2f\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">%.4g</text>\n",
           left - 6, top + 10, r);
  s += fmt("<text x=\"%.2f\" y=\"%.2f\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">b</text>\n",
           left - 30, top + plot / 2);

  // Color bar, 32 bands.
  const int bands = 32;
  for (int k = 0; k < bands; ++k) {
    s += fmt("<rect x=\"%.2f\" y=\"%.2f\" width=\"16\" height=\"%.2f\" fill=\"%s\"/>\n", bar_x,
             top + plot * (bands - 1 - k) / bands, plot / bands + 0.5, viridis((k + 0.5) / bands).c_str());
  }
  s += fmt("<text x=\"%.2f\" y=\"%.2f\" font-family=\"sans-serif\" font-size=\"11\">%.3g</text>\n", bar_x + 22,
           top + 10, std::pow(10.0, hi));
  s += fmt("<text x=\"%.2f\" y=\"%.2f\" font-family=\"sans-serif\" font-size=\"11\">%.3g</text>\n", bar_x + 22,
           top + plot, std::pow(10.0, lo));
  s += fmt("<text x=\"%.2f\" y=\"%.2f\" font-family=\"sans-serif\" font-size=\"11\">loss</text>\n", bar_x, top - 6);
  s += "</svg>\n";
  return s;
}

std::string density_svg(const SpectralDensity& sd, const std::string& title) {
  const double left = 70, top = 40, pw = 480, ph = 280;
  const double width = left + pw + 30, height = top + ph + 50;
  double peak = 0;
  for (double d : sd.density) peak = std::max(peak, d);
  // Six decades below the peak.
  const double y_hi = peak > 0 ? std::ceil(std::log10(peak)) : 0.0, y_lo = y_hi - 6;
  const double x_lo = sd.grid.empty() ? 0.0 : sd.grid.front(), x_hi = sd.grid.empty() ? 1.0 : sd.grid.back();
  const double x_span = x_hi > x_lo ? x_hi - x_lo : 1.0;
  auto px = [&](double x) { return left + (x - x_lo) / x_span * pw; };
  auto py = [&](double d) {
    const double v = std::clamp(d > 0 ? std::log10(d) : y_lo, y_lo, y_hi);
    return top + (y_hi - v) / (y_hi - y_lo) * ph;
  };

  std::string s = fmt("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n",
                      width, height, width, height);
  s += fmt("<rect width=\"%.0f\" height=\"%.0f\" fill=\"white\"/>\n", width, height);
  s += "<text x=\"" + fmt("%.1f", left) + "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" + escape(title) +
       "</text>\n";
  for (int d = 0; d <= 6; ++d) {
    const double y = top + d * ph / 6;
    s += fmt("<path d=\"M%.2f %.2fH%.2f\" stroke=\"#dddddd\"/>\n", left, y, left + pw);
    s += fmt("<text x=\"%.2f\" y=\"%.2f\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">1e%.0f</text>\n",
             left - 6, y + 4, y_hi - d);
  }
  if (x_lo < 0 && x_hi > 0) {
    s += fmt("<path d=\"M%.2f %.2fV%.2f\" stroke=\"#999999\" stroke-dasharray=\"4 3\"/>\n", px(0), top, top + ph);
  }
  std::string points;
  for (size_t k = 0; k < sd.grid.size(); ++k) {
    points += fmt(k ? " %.2f,%.2f" : "%.2f,%.2f", px(sd.grid[k]), py(sd.density[k]));
  }
  s += "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"" + points + "\"/>\n";
  s += fmt("<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"none\" stroke=\"black\"/>\n", left, top, pw, ph);
  s += fmt("<text x=\"%.2f\" y=\"%.2f\" font-family=\"sans-serif\" font-size=\"11\">%.4g</text>\n", left, top + ph + 16, x_lo);
  s += fmt("<text x=\"%.2f\" y=\"%.2f\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">%.4g</text>\n",
           left + pw, top + ph + 16, x_hi);
  s += fmt("<text x=\"%.2f\" y=\"%.2f\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">eigenvalue</text>\n",
           left + pw / 2, top + ph + 32);
  s += "</svg>\n";
  return s;
}

ordered_json hesd_json(const SpectralDensity& sd, const SlqConfig& cfg, const CriteriaReport& criteria) {
  ordered_json runs = ordered_json::array();
  for (const SlqRun& r : sd.runs) {
    runs.push_back({{"batch", r.batch},
                    {"run", r.run},
                    {"ritz", rounded(r.ritz)},
                    {"weights", rounded(r.weights)},
                    {"orthogonality_loss", round9(r.orthogonality_loss)}});
  }
  ordered_json out;
  out["config"] = {{"lanczos_steps", cfg.lanczos_steps},
                   {"n_hes", cfg.n_hes},
                   {"seed", cfg.seed},
                   {"sigma_factor", cfg.sigma_factor},
                   {"grid_points", cfg.grid_points}};
  out["lambda_min"] = round9(sd.lambda_min);
  out["lambda_max"] = round9(sd.lambda_max);
  out["sigma"] = round9(sd.sigma);
  out["runs"] = runs;
  out["grid"] = rounded(sd.grid);
  out["density"] = rounded(sd.density);
  out["criteria"] = aggregates_json(criteria);
  // Random-init spectra should be close to mirror images of themselves.
  const auto it = criteria.aggregates.find("k_h1");
  if (it != criteria.aggregates.end()) {
    const double k = it->second.mean;
    out["symmetry_check"] = {{"k_h1_mean", round9(k)}, {"band", {0.85, 1.2}}, {"within_band", k >= 0.85 && k <= 1.2}};
  }
  return out;
}

ordered_json criteria_json(const CriteriaReport& report) {
  const CriteriaConfig& c = report.config;
  ordered_json out;
  out["config"] = {{"exponents", c.exponents},
                   {"zero_band", c.zero_band},
                   {"exponent_placement", to_string(c.placement)},
                   {"n_hes", c.n_hes},
                   {"batch_count", c.batch_count},
                   {"batch_size", c.batch_size},
                   {"master_seed", c.master_seed}};
  out["samples"] = report.samples.size();
  out["aggregates"] = aggregates_json(report);
  out["accuracy_on_batches"] =
      report.accuracy_on_batches ? ordered_json(round9(*report.accuracy_on_batches)) : ordered_json(nullptr);
  return out;
}

ordered_json explosion_json(const ExplosionReport& r, const LandscapeGrid& grid) {
  ordered_json out;
  out["exploded"] = r.exploded;
  out["max_finite_ratio"] = round9(r.max_finite_ratio);
  out["nonfinite_count"] = r.nonfinite_count;
  out["threshold"] = r.threshold;
  out["center_loss"] = round9(grid.center_loss);
  out["mode"] = to_string(grid.spec.mode);
  out["range"] = grid.spec.range;
  out["steps"] = grid.spec.steps;
  out["source"] = to_string(grid.source);
  out["normalization"] = to_string(grid.normalization);
  out["freeze_bn"] = grid.freeze_bn;
  return out;
}

}  // namespace hesscope
