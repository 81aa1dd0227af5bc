#include "ktg/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "ktg/error.hpp"

namespace ktg {

std::string design_label(const GraphSpec& g) {
    std::set<LossDesign> designs;
    for (const auto& e : g.edges) {
        if (!e.is_label_edge() && e.gate != GateKind::Cutoff) designs.insert(e.loss);
    }
    if (designs.empty()) return "Independent";
    if (designs.size() == 1) return std::string(display_name(*designs.begin()));
    return "Mixed";
}

namespace {

std::vector<const TrialRecord*> completed(const std::vector<TrialRecord>& trials) {
    std::vector<const TrialRecord*> out;
    for (const auto& r : trials) {
        if (r.status == TrialStatus::Completed && !r.checkpoints.empty()) out.push_back(&r);
    }
    if (out.empty()) throw Error(ErrorKind::NoResult, "no completed trials to plot");
    return out;
}

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(precision) << v;
    return s.str();
}

std::string escape(const std::string& text) {
    std::string out;
    for (char c : text) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

// Round step of roughly span/5: 1, 2 or 5 times a power of ten.
double tick_step(double span) {
    if (!(span > 0.0)) return 1.0;
    const double raw = span / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    const double r = raw / mag;
    return (r < 1.5 ? 1.0 : r < 3.5 ? 2.0 : r < 7.5 ? 5.0 : 10.0) * mag;
}

constexpr std::array<const char*, 8> kPalette{"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                              "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"};

}  // namespace

std::vector<SeriesPoint> accuracy_by_node_count(const std::vector<TrialRecord>& trials) {
    std::map<std::pair<std::string, int>, std::pair<double, int>> acc;
    for (const auto* r : completed(trials)) {
        auto& slot = acc[{design_label(r->graph), r->graph.num_nodes}];
        slot.first += r->final_ensemble_accuracy();
        ++slot.second;
    }
    std::vector<SeriesPoint> out;
    for (const auto& [key, v] : acc) out.push_back({key.first, static_cast<double>(key.second), v.first / v.second});
    return out;
}

std::vector<SeriesPoint> accuracy_by_parameters(const std::vector<TrialRecord>& trials) {
    std::vector<SeriesPoint> out;
    for (const auto* r : completed(trials)) {
        out.push_back({design_label(r->graph), static_cast<double>(r->parameter_count), r->final_ensemble_accuracy()});
    }
    std::stable_sort(out.begin(), out.end(), [](const SeriesPoint& a, const SeriesPoint& b) {
        return std::tie(a.series, a.x, a.y) < std::tie(b.series, b.x, b.y);
    });
    return out;
}

std::string points_csv(const std::vector<SeriesPoint>& points, const std::string& x_name, const std::string& y_name) {
    std::ostringstream s;
    s << "series," << x_name << "," << y_name << "\n";
    for (const auto& p : points) {
        std::string name = p.series;
        if (name.find_first_of(",\"") != std::string::npos) {
            std::string quoted = "\"";
            for (char c : name) quoted += c == '"' ? std::string("\"\"") : std::string(1, c);
            name = quoted + "\"";
        }
        s << name << "," << fmt(p.x, std::floor(p.x) == p.x ? 0 : 4) << "," << fmt(p.y, 6) << "\n";
    }
    return s.str();
}

std::string render_svg(const std::vector<SeriesPoint>& points, const ChartStyle& style) {
    if (points.empty()) throw Error(ErrorKind::NoResult, "nothing to plot");
    constexpr double W = 640, H = 420, L = 70, R = 190, T = 40, B = 55;
    double x0 = points.front().x, x1 = x0, y0 = points.front().y, y1 = y0;
    for (const auto& p : points) {
        x0 = std::min(x0, p.x);
        x1 = std::max(x1, p.x);
        y0 = std::min(y0, p.y);
        y1 = std::max(y1, p.y);
    }
    if (x1 == x0) { x0 -= 1; x1 += 1; }
    if (y1 == y0) { y0 -= 0.05; y1 += 0.05; }
    const double xs = tick_step(x1 - x0), ys = tick_step(y1 - y0);
    x0 = std::floor(x0 / xs) * xs;
    x1 = std::ceil(x1 / xs) * xs;
    y0 = std::floor(y0 / ys) * ys;
    y1 = std::ceil(y1 / ys) * ys;
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << " " << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << fmt(W / 2, 1) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(style.title)
      << "</text>\n";
    s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    const int xdigits = xs >= 1 ? 0 : 2;
    for (double x = x0; x <= x1 + xs / 2; x += xs) {
        s << "<line x1=\"" << fmt(px(x), 1) << "\" y1=\"" << H - B << "\" x2=\"" << fmt(px(x), 1) << "\" y2=\""
          << H - B + 5 << "\" stroke=\"black\"/><text x=\"" << fmt(px(x), 1) << "\" y=\"" << H - B + 18
          << "\" text-anchor=\"middle\">" << fmt(x, xdigits) << "</text>\n";
    }
    for (double y = y0; y <= y1 + ys / 2; y += ys) {
        s << "<line x1=\"" << L - 5 << "\" y1=\"" << fmt(py(y), 1) << "\" x2=\"" << W - R << "\" y2=\""
          << fmt(py(y), 1) << "\" stroke=\"#dddddd\"/><text x=\"" << L - 8 << "\" y=\"" << fmt(py(y) + 4, 1)
          << "\" text-anchor=\"end\">" << fmt(y, 3) << "</text>\n";
    }
    s << "<text x=\"" << fmt((L + W - R) / 2, 1) << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
      << escape(style.x_label) << "</text>\n";
    s << "<text transform=\"translate(18," << fmt((T + H - B) / 2, 1) << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(style.y_label) << "</text>\n";

    std::map<std::string, std::vector<SeriesPoint>> series;
    for (const auto& p : points) series[p.series].push_back(p);
    int k = 0;
    for (auto& [name, pts] : series) {
        const char* color = kPalette[static_cast<std::size_t>(k) % kPalette.size()];
        std::stable_sort(pts.begin(), pts.end(), [](const SeriesPoint& a, const SeriesPoint& b) { return a.x < b.x; });
        if (style.lines && pts.size() > 1) {
            s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
            for (std::size_t i = 0; i < pts.size(); ++i) {
                s << (i ? " " : "") << fmt(px(pts[i].x), 1) << "," << fmt(py(pts[i].y), 1);
            }
            s << "\"/>\n";
        }
        for (const auto& p : pts) {
            s << "<circle cx=\"" << fmt(px(p.x), 1) << "\" cy=\"" << fmt(py(p.y), 1) << "\" r=\"3.5\" fill=\"" << color
              << "\"/>\n";
        }
        const double ly = T + 10 + 18 * k;
        s << "<rect x=\"" << W - R + 15 << "\" y=\"" << fmt(ly - 8, 1) << "\" width=\"12\" height=\"12\" fill=\""
          << color << "\"/><text x=\"" << W - R + 32 << "\" y=\"" << fmt(ly + 2, 1) << "\">" << escape(name)
          << "</text>\n";
        ++k;
    }
    s << "</svg>\n";
    return s.str();
}

}  // namespace ktg
