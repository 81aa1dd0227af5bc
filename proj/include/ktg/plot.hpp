#pragma once

#include <string>
#include <vector>

#include "ktg/graph.hpp"
#include "ktg/training.hpp"

namespace ktg {

/// "Independent" when every node edge is Cutoff, the shared loss design name
/// when all active node edges agree, "Mixed" otherwise.
std::string design_label(const GraphSpec& g);

struct SeriesPoint {
    std::string series;
    double x = 0.0;
    double y = 0.0;
};

/// Mean final ensemble accuracy per (design, node count), completed trials only.
std::vector<SeriesPoint> accuracy_by_node_count(const std::vector<TrialRecord>& trials);
/// One point per completed trial: (total parameters, final ensemble accuracy).
std::vector<SeriesPoint> accuracy_by_parameters(const std::vector<TrialRecord>& trials);

std::string points_csv(const std::vector<SeriesPoint>& points, const std::string& x_name, const std::string& y_name);

struct ChartStyle {
    std::string title;
    std::string x_label;
    std::string y_label;
    bool lines = true;  // false: scatter
};

/// Self-contained SVG; output depends only on the points.
std::string render_svg(const std::vector<SeriesPoint>& points, const ChartStyle& style);

}  // namespace ktg
