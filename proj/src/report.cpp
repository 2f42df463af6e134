#include "latemu/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace latemu {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::string(buf);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

}  // namespace

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows,
                       const std::string& config_hash) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("report: cannot write '" + path + "'");
    os << "# config_hash=" << config_hash << "\n";
    os << "emulator,compression,field,lead_time,vrmse,ps_low,ps_mid,ps_high,skill,spread,ssr\n";
    for (const auto& r : rows) {
        os << r.emulator << ',' << r.compression << ',' << r.field << ',' << r.lead << ','
           << fmt(r.vrmse) << ',' << fmt(r.ps_low) << ',' << fmt(r.ps_mid) << ','
           << fmt(r.ps_high) << ',';
        if (r.has_ensemble) {
            os << fmt(r.skill) << ',' << fmt(r.spread) << ',';
            os << (r.has_ssr ? fmt(r.ssr) : std::string());
        } else {
            os << ",,";
        }
        os << "\n";
    }
    if (!os) throw IoError("report: write failed for '" + path + "'");
}

std::vector<MetricRow> read_metrics_csv(const std::string& path, std::string* config_hash) {
    std::ifstream is(path);
    if (!is) throw IoError("report: cannot open '" + path + "'");
    std::string line;
    std::vector<MetricRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line.rfind("# config_hash=", 0) == 0) {
            if (config_hash != nullptr) *config_hash = line.substr(14);
            continue;
        }
        if (line.rfind("emulator,", 0) == 0) continue;
        auto cells = split_csv_line(line);
        if (cells.size() < 11) throw IoError("report: malformed row in '" + path + "'");
        MetricRow r;
        r.emulator = cells[0];
        r.compression = cells[1];
        r.field = cells[2];
        r.lead = cells[3];
        r.vrmse = std::stod(cells[4]);
        r.ps_low = std::stod(cells[5]);
        r.ps_mid = std::stod(cells[6]);
        r.ps_high = std::stod(cells[7]);
        if (!cells[8].empty()) {
            r.has_ensemble = true;
            r.skill = std::stod(cells[8]);
            r.spread = std::stod(cells[9]);
            if (!cells[10].empty()) {
                r.has_ssr = true;
                r.ssr = std::stod(cells[10]);
            }
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

namespace {

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

struct Series {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

void write_one_svg(const std::string& path, const std::string& title,
                   const std::vector<Series>& series, const std::string& config_hash) {
    const double width = 640, height = 420;
    const double ml = 60, mr = 180, mt = 40, mb = 50;
    double xmin = 1e300, xmax = -1e300, ymin = 0.0, ymax = -1e300;
    for (const auto& s : series) {
        for (const auto& [x, y] : s.points) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymax = std::max(ymax, y);
        }
    }
    if (series.empty() || xmax <= xmin) {
        xmin = 0;
        xmax = 1;
    }
    if (ymax <= ymin) ymax = 1.0;
    ymax *= 1.05;
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (width - ml - mr); };
    auto py = [&](double y) { return height - mb - (y - ymin) / (ymax - ymin) * (height - mt - mb); };

    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("report: cannot write '" + path + "'");
    char buf[256];
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\">\n";
    os << "<!-- config_hash=" << config_hash << " -->\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << ml << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\">" << title
       << "</text>\n";
    // axes
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", ml,
                  height - mb, width - mr, height - mb);
    os << buf;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", ml, mt, ml,
                  height - mb);
    os << buf;
    for (int k = 0; k <= 4; ++k) {
        const double yv = ymin + (ymax - ymin) * k / 4.0;
        std::snprintf(buf, sizeof(buf),
                      "<text x=\"%g\" y=\"%g\" font-family=\"sans-serif\" font-size=\"11\" "
                      "text-anchor=\"end\">%.3g</text>\n",
                      ml - 6, py(yv) + 4, yv);
        os << buf;
        const double xv = xmin + (xmax - xmin) * k / 4.0;
        std::snprintf(buf, sizeof(buf),
                      "<text x=\"%g\" y=\"%g\" font-family=\"sans-serif\" font-size=\"11\" "
                      "text-anchor=\"middle\">%.3g</text>\n",
                      px(xv), height - mb + 18, xv);
        os << buf;
    }
    os << "<text x=\"" << (ml + (width - ml - mr) / 2)
       << "\" y=\"" << height - 12
       << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">lead time "
          "(frames)</text>\n";

    int idx = 0;
    for (const auto& s : series) {
        const char* color = kPalette[idx % 10];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [x, y] : s.points) {
            std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", px(x), py(y));
            os << buf;
        }
        os << "\"/>\n";
        std::snprintf(buf, sizeof(buf),
                      "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"%s\" "
                      "stroke-width=\"3\"/>\n",
                      width - mr + 10, mt + 14.0 * idx + 8, width - mr + 30, mt + 14.0 * idx + 8,
                      color);
        os << buf;
        std::snprintf(buf, sizeof(buf),
                      "<text x=\"%g\" y=\"%g\" font-family=\"sans-serif\" font-size=\"11\">%s"
                      "</text>\n",
                      width - mr + 36, mt + 14.0 * idx + 12, s.label.c_str());
        os << buf;
        ++idx;
    }
    os << "</svg>\n";
}

}  // namespace

void write_metric_svgs(const std::string& dir, const std::vector<MetricRow>& rows,
                       const std::string& config_hash) {
    struct MetricDef {
        const char* name;
        double MetricRow::*member;
        bool ensemble_only;
    };
    const MetricDef defs[] = {{"vrmse", &MetricRow::vrmse, false},
                              {"ps_low", &MetricRow::ps_low, false},
                              {"ps_mid", &MetricRow::ps_mid, false},
                              {"ps_high", &MetricRow::ps_high, false},
                              {"ssr", &MetricRow::ssr, true}};
    for (const auto& def : defs) {
        std::map<std::string, Series> by_series;  // ordered => deterministic
        for (const auto& r : rows) {
            if (r.field != "mean") continue;
            if (def.ensemble_only && !r.has_ssr) continue;
            if (r.lead.find(':') != std::string::npos) continue;  // horizon rows
            const std::string key = r.emulator + " /" + r.compression;
            auto& s = by_series[key];
            s.label = key;
            s.points.emplace_back(std::stod(r.lead), r.*(def.member));
        }
        std::vector<Series> series;
        for (auto& [k, s] : by_series) {
            std::sort(s.points.begin(), s.points.end());
            series.push_back(std::move(s));
        }
        write_one_svg(dir + "/" + def.name + ".svg", def.name, series, config_hash);
    }
}

}  // namespace latemu
