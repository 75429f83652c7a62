#include "pneumo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pneumo/errors.hpp"

namespace pneumo {

ConfusionMatrix confusion_from_predictions(const std::vector<PredPair>& preds,
                                           double threshold) {
    ConfusionMatrix cm;
    for (const auto& [p, y] : preds) {
        if (!(p >= 0.0) || !(p <= 1.0))
            throw ValueError("probability out of [0, 1]");
        if (y != 0 && y != 1) throw ValueError("label must be 0 or 1");
        const bool pred = p >= threshold;
        if (y == 1)
            pred ? ++cm.tp : ++cm.fn;
        else
            pred ? ++cm.fp : ++cm.tn;
    }
    return cm;
}

MetricsReport compute_metrics(const ConfusionMatrix& cm) {
    if (cm.tn < 0 || cm.fp < 0 || cm.fn < 0 || cm.tp < 0)
        throw ValueError("confusion counts must be non-negative");
    if (cm.total() == 0) throw ValueError("empty confusion matrix");

    MetricsReport r;
    r.accuracy = static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());

    if (cm.tp + cm.fp == 0) {
        r.precision_degenerate = true;
    } else {
        r.precision = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fp);
    }
    if (cm.tp + cm.fn == 0) {
        r.recall_degenerate = true;
    } else {
        r.recall = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
    }
    if (r.precision + r.recall == 0.0) {
        r.f1_degenerate = true;
    } else {
        r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
    }
    return r;
}

RocCurve roc_curve(const std::vector<PredPair>& preds) {
    long long pos = 0, neg = 0;
    for (const auto& [p, y] : preds) {
        if (!(p >= 0.0) || !(p <= 1.0))
            throw ValueError("probability out of [0, 1]");
        if (y != 0 && y != 1) throw ValueError("label must be 0 or 1");
        (y == 1 ? pos : neg) += 1;
    }
    if (pos == 0 || neg == 0)
        throw DataError("ROC needs at least one positive and one negative label");

    std::vector<PredPair> sorted = preds;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const PredPair& a, const PredPair& b) {
                         return a.first > b.first;
                     });

    RocCurve roc;
    roc.points.push_back({0.0, 0.0});
    long long tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < sorted.size()) {
        // Consume the whole group sharing one score, then emit one point.
        const double score = sorted[i].first;
        while (i < sorted.size() && sorted[i].first == score) {
            (sorted[i].second == 1 ? tp : fp) += 1;
            ++i;
        }
        roc.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                              static_cast<double>(tp) / static_cast<double>(pos)});
    }

    double auc = 0.0;
    for (std::size_t k = 1; k < roc.points.size(); ++k) {
        const auto& a = roc.points[k - 1];
        const auto& b = roc.points[k];
        auc += (b.fpr - a.fpr) * (a.tpr + b.tpr) * 0.5;
    }
    roc.auc = auc;
    return roc;
}

namespace {

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    return out;
}

void finish(std::ofstream& out, const std::string& path) {
    out.flush();
    if (!out) throw IoError("failed writing " + path);
}

// ---- minimal hand-emitted SVG charts ------------------------------------

struct Series {
    std::string name;
    std::string color;
    std::vector<double> x;
    std::vector<double> y;
};

constexpr int kChartW = 800;
constexpr int kChartH = 400;
constexpr int kMarginL = 70, kMarginR = 30, kMarginT = 40, kMarginB = 50;

std::string fmt_tick(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

void emit_chart(std::ostringstream& svg, int y_offset, const std::string& title,
                const std::vector<Series>& series) {
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const Series& s : series) {
        for (double v : s.x) { xmin = std::min(xmin, v); xmax = std::max(xmax, v); }
        for (double v : s.y) { ymin = std::min(ymin, v); ymax = std::max(ymax, v); }
    }
    if (xmax <= xmin) xmax = xmin + 1.0;
    if (ymax <= ymin) ymax = ymin + 1.0;
    const double ypad = (ymax - ymin) * 0.05;
    ymin -= ypad;
    ymax += ypad;

    const int plot_w = kChartW - kMarginL - kMarginR;
    const int plot_h = kChartH - kMarginT - kMarginB;
    const auto px = [&](double v) {
        return kMarginL + (v - xmin) / (xmax - xmin) * plot_w;
    };
    const auto py = [&](double v) {
        return y_offset + kMarginT + (1.0 - (v - ymin) / (ymax - ymin)) * plot_h;
    };

    svg << "<text x=\"" << kChartW / 2 << "\" y=\"" << y_offset + 24
        << "\" text-anchor=\"middle\" font-size=\"16\" font-family=\"sans-serif\">"
        << title << "</text>\n";
    // axes
    svg << "<line x1=\"" << kMarginL << "\" y1=\"" << y_offset + kMarginT
        << "\" x2=\"" << kMarginL << "\" y2=\"" << y_offset + kMarginT + plot_h
        << "\" stroke=\"#444\"/>\n";
    svg << "<line x1=\"" << kMarginL << "\" y1=\"" << y_offset + kMarginT + plot_h
        << "\" x2=\"" << kMarginL + plot_w << "\" y2=\""
        << y_offset + kMarginT + plot_h << "\" stroke=\"#444\"/>\n";
    // ticks: 5 per axis
    for (int t = 0; t <= 4; ++t) {
        const double xv = xmin + (xmax - xmin) * t / 4.0;
        const double yv = ymin + (ymax - ymin) * t / 4.0;
        svg << "<text x=\"" << px(xv) << "\" y=\""
            << y_offset + kMarginT + plot_h + 18
            << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">"
            << fmt_tick(xv) << "</text>\n";
        svg << "<text x=\"" << kMarginL - 8 << "\" y=\"" << py(yv) + 4
            << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">"
            << fmt_tick(yv) << "</text>\n";
    }
    // series
    int legend_x = kMarginL + 10;
    for (const Series& s : series) {
        svg << "<polyline fill=\"none\" stroke=\"" << s.color
            << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (i) svg << ' ';
            svg << px(s.x[i]) << ',' << py(s.y[i]);
        }
        svg << "\"/>\n";
        svg << "<text x=\"" << legend_x << "\" y=\"" << y_offset + kMarginT - 6
            << "\" font-size=\"12\" font-family=\"sans-serif\" fill=\"" << s.color
            << "\">" << s.name << "</text>\n";
        legend_x += static_cast<int>(s.name.size()) * 8 + 30;
    }
}

} // namespace

void write_history_csv(const std::vector<EpochLog>& logs, const std::string& path) {
    if (logs.empty()) throw ValueError("history requires at least one epoch");
    auto out = open_out(path);
    out << "epoch,train_loss,train_acc,val_loss,val_acc,lr\n";
    for (const EpochLog& log : logs) {
        out << log.epoch << ',' << fmt6(log.train_loss) << ','
            << fmt6(log.train_accuracy) << ',' << fmt6(log.val_loss) << ','
            << fmt6(log.val_accuracy) << ',' << fmt6(log.learning_rate) << '\n';
    }
    finish(out, path);
}

void write_metrics_csv(const ConfusionMatrix& cm, const MetricsReport& report,
                       const RocCurve* roc, const std::string& path) {
    auto out = open_out(path);
    out << "key,value\n";
    out << "tn," << cm.tn << "\n";
    out << "fp," << cm.fp << "\n";
    out << "fn," << cm.fn << "\n";
    out << "tp," << cm.tp << "\n";
    out << "accuracy," << fmt6(report.accuracy) << "\n";
    out << "precision," << fmt6(report.precision) << "\n";
    out << "recall," << fmt6(report.recall) << "\n";
    out << "f1," << fmt6(report.f1) << "\n";
    out << "precision_degenerate," << (report.precision_degenerate ? 1 : 0) << "\n";
    out << "recall_degenerate," << (report.recall_degenerate ? 1 : 0) << "\n";
    out << "f1_degenerate," << (report.f1_degenerate ? 1 : 0) << "\n";
    if (roc != nullptr) out << "auc," << fmt6(roc->auc) << "\n";
    finish(out, path);
}

void write_roc_csv(const RocCurve& roc, const std::string& path) {
    auto out = open_out(path);
    out << "fpr,tpr\n";
    for (const RocPoint& p : roc.points)
        out << fmt6(p.fpr) << ',' << fmt6(p.tpr) << '\n';
    finish(out, path);
}

std::string render_curves_svg(const std::vector<EpochLog>& logs,
                              const RocCurve* roc) {
    std::vector<std::pair<std::string, std::vector<Series>>> charts;
    if (!logs.empty()) {
        std::vector<double> epochs, tl, vl, ta, va;
        for (const EpochLog& log : logs) {
            epochs.push_back(log.epoch);
            tl.push_back(log.train_loss);
            vl.push_back(log.val_loss);
            ta.push_back(log.train_accuracy);
            va.push_back(log.val_accuracy);
        }
        charts.push_back({"Loss by epoch",
                          {{"train_loss", "#c0392b", epochs, tl},
                           {"val_loss", "#2980b9", epochs, vl}}});
        charts.push_back({"Accuracy by epoch",
                          {{"train_acc", "#c0392b", epochs, ta},
                           {"val_acc", "#2980b9", epochs, va}}});
    }
    if (roc != nullptr) {
        std::vector<double> fpr, tpr;
        for (const RocPoint& p : roc->points) {
            fpr.push_back(p.fpr);
            tpr.push_back(p.tpr);
        }
        charts.push_back({"ROC (AUC " + fmt6(roc->auc) + ")",
                          {{"roc", "#27ae60", fpr, tpr}}});
    }
    if (charts.empty())
        throw ValueError("nothing to draw: no epochs and no ROC curve");

    const int total_h = kChartH * static_cast<int>(charts.size());
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kChartW
        << "\" height=\"" << total_h << "\" viewBox=\"0 0 " << kChartW << ' '
        << total_h << "\">\n";
    svg << "<rect width=\"" << kChartW << "\" height=\"" << total_h
        << "\" fill=\"#ffffff\"/>\n";
    int y = 0;
    for (const auto& [title, series] : charts) {
        emit_chart(svg, y, title, series);
        y += kChartH;
    }
    svg << "</svg>\n";
    return svg.str();
}

void render_report(const std::vector<EpochLog>* logs, const ConfusionMatrix* cm,
                   const MetricsReport* report, const RocCurve* roc,
                   const std::string& out_dir) {
    if ((logs == nullptr || logs->empty()) && cm == nullptr && roc == nullptr)
        throw ValueError("render_report needs epochs, a confusion matrix, or a curve");
    if ((cm == nullptr) != (report == nullptr))
        throw ValueError("confusion matrix and metrics report go together");

    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create directory " + out_dir);

    if (logs != nullptr && !logs->empty())
        write_history_csv(*logs, (fs::path(out_dir) / "history.csv").string());
    if (cm != nullptr)
        write_metrics_csv(*cm, *report, roc,
                          (fs::path(out_dir) / "metrics.csv").string());
    if (roc != nullptr)
        write_roc_csv(*roc, (fs::path(out_dir) / "roc.csv").string());

    // Charts only exist when there is a curve to draw; a bare confusion
    // matrix still gets its metrics.csv above.
    if ((logs != nullptr && !logs->empty()) || roc != nullptr) {
        const std::vector<EpochLog> empty;
        const std::string svg =
            render_curves_svg(logs != nullptr ? *logs : empty, roc);
        const std::string svg_path = (fs::path(out_dir) / "curves.svg").string();
        auto out = open_out(svg_path);
        out << svg;
        finish(out, svg_path);
    }
}

} // namespace pneumo
