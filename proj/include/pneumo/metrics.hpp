#ifndef PNEUMO_METRICS_HPP
#define PNEUMO_METRICS_HPP

#include <string>
#include <utility>
#include <vector>

#include "pneumo/train.hpp"

namespace pneumo {

// (probability, true label) pairs; predicted positive iff p >= threshold.
using PredPair = std::pair<double, int>;

struct ConfusionMatrix {
    long long tn = 0, fp = 0, fn = 0, tp = 0;

    long long total() const { return tn + fp + fn + tp; }
};

struct MetricsReport {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    // A degenerate denominator (no predicted positives, no actual positives,
    // or precision + recall == 0) yields 0 with the matching flag set.
    bool precision_degenerate = false;
    bool recall_degenerate = false;
    bool f1_degenerate = false;
};

ConfusionMatrix confusion_from_predictions(const std::vector<PredPair>& preds,
                                           double threshold = 0.5);
MetricsReport compute_metrics(const ConfusionMatrix& cm);

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
};

struct RocCurve {
    std::vector<RocPoint> points; // (0,0) ... (1,1), one step per distinct score
    double auc = 0.0;             // trapezoidal area under the points
};

// Threshold sweep over the distinct scores. Requires at least one positive
// and one negative label. The trapezoidal area equals the Mann-Whitney pair
// statistic (ties contribute one half).
RocCurve roc_curve(const std::vector<PredPair>& preds);

// ---------------------------------------------------------------------------
// Report artifacts. All values are printed with six decimal places.
//   history.csv  epoch,train_loss,train_acc,val_loss,val_acc,lr
//   metrics.csv  key,value rows (counts, rates, degenerate flags, auc)
//   roc.csv      fpr,tpr
//   curves.svg   self-contained loss/accuracy charts (+ ROC when available)
// ---------------------------------------------------------------------------
void write_history_csv(const std::vector<EpochLog>& logs, const std::string& path);
void write_metrics_csv(const ConfusionMatrix& cm, const MetricsReport& report,
                       const RocCurve* roc, const std::string& path);
void write_roc_csv(const RocCurve& roc, const std::string& path);
std::string render_curves_svg(const std::vector<EpochLog>& logs,
                              const RocCurve* roc);

// Write every artifact the inputs allow into out_dir: history.csv and the
// loss/accuracy charts when logs are present, metrics.csv when a confusion
// matrix is present, roc.csv and an ROC chart when a curve is present.
// Null pointers skip their artifact; at least one input must be non-null.
void render_report(const std::vector<EpochLog>* logs, const ConfusionMatrix* cm,
                   const MetricsReport* report, const RocCurve* roc,
                   const std::string& out_dir);

} // namespace pneumo

#endif
