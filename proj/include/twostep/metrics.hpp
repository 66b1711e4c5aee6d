#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace twostep {

struct ConfusionMatrix {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

    std::size_t total() const { return tp + fp + tn + fn; }
};

ConfusionMatrix confusion(std::span<const int> predicted, std::span<const int> truth);

double accuracy(const ConfusionMatrix& cm);
double sensitivity(const ConfusionMatrix& cm);
double specificity(const ConfusionMatrix& cm);

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
};

struct RocCurve {
    std::vector<RocPoint> points;  // (0,0) first, (1,1) last
    double auc = 0.0;
};

// Threshold sweep over the distinct scores, highest first; tied scores move
// together as one step. AUC by the trapezoid rule over the resulting points.
RocCurve roc_and_auc(std::span<const double> scores, std::span<const int> truth);

std::string roc_csv(const RocCurve& roc);

}  // namespace twostep
