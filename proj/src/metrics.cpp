#include "twostep/metrics.hpp"

#include "twostep/error.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace twostep {

ConfusionMatrix confusion(std::span<const int> predicted, std::span<const int> truth) {
    if (predicted.size() != truth.size()) {
        fail(ErrorKind::LengthMismatch, std::to_string(predicted.size()) + " predictions for " +
                                            std::to_string(truth.size()) + " labels");
    }
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const bool p = predicted[i] == 1;
        if (truth[i] == 1) {
            (p ? cm.tp : cm.fn)++;
        } else {
            (p ? cm.fp : cm.tn)++;
        }
    }
    return cm;
}

double accuracy(const ConfusionMatrix& cm) {
    if (cm.total() == 0) fail(ErrorKind::UndefinedRate, "accuracy of an empty set");
    return static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
}

double sensitivity(const ConfusionMatrix& cm) {
    if (cm.tp + cm.fn == 0) fail(ErrorKind::UndefinedRate, "sensitivity without positive cases");
    return static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
}

double specificity(const ConfusionMatrix& cm) {
    if (cm.tn + cm.fp == 0) fail(ErrorKind::UndefinedRate, "specificity without negative cases");
    return static_cast<double>(cm.tn) / static_cast<double>(cm.tn + cm.fp);
}

RocCurve roc_and_auc(std::span<const double> scores, std::span<const int> truth) {
    if (scores.size() != truth.size()) fail(ErrorKind::LengthMismatch, "scores and labels differ in length");
    const auto pos = static_cast<std::size_t>(std::count(truth.begin(), truth.end(), 1));
    const auto neg = truth.size() - pos;
    if (pos == 0 || neg == 0) fail(ErrorKind::DegenerateClass, "ROC needs both classes");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocCurve roc;
    roc.points.push_back({0.0, 0.0});
    std::size_t tp = 0, fp = 0;
    double area2 = 0.0;  // twice the area, in units of pos*neg
    for (std::size_t i = 0; i < order.size();) {
        const double s = scores[order[i]];
        std::size_t dtp = 0, dfp = 0;
        for (; i < order.size() && scores[order[i]] == s; ++i) (truth[order[i]] == 1 ? dtp : dfp)++;
        area2 += static_cast<double>(dfp) * static_cast<double>(2 * tp + dtp);
        tp += dtp;
        fp += dfp;
        roc.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                              static_cast<double>(tp) / static_cast<double>(pos)});
    }
    roc.auc = area2 / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
    return roc;
}

std::string roc_csv(const RocCurve& roc) {
    std::ostringstream os;
    os.precision(17);
    os << "fpr,tpr\n";
    for (const auto& p : roc.points) os << p.fpr << ',' << p.tpr << '\n';
    return os.str();
}

}  // namespace twostep
