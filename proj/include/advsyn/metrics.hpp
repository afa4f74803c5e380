#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "advsyn/dataset.hpp"
#include "advsyn/errors.hpp"
#include "advsyn/tensor.hpp"

namespace advsyn {

// Binary confusion counts: tn=(0,0), fp=(0->1), fn=(1->0), tp=(1,1).
struct ConfusionMatrix {
    int64_t tn = 0, fp = 0, fn = 0, tp = 0;

    int64_t total() const { return tn + fp + fn + tp; }
    int64_t support_negative() const { return tn + fp; }
    int64_t support_positive() const { return fn + tp; }
};

inline ConfusionMatrix confusion_matrix(const std::vector<int>& y_true,
                                        const std::vector<int>& y_pred) {
    if (y_true.size() != y_pred.size()) {
        throw DataError("confusion_matrix: " + std::to_string(y_true.size()) + " truths vs " +
                        std::to_string(y_pred.size()) + " predictions");
    }
    ConfusionMatrix cm;
    for (size_t i = 0; i < y_true.size(); ++i) {
        const int t = y_true[i], p = y_pred[i];
        if ((t != 0 && t != 1) || (p != 0 && p != 1)) {
            throw DataError("confusion_matrix: non-binary label at index " + std::to_string(i));
        }
        if (t == 0 && p == 0) ++cm.tn;
        else if (t == 0 && p == 1) ++cm.fp;
        else if (t == 1 && p == 0) ++cm.fn;
        else ++cm.tp;
    }
    return cm;
}

// Zero-denominator metrics report 0 with defined=false instead of NaN, so
// CSVs stay machine-readable.
struct ClassMetrics {
    double precision = 0.0, recall = 0.0, f1 = 0.0;
    int64_t support = 0;
    bool precision_defined = true, recall_defined = true, f1_defined = true;
};

struct EvalReport {
    ClassMetrics negative;  // "no tumor"
    ClassMetrics positive;  // "tumor"
    double accuracy = 0.0;
    ClassMetrics macro_avg;
    ClassMetrics weighted_avg;
    double divergence = -1.0;  // optional histogram divergence, <0 when absent
};

namespace detail {

inline ClassMetrics class_metrics(int64_t tp, int64_t fp, int64_t fn, int64_t support) {
    ClassMetrics m;
    m.support = support;
    if (tp + fp > 0) {
        m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    } else {
        m.precision_defined = false;
    }
    if (tp + fn > 0) {
        m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    } else {
        m.recall_defined = false;
    }
    if (m.precision + m.recall > 0.0) {
        m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    } else {
        m.f1_defined = false;
    }
    return m;
}

}  // namespace detail

inline EvalReport classification_report(const ConfusionMatrix& cm) {
    if (cm.total() <= 0) throw DataError("classification_report: empty confusion matrix");
    EvalReport r;
    // treating "negative" as the positive class mirrors the counts
    r.negative = detail::class_metrics(cm.tn, cm.fn, cm.fp, cm.support_negative());
    r.positive = detail::class_metrics(cm.tp, cm.fp, cm.fn, cm.support_positive());
    r.accuracy = static_cast<double>(cm.tn + cm.tp) / static_cast<double>(cm.total());

    r.macro_avg.precision = (r.negative.precision + r.positive.precision) / 2.0;
    r.macro_avg.recall = (r.negative.recall + r.positive.recall) / 2.0;
    r.macro_avg.f1 = (r.negative.f1 + r.positive.f1) / 2.0;
    r.macro_avg.support = cm.total();

    const double wn = static_cast<double>(r.negative.support) / static_cast<double>(cm.total());
    const double wp = static_cast<double>(r.positive.support) / static_cast<double>(cm.total());
    r.weighted_avg.precision = wn * r.negative.precision + wp * r.positive.precision;
    r.weighted_avg.recall = wn * r.negative.recall + wp * r.positive.recall;
    r.weighted_avg.f1 = wn * r.negative.f1 + wp * r.positive.f1;
    r.weighted_avg.support = cm.total();
    return r;
}

// --- intensity histograms ----------------------------------------------------

// Normalized histogram over [-1,1] with equal bins; the final bin is
// right-inclusive (a pixel exactly at +1 lands in it).
inline std::vector<double> intensity_histogram(const std::vector<Tensor>& images, int bins) {
    if (bins < 2) throw ConfigError("intensity_histogram: need at least 2 bins");
    if (images.empty()) throw DataError("intensity_histogram: no images");
    std::vector<int64_t> counts(static_cast<size_t>(bins), 0);
    int64_t total = 0;
    for (const Tensor& img : images) {
        for (int64_t i = 0; i < img.size(); ++i) {
            int idx = static_cast<int>((img[i] + 1.0) / 2.0 * bins);
            if (idx < 0) idx = 0;
            if (idx >= bins) idx = bins - 1;
            ++counts[static_cast<size_t>(idx)];
            ++total;
        }
    }
    std::vector<double> h(static_cast<size_t>(bins));
    for (int b = 0; b < bins; ++b) {
        h[static_cast<size_t>(b)] =
            static_cast<double>(counts[static_cast<size_t>(b)]) / static_cast<double>(total);
    }
    return h;
}

inline std::vector<double> intensity_histogram(const ImageDataset& ds, int bins) {
    return intensity_histogram(ds.images, bins);
}

// Jensen-Shannon divergence, natural log: bounded by [0, ln 2], symmetric.
// The two KL terms are kept in separate accumulators whose instruction
// sequences each depend on a single input array, so divergence(a,b) ==
// divergence(b,a) bit-exactly even with FMA contraction enabled.
inline double histogram_divergence(const std::vector<double>& h1, const std::vector<double>& h2) {
    if (h1.size() != h2.size()) {
        throw DataError("histogram_divergence: bin counts differ, " + std::to_string(h1.size()) +
                        " vs " + std::to_string(h2.size()));
    }
    auto check_mass = [](const std::vector<double>& h) {
        double s = 0.0;
        for (double v : h) {
            if (v < 0.0) throw DataError("histogram_divergence: negative bin mass");
            s += v;
        }
        if (std::abs(s - 1.0) > 1e-9) {
            throw DataError("histogram_divergence: histogram mass " + std::to_string(s) +
                            " is not 1");
        }
    };
    check_mass(h1);
    check_mass(h2);
    double kl_p = 0.0, kl_q = 0.0;
    for (size_t i = 0; i < h1.size(); ++i) {
        const double p = h1[i], q = h2[i];
        const double m = 0.5 * (p + q);
        if (p > 0.0) kl_p += p * std::log(p / m);
        if (q > 0.0) kl_q += q * std::log(q / m);
    }
    const double jsd = 0.5 * (kl_p + kl_q);
    return jsd < 0.0 ? 0.0 : jsd;  // guard tiny negative round-off
}

struct DistributionRow {
    double bin_center = 0.0;
    double real_mass = 0.0;
    double synthetic_mass = 0.0;
};

struct DistributionComparison {
    double jsd = 0.0;
    std::vector<DistributionRow> rows;
};

inline DistributionComparison compare_real_synthetic(const ImageDataset& real,
                                                     const ImageDataset& synthetic,
                                                     int bins = 50) {
    if (real.empty() || synthetic.empty()) {
        throw DataError("compare_real_synthetic: both datasets must be non-empty");
    }
    const std::vector<double> hr = intensity_histogram(real, bins);
    const std::vector<double> hs = intensity_histogram(synthetic, bins);
    DistributionComparison cmp;
    cmp.jsd = histogram_divergence(hr, hs);
    cmp.rows.resize(static_cast<size_t>(bins));
    const double width = 2.0 / bins;
    for (int b = 0; b < bins; ++b) {
        cmp.rows[static_cast<size_t>(b)] = DistributionRow{-1.0 + (b + 0.5) * width,
                                                           hr[static_cast<size_t>(b)],
                                                           hs[static_cast<size_t>(b)]};
    }
    return cmp;
}

// --- CSV emitters --------------------------------------------------------------

namespace detail {

inline std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace detail

// Table-III-shaped layout: one row per class, then accuracy (value in the
// f1 column) and the two averages.
inline void write_report_csv(const std::string& path, const EvalReport& r) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("report: cannot write " + path);
    out << "class,precision,recall,f1,support\n";
    out << "no_tumor," << detail::fmt6(r.negative.precision) << ","
        << detail::fmt6(r.negative.recall) << "," << detail::fmt6(r.negative.f1) << ","
        << r.negative.support << "\n";
    out << "tumor," << detail::fmt6(r.positive.precision) << "," << detail::fmt6(r.positive.recall)
        << "," << detail::fmt6(r.positive.f1) << "," << r.positive.support << "\n";
    out << "accuracy,,," << detail::fmt6(r.accuracy) << "," << r.macro_avg.support << "\n";
    out << "macro_avg," << detail::fmt6(r.macro_avg.precision) << ","
        << detail::fmt6(r.macro_avg.recall) << "," << detail::fmt6(r.macro_avg.f1) << ","
        << r.macro_avg.support << "\n";
    out << "weighted_avg," << detail::fmt6(r.weighted_avg.precision) << ","
        << detail::fmt6(r.weighted_avg.recall) << "," << detail::fmt6(r.weighted_avg.f1) << ","
        << r.weighted_avg.support << "\n";
    if (!out) throw DataError("report: write failed for " + path);
}

inline void write_confusion_csv(const std::string& path, const ConfusionMatrix& cm) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("report: cannot write " + path);
    out << ",pred_no,pred_yes\n";
    out << "true_no," << cm.tn << "," << cm.fp << "\n";
    out << "true_yes," << cm.fn << "," << cm.tp << "\n";
    if (!out) throw DataError("report: write failed for " + path);
}

inline void write_distribution_csv(const std::string& path, const DistributionComparison& cmp) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("report: cannot write " + path);
    out << "bin_center,real,synthetic\n";
    for (const DistributionRow& row : cmp.rows) {
        out << detail::fmt6(row.bin_center) << "," << detail::fmt6(row.real_mass) << ","
            << detail::fmt6(row.synthetic_mass) << "\n";
    }
    if (!out) throw DataError("report: write failed for " + path);
}

}  // namespace advsyn
