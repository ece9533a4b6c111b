#pragma once

#include <array>
#include <cstdio>
#include <numeric>
#include <vector>

#include "birdrone/boxes.hpp"

namespace brd {

// ---------------------------------------------------------------------------
// greedy matching
// ---------------------------------------------------------------------------

struct MatchResult {
    double iou_threshold = 0.5;
    std::vector<std::pair<int, int>> tp;  // (detection index, gt index)
    std::vector<int> fp;                  // detection indices
    std::vector<int> fn;                  // gt indices
};

// Detections take GTs greedily in descending-confidence order; each takes the
// highest-IoU unmatched GT (same class when class_aware) at or above the
// threshold. IoU ties go to the lower GT index, confidence ties to the lower
// detection index.
inline MatchResult match_detections(const std::vector<Detection>& dets,
                                    const std::vector<BoundingBox>& gts,
                                    double iou_threshold, bool class_aware = true) {
    MatchResult r;
    r.iou_threshold = iou_threshold;
    std::vector<int> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return dets[a].confidence > dets[b].confidence;
    });
    std::vector<bool> gt_used(gts.size(), false);
    for (int di : order) {
        int best = -1;
        double best_iou = 0.0;
        for (std::size_t gi = 0; gi < gts.size(); ++gi) {
            if (gt_used[gi]) continue;
            if (class_aware && gts[gi].class_id != dets[di].box.class_id) continue;
            const double v = iou(dets[di].box, gts[gi]);
            if (v >= iou_threshold && v > best_iou) {
                best_iou = v;
                best = static_cast<int>(gi);
            }
        }
        if (best >= 0) {
            gt_used[best] = true;
            r.tp.emplace_back(di, best);
        } else {
            r.fp.push_back(di);
        }
    }
    for (std::size_t gi = 0; gi < gts.size(); ++gi)
        if (!gt_used[gi]) r.fn.push_back(static_cast<int>(gi));
    return r;
}

// ---------------------------------------------------------------------------
// average precision (COCO-style 101-point interpolation)
// ---------------------------------------------------------------------------

namespace detail {

// (confidence, is_tp) pairs already in global descending-confidence order
inline double ap_from_flags(const std::vector<std::pair<double, bool>>& scored,
                            std::size_t total_gt) {
    if (total_gt == 0) return -1.0;
    std::vector<double> recall, precision;
    std::size_t tp = 0, fp = 0;
    for (const auto& [conf, is_tp] : scored) {
        (is_tp ? tp : fp)++;
        recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
        precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    }
    // precision envelope: monotone non-increasing from the right
    for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i)
        precision[i] = std::max(precision[i], precision[i + 1]);
    double acc = 0.0;
    std::size_t k = 0;
    for (int ri = 0; ri <= 100; ++ri) {
        const double r = ri / 100.0;
        while (k < recall.size() && recall[k] < r) ++k;
        if (k < recall.size()) acc += precision[k];
    }
    return acc / 101.0;
}

}  // namespace detail

// Per-class AP at one IoU threshold over a whole dataset. A class with zero
// GT boxes gets -1 (undefined, excluded from means).
inline std::vector<double> average_precision(
    const std::vector<std::vector<Detection>>& dets_per_image,
    const std::vector<std::vector<BoundingBox>>& gts_per_image, double iou_threshold,
    int num_classes) {
    require(dets_per_image.size() == gts_per_image.size(),
            "average_precision: image count mismatch");
    std::vector<double> ap(num_classes, -1.0);
    for (int c = 0; c < num_classes; ++c) {
        std::size_t total_gt = 0;
        for (const auto& gts : gts_per_image)
            for (const auto& g : gts)
                if (g.class_id == c) ++total_gt;
        if (total_gt == 0) continue;
        std::vector<std::pair<double, bool>> scored;
        for (std::size_t img = 0; img < dets_per_image.size(); ++img) {
            const auto& dets = dets_per_image[img];
            MatchResult m = match_detections(dets, gts_per_image[img], iou_threshold, true);
            std::vector<bool> is_tp(dets.size(), false);
            for (const auto& [di, gi] : m.tp) is_tp[di] = true;
            for (std::size_t di = 0; di < dets.size(); ++di)
                if (dets[di].box.class_id == c)
                    scored.emplace_back(dets[di].confidence, is_tp[di]);
        }
        std::stable_sort(scored.begin(), scored.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        ap[c] = detail::ap_from_flags(scored, total_gt);
    }
    return ap;
}

inline double mean_defined(const std::vector<double>& vals) {
    double acc = 0.0;
    int n = 0;
    for (double v : vals)
        if (v >= 0.0) {
            acc += v;
            ++n;
        }
    return n > 0 ? acc / n : 0.0;
}

// (mAP@0.5, mAP@0.5:0.95) over thresholds 0.50, 0.55, ..., 0.95
inline std::pair<double, double> map_range(
    const std::vector<std::vector<Detection>>& dets_per_image,
    const std::vector<std::vector<BoundingBox>>& gts_per_image, int num_classes) {
    double map50 = 0.0, acc = 0.0;
    for (int k = 0; k < 10; ++k) {
        const double thr = 0.5 + 0.05 * k;
        const double m = mean_defined(
            average_precision(dets_per_image, gts_per_image, thr, num_classes));
        if (k == 0) map50 = m;
        acc += m;
    }
    return {map50, acc / 10.0};
}

// ---------------------------------------------------------------------------
// detection-accuracy accounting over T = TP + FN + FP
// ---------------------------------------------------------------------------

struct AccuracyTriple {
    double accuracy_pct = 100.0;
    double fn_pct = 0.0;
    double fp_pct = 0.0;
    bool empty = false;  // T was zero; triple defined as (100, 0, 0)
};

inline AccuracyTriple detection_accuracy(std::size_t tp, std::size_t fn, std::size_t fp) {
    AccuracyTriple a;
    const double t = static_cast<double>(tp + fn + fp);
    if (t == 0.0) {
        a.empty = true;
        return a;
    }
    a.accuracy_pct = 100.0 * tp / t;
    a.fn_pct = 100.0 * fn / t;
    a.fp_pct = 100.0 * fp / t;
    return a;
}

// ---------------------------------------------------------------------------
// full report
// ---------------------------------------------------------------------------

struct MetricsReport {
    // fixed-threshold operating point
    double precision = 0.0;
    double recall = 0.0;
    double conf_threshold = 0.25;
    // best-F1 operating point on the PR sweep
    double best_f1 = 0.0;
    double best_f1_precision = 0.0;
    double best_f1_recall = 0.0;
    double best_f1_conf = 0.0;

    double map50 = 0.0;
    double map50_95 = 0.0;

    AccuracyTriple accuracy;

    std::vector<double> per_class_ap50;   // -1 = class has no GT
    std::array<double, 4> per_bin_ap50{}; // indexed by SizeBin; -1 = no GT in bin

    double ait_frame_s = 0.0;
    std::size_t images = 0, total_gt = 0, total_dets = 0;
};

namespace detail {

// AP at 0.5 restricted to GTs of one size bin; GTs outside the bin are
// "ignore": detections matched to them are dropped from scoring instead of
// counting as FPs.
inline double bin_ap50(const std::vector<std::vector<Detection>>& dets_per_image,
                       const std::vector<std::vector<BoundingBox>>& gts_per_image,
                       int num_classes, int image_size, SizeBin bin) {
    std::vector<double> ap(num_classes, -1.0);
    for (int c = 0; c < num_classes; ++c) {
        std::size_t total_gt = 0;
        std::vector<std::pair<double, bool>> scored;
        for (std::size_t img = 0; img < dets_per_image.size(); ++img) {
            const auto& dets = dets_per_image[img];
            const auto& gts = gts_per_image[img];
            std::vector<int> order(dets.size());
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
                return dets[a].confidence > dets[b].confidence;
            });
            std::vector<bool> used(gts.size(), false);
            std::vector<int> verdict(dets.size(), 0);  // 1 tp, -1 ignored, 0 fp
            for (int di : order) {
                int best = -1, best_ign = -1;
                double best_iou = 0.0, best_ign_iou = 0.0;
                for (std::size_t gi = 0; gi < gts.size(); ++gi) {
                    if (used[gi] || gts[gi].class_id != dets[di].box.class_id) continue;
                    const double v = iou(dets[di].box, gts[gi]);
                    if (v < 0.5) continue;
                    if (size_bin(gts[gi], image_size) == bin) {
                        if (v > best_iou) { best_iou = v; best = static_cast<int>(gi); }
                    } else {
                        if (v > best_ign_iou) { best_ign_iou = v; best_ign = static_cast<int>(gi); }
                    }
                }
                if (best >= 0) {
                    used[best] = true;
                    verdict[di] = 1;
                } else if (best_ign >= 0) {
                    used[best_ign] = true;
                    verdict[di] = -1;
                }
            }
            for (const auto& g : gts)
                if (g.class_id == c && size_bin(g, image_size) == bin) ++total_gt;
            for (std::size_t di = 0; di < dets.size(); ++di)
                if (dets[di].box.class_id == c && verdict[di] >= 0)
                    scored.emplace_back(dets[di].confidence, verdict[di] == 1);
        }
        if (total_gt == 0) continue;
        std::stable_sort(scored.begin(), scored.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        ap[c] = ap_from_flags(scored, total_gt);
    }
    bool any = false;
    for (double v : ap)
        if (v >= 0.0) any = true;
    return any ? mean_defined(ap) : -1.0;
}

}  // namespace detail

// Builds the full report from per-image detections (already confidence
// filtered at a low floor for the AP curves) and ground truths. The accuracy
// triple and fixed P/R use conf_threshold; AP uses every detection given.
inline MetricsReport evaluate_detections(
    const std::vector<std::vector<Detection>>& dets_per_image,
    const std::vector<std::vector<BoundingBox>>& gts_per_image, int num_classes,
    int image_size, double conf_threshold = 0.25) {
    require(dets_per_image.size() == gts_per_image.size(),
            "evaluate_detections: image count mismatch");
    MetricsReport rep;
    rep.conf_threshold = conf_threshold;
    rep.images = dets_per_image.size();

    // One match pass per image with all detections; a prefix cut at any
    // confidence equals matching the filtered set, because greedy matching
    // never lets a lower-confidence detection influence a higher one.
    std::vector<std::pair<double, bool>> scored;  // (conf, tp) across images
    std::size_t gt_total = 0;
    for (std::size_t img = 0; img < dets_per_image.size(); ++img) {
        const auto& dets = dets_per_image[img];
        rep.total_dets += dets.size();
        gt_total += gts_per_image[img].size();
        MatchResult m = match_detections(dets, gts_per_image[img], 0.5, true);
        std::vector<bool> is_tp(dets.size(), false);
        for (const auto& [di, gi] : m.tp) is_tp[di] = true;
        for (std::size_t di = 0; di < dets.size(); ++di)
            scored.emplace_back(dets[di].confidence, is_tp[di]);
    }
    rep.total_gt = gt_total;
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });

    std::size_t tp_fixed = 0, det_fixed = 0;
    std::size_t tp_cum = 0;
    for (std::size_t k = 0; k < scored.size(); ++k) {
        if (scored[k].second) ++tp_cum;
        if (scored[k].first >= conf_threshold) {
            ++det_fixed;
            if (scored[k].second) ++tp_fixed;
        }
        const double p = static_cast<double>(tp_cum) / static_cast<double>(k + 1);
        const double r = gt_total > 0 ? static_cast<double>(tp_cum) / gt_total : 0.0;
        const double f1 = (p + r) > 0 ? 2 * p * r / (p + r) : 0.0;
        if (f1 > rep.best_f1) {
            rep.best_f1 = f1;
            rep.best_f1_precision = p;
            rep.best_f1_recall = r;
            rep.best_f1_conf = scored[k].first;
        }
    }
    rep.precision = det_fixed > 0 ? static_cast<double>(tp_fixed) / det_fixed : 0.0;
    rep.recall = gt_total > 0 ? static_cast<double>(tp_fixed) / gt_total : 0.0;
    rep.accuracy = detection_accuracy(tp_fixed, gt_total - tp_fixed, det_fixed - tp_fixed);

    auto [m50, m5095] = map_range(dets_per_image, gts_per_image, num_classes);
    rep.map50 = m50;
    rep.map50_95 = m5095;
    rep.per_class_ap50 =
        average_precision(dets_per_image, gts_per_image, 0.5, num_classes);
    for (int b = 0; b < 4; ++b)
        rep.per_bin_ap50[b] = detail::bin_ap50(dets_per_image, gts_per_image, num_classes,
                                               image_size, static_cast<SizeBin>(b));
    return rep;
}

}  // namespace brd
