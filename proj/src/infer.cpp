#include "sfcn/infer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <tuple>

namespace sfcn {

namespace {

double sq_dist(int r1, int c1, int r2, int c2) {
    const double dr = r1 - r2, dc = c1 - c2;
    return dr * dr + dc * dc;
}

}  // namespace

std::vector<DetectedPoint> nms(const Tensor& p_obj, double threshold, double radius) {
    if (p_obj.rank() != 2) throw std::invalid_argument("nms: map must be [H,W]");
    if (radius < 1.0) throw std::invalid_argument("nms: radius must be >= 1");
    const int h = p_obj.dim(0), w = p_obj.dim(1);

    struct Cand {
        double score;
        int row, col;
    };
    std::vector<Cand> cands;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double p = p_obj.value()[static_cast<Eigen::Index>(r) * w + c];
            if (p >= threshold) cands.push_back({p, r, c});
        }
    // descending score, ties by row-major position
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.row != b.row) return a.row < b.row;
        return a.col < b.col;
    });

    const double r2 = radius * radius;
    std::vector<DetectedPoint> accepted;
    for (const Cand& c : cands) {
        bool suppressed = false;
        for (const DetectedPoint& a : accepted) {
            if (sq_dist(c.row, c.col, a.row, a.col) <= r2) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) {
            DetectedPoint p;
            p.row = c.row;
            p.col = c.col;
            p.objectness = c.score;
            accepted.push_back(std::move(p));
        }
    }
    return accepted;
}

void assign_categories(std::vector<DetectedPoint>& points, const Tensor& p_obj,
                       const Tensor& p_cond) {
    if (p_cond.rank() != 3) throw std::invalid_argument("assign_categories: p_cond must be [K+1,H,W]");
    const int kk = p_cond.dim(0);
    const int h = p_cond.dim(1), w = p_cond.dim(2);
    const Eigen::Index m = static_cast<Eigen::Index>(h) * w;
    for (auto& pt : points) {
        const Eigen::Index at = static_cast<Eigen::Index>(pt.row) * w + pt.col;
        const double obj = p_obj.value()[at];
        pt.class_probs.resize(kk);
        int best = 0;
        for (int k = 0; k < kk; ++k) {
            pt.class_probs[k] = obj * p_cond.value()[k * m + at];
            if (pt.class_probs[k] > pt.class_probs[best]) best = k;  // ties keep lower k
        }
        pt.category = best;
    }
}

void MatchResult::accumulate(const MatchResult& other) {
    tp += other.tp;
    fp += other.fp;
    fn += other.fn;
    if (confusion.size() == 0)
        confusion = other.confusion;
    else if (other.confusion.size() != 0)
        confusion += other.confusion;
}

MatchResult match(const std::vector<DetectedPoint>& points,
                  const std::vector<Annotation>& annotations, double radius,
                  int num_categories) {
    if (radius < 1.0) throw std::invalid_argument("match: radius must be >= 1");
    MatchResult res;
    res.confusion = Eigen::MatrixXi::Zero(num_categories + 1, num_categories + 1);

    struct Pair {
        double d2;
        int det, ann;
    };
    std::vector<Pair> pairs;
    const double r2 = radius * radius;
    for (int d = 0; d < static_cast<int>(points.size()); ++d)
        for (int a = 0; a < static_cast<int>(annotations.size()); ++a) {
            const double d2 =
                sq_dist(points[d].row, points[d].col, annotations[a].row, annotations[a].col);
            if (d2 <= r2) pairs.push_back({d2, d, a});
        }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) {
        return std::tie(x.d2, x.det, x.ann) < std::tie(y.d2, y.det, y.ann);
    });

    std::vector<char> det_used(points.size(), 0), ann_used(annotations.size(), 0);
    for (const Pair& p : pairs) {
        if (det_used[p.det] || ann_used[p.ann]) continue;
        det_used[p.det] = 1;
        ann_used[p.ann] = 1;
        res.pairs.emplace_back(p.det, p.ann);
        const int ac = annotations[p.ann].category;
        const int dc = points[p.det].category;
        if (ac >= 0 && ac <= num_categories && dc >= 0 && dc <= num_categories)
            res.confusion(ac, dc) += 1;
    }
    res.tp = static_cast<long>(res.pairs.size());
    res.fp = static_cast<long>(points.size()) - res.tp;
    res.fn = static_cast<long>(annotations.size()) - res.tp;
    return res;
}

namespace {

CategoryScore prf(double tp, double fp, double fn) {
    CategoryScore s;
    s.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    s.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    s.f1 = s.precision + s.recall > 0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
                                      : 0.0;
    return s;
}

}  // namespace

MetricsReport metrics(const MatchResult& totals, const std::vector<double>& category_weights) {
    const int kk = static_cast<int>(totals.confusion.rows());
    const int k_n = kk - 1;
    if (static_cast<int>(category_weights.size()) != k_n)
        throw std::invalid_argument("metrics: need one weight per category");
    double wsum = 0.0;
    for (double w : category_weights) wsum += w;
    if (std::abs(wsum - 1.0) > 1e-9)
        throw std::invalid_argument("metrics: category weights must sum to 1");

    MetricsReport rep;
    rep.weights = category_weights;
    rep.detection = prf(static_cast<double>(totals.tp), static_cast<double>(totals.fp),
                        static_cast<double>(totals.fn));
    rep.empty_warning = totals.tp + totals.fp + totals.fn == 0;

    // classification metrics over TP pairs with a non-background detected
    // category; one-vs-rest per category
    rep.per_category.resize(k_n);
    for (int k = 1; k <= k_n; ++k) {
        double tp_k = totals.confusion(k, k);
        double fp_k = 0.0, fn_k = 0.0;
        for (int a = 1; a <= k_n; ++a)
            if (a != k) fp_k += totals.confusion(a, k);
        for (int d = 1; d <= k_n; ++d)
            if (d != k) fn_k += totals.confusion(k, d);
        rep.per_category[k - 1] = prf(tp_k, fp_k, fn_k);
    }
    for (int k = 0; k < k_n; ++k) {
        rep.weighted.precision += category_weights[k] * rep.per_category[k].precision;
        rep.weighted.recall += category_weights[k] * rep.per_category[k].recall;
        rep.weighted.f1 += category_weights[k] * rep.per_category[k].f1;
    }
    return rep;
}

std::vector<double> category_weights_from_annotations(
    const std::vector<std::vector<Annotation>>& per_image, int num_categories) {
    std::vector<double> counts(static_cast<std::size_t>(num_categories), 0.0);
    double total = 0.0;
    for (const auto& anns : per_image)
        for (const auto& a : anns) {
            if (a.category >= 1 && a.category <= num_categories) {
                counts[static_cast<std::size_t>(a.category - 1)] += 1.0;
                total += 1.0;
            }
        }
    if (total == 0.0) {
        // degenerate split: fall back to uniform weights
        for (auto& c : counts) c = 1.0 / num_categories;
        return counts;
    }
    for (auto& c : counts) c /= total;
    return counts;
}

}  // namespace sfcn
