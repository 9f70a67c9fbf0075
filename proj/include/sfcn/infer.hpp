#pragma once

#include <Eigen/Core>

#include <vector>

#include "sfcn/tensor.hpp"

namespace sfcn {

struct DetectedPoint {
    int row = 0;
    int col = 0;
    double objectness = 0.0;
    int category = 0;  // 0 = background / unassigned
    std::vector<double> class_probs;  // p^{cls=k}, k = 0..K
};

struct Annotation {
    int row = 0;
    int col = 0;
    int category = 1;  // 1..K
};

struct MatchResult {
    long tp = 0;
    long fp = 0;
    long fn = 0;
    std::vector<std::pair<int, int>> pairs;  // (detection index, annotation index)
    // confusion[a][d] over TP pairs, annotation category a and detected
    // category d in 1..K; detections assigned to background are excluded.
    Eigen::MatrixXi confusion;

    void accumulate(const MatchResult& other);
};

struct CategoryScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct MetricsReport {
    CategoryScore detection;
    std::vector<CategoryScore> per_category;  // index 0 -> category 1
    CategoryScore weighted;
    std::vector<double> weights;
    bool empty_warning = false;
};

// Greedy NMS: candidates with p >= threshold sorted by descending score
// (ties in row-major order); a candidate survives if no accepted point lies
// within Euclidean distance <= radius.
std::vector<DetectedPoint> nms(const Tensor& p_obj, double threshold = 0.5, double radius = 6.0);

// Objectness-weighted category argmax at each point (ties to the lower
// index). Background argmax keeps the detection with category 0.
void assign_categories(std::vector<DetectedPoint>& points, const Tensor& p_obj,
                       const Tensor& p_cond);

// One-to-one greedy matching by increasing detection-annotation distance
// within the radius; leftovers are FP / FN.
MatchResult match(const std::vector<DetectedPoint>& points,
                  const std::vector<Annotation>& annotations, double radius = 6.0,
                  int num_categories = 4);

MetricsReport metrics(const MatchResult& totals, const std::vector<double>& category_weights);

// Category frequencies among the labeled nuclei of a split (the weighted-
// metric weights). All-zero annotations give uniform weights plus a warning
// downstream.
std::vector<double> category_weights_from_annotations(
    const std::vector<std::vector<Annotation>>& per_image, int num_categories);

}  // namespace sfcn
