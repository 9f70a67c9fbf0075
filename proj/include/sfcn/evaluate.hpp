#pragma once

#include <vector>

#include "sfcn/data.hpp"
#include "sfcn/infer.hpp"
#include "sfcn/model.hpp"

namespace sfcn {

struct EvalOptions {
    double nms_threshold = 0.5;
    double nms_radius = 6.0;
    double match_radius = 6.0;
    int threads = 1;
};

struct ImageEval {
    std::string image_id;
    std::vector<DetectedPoint> points;
    MatchResult match;
};

struct EvalOutcome {
    MetricsReport report;
    MatchResult totals;
    std::vector<ImageEval> per_image;
};

// Full test-time pipeline over a split: eval-mode forward, NMS on the
// objectness map, objectness-weighted category argmax, greedy matching, and
// frequency-weighted metrics. Deterministic for any thread count.
EvalOutcome evaluate_model(Parameters& params, const std::vector<AnnotatedImage>& images,
                           const EvalOptions& opts = {});

// Inference maps + points for a single image.
struct InferenceResult {
    ForwardOutputs outputs;
    std::vector<DetectedPoint> points;
};

InferenceResult infer_image(Parameters& params, const Tensor& image,
                            const EvalOptions& opts = {});

}  // namespace sfcn
