#include "sfcn/evaluate.hpp"

#include <atomic>
#include <future>

#include "sfcn/ops.hpp"
#include "sfcn/tape.hpp"

namespace sfcn {

namespace {

// gradient bookkeeping is pointless at test time
class GradOff {
public:
    explicit GradOff(Parameters& params) : params_(params) {
        for (auto& [name, t] : params_.items) {
            if (t.requires_grad()) {
                off_.push_back(name);
                t.set_requires_grad(false);
            }
        }
    }
    ~GradOff() {
        for (const auto& name : off_) params_.at(name).set_requires_grad(true);
    }

private:
    Parameters& params_;
    std::vector<std::string> off_;
};

ImageEval eval_one(Parameters& params, const AnnotatedImage& img, const EvalOptions& opts) {
    Tape tape;
    ForwardOutputs out = forward(tape, params, img.pixels, {.train = false});
    Tensor p_obj = ops::slice_channel(tape, out.det_probs, 1);

    ImageEval ev;
    ev.image_id = img.image_id;
    ev.points = nms(p_obj, opts.nms_threshold, opts.nms_radius);
    assign_categories(ev.points, p_obj, out.cls_cond_probs);
    ev.match = match(ev.points, img.nuclei, opts.match_radius, params.config.num_categories);
    return ev;
}

}  // namespace

EvalOutcome evaluate_model(Parameters& params, const std::vector<AnnotatedImage>& images,
                           const EvalOptions& opts) {
    GradOff guard(params);
    EvalOutcome outcome;
    outcome.per_image.resize(images.size());

    const int threads = std::max(1, opts.threads);
    if (threads == 1 || images.size() <= 1) {
        for (std::size_t i = 0; i < images.size(); ++i)
            outcome.per_image[i] = eval_one(params, images[i], opts);
    } else {
        // per-image work is independent; results land by index so the
        // reduction below is order-deterministic
        std::vector<std::future<void>> tasks;
        std::atomic<std::size_t> next{0};
        for (int t = 0; t < threads; ++t) {
            tasks.push_back(std::async(std::launch::async, [&]() {
                while (true) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= images.size()) return;
                    outcome.per_image[i] = eval_one(params, images[i], opts);
                }
            }));
        }
        for (auto& t : tasks) t.get();
    }

    outcome.totals.confusion = Eigen::MatrixXi::Zero(params.config.num_categories + 1,
                                                     params.config.num_categories + 1);
    for (const auto& ev : outcome.per_image) outcome.totals.accumulate(ev.match);

    std::vector<std::vector<Annotation>> anns;
    for (const auto& img : images) anns.push_back(img.nuclei);
    const std::vector<double> weights =
        category_weights_from_annotations(anns, params.config.num_categories);
    outcome.report = metrics(outcome.totals, weights);
    outcome.report.empty_warning = images.empty() || outcome.report.empty_warning;
    return outcome;
}

InferenceResult infer_image(Parameters& params, const Tensor& image, const EvalOptions& opts) {
    GradOff guard(params);
    Tape tape;
    InferenceResult res;
    res.outputs = forward(tape, params, image, {.train = false});
    Tensor p_obj = ops::slice_channel(tape, res.outputs.det_probs, 1);
    res.points = nms(p_obj, opts.nms_threshold, opts.nms_radius);
    assign_categories(res.points, p_obj, res.outputs.cls_cond_probs);
    return res;
}

}  // namespace sfcn
