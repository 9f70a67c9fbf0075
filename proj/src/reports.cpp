#include "sfcn/reports.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sfcn {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    return f;
}

}  // namespace

void write_train_log_csv(const std::string& path, const std::vector<TrainLogRow>& rows) {
    std::ofstream f = open_out(path);
    f << "step,stage,lr,loss_det,loss_cls,loss_decay,loss_total,n_cls\n";
    for (const auto& r : rows) {
        f << r.step << ',' << r.stage << ',' << fmt_double(r.lr) << ','
          << fmt_double(r.loss.loss_det) << ',' << fmt_double(r.loss.loss_cls) << ','
          << fmt_double(r.loss.loss_decay) << ',' << fmt_double(r.loss.loss_total) << ','
          << r.loss.n_cls << '\n';
    }
}

void write_metrics_csv(const std::string& path, const std::string& split, std::size_t n_images,
                       const EvalOutcome& outcome) {
    std::ofstream f = open_out(path);
    const MetricsReport& rep = outcome.report;
    f << "split,images,tp,fp,fn,det_precision,det_recall,det_f1";
    for (std::size_t k = 1; k <= rep.per_category.size(); ++k)
        f << ",cat" << k << "_precision,cat" << k << "_recall,cat" << k << "_f1";
    f << ",weighted_precision,weighted_recall,weighted_f1,empty_warning\n";

    f << split << ',' << n_images << ',' << outcome.totals.tp << ',' << outcome.totals.fp << ','
      << outcome.totals.fn << ',' << fmt_double(rep.detection.precision) << ','
      << fmt_double(rep.detection.recall) << ',' << fmt_double(rep.detection.f1);
    for (const auto& c : rep.per_category)
        f << ',' << fmt_double(c.precision) << ',' << fmt_double(c.recall) << ','
          << fmt_double(c.f1);
    f << ',' << fmt_double(rep.weighted.precision) << ',' << fmt_double(rep.weighted.recall)
      << ',' << fmt_double(rep.weighted.f1) << ',' << (rep.empty_warning ? 1 : 0) << '\n';
}

std::string metrics_summary_text(const std::string& split, std::size_t n_images,
                                 const EvalOutcome& outcome) {
    const MetricsReport& rep = outcome.report;
    std::ostringstream os;
    os << "evaluation on split '" << split << "' (" << n_images << " images)\n";
    if (rep.empty_warning) os << "WARNING: empty evaluation set, all metrics zero\n";
    os << "detection: TP " << outcome.totals.tp << "  FP " << outcome.totals.fp << "  FN "
       << outcome.totals.fn << "\n";
    os << "detection: P " << fmt_double(rep.detection.precision) << "  R "
       << fmt_double(rep.detection.recall) << "  F1 " << fmt_double(rep.detection.f1) << "\n";
    for (std::size_t k = 0; k < rep.per_category.size(); ++k) {
        os << "category " << k + 1 << " (weight " << fmt_double(rep.weights[k]) << "): P "
           << fmt_double(rep.per_category[k].precision) << "  R "
           << fmt_double(rep.per_category[k].recall) << "  F1 "
           << fmt_double(rep.per_category[k].f1) << "\n";
    }
    os << "weighted:  P " << fmt_double(rep.weighted.precision) << "  R "
       << fmt_double(rep.weighted.recall) << "  F1 " << fmt_double(rep.weighted.f1) << "\n";
    return os.str();
}

void write_metrics_summary(const std::string& path, const std::string& split,
                           std::size_t n_images, const EvalOutcome& outcome) {
    open_out(path) << metrics_summary_text(split, n_images, outcome);
}

void write_match_dump(const std::string& path, const EvalOutcome& outcome) {
    std::ofstream f = open_out(path);
    for (const auto& ev : outcome.per_image) {
        nlohmann::json rec;
        rec["image_id"] = ev.image_id;
        rec["tp"] = ev.match.tp;
        rec["fp"] = ev.match.fp;
        rec["fn"] = ev.match.fn;
        nlohmann::json points = nlohmann::json::array();
        for (const auto& p : ev.points)
            points.push_back({{"row", p.row},
                              {"col", p.col},
                              {"objectness", p.objectness},
                              {"category", p.category}});
        rec["points"] = points;
        f << rec.dump() << "\n";
    }
}

}  // namespace sfcn
