#pragma once

#include <string>
#include <vector>

#include "sfcn/evaluate.hpp"
#include "sfcn/train.hpp"

namespace sfcn {

// Repeatable float formatting for CSV artifacts (shortest round-trip form).
std::string fmt_double(double v);

void write_train_log_csv(const std::string& path, const std::vector<TrainLogRow>& rows);

void write_metrics_csv(const std::string& path, const std::string& split, std::size_t n_images,
                       const EvalOutcome& outcome);

void write_metrics_summary(const std::string& path, const std::string& split,
                           std::size_t n_images, const EvalOutcome& outcome);

std::string metrics_summary_text(const std::string& split, std::size_t n_images,
                                 const EvalOutcome& outcome);

// per-image match details, one JSON record per line
void write_match_dump(const std::string& path, const EvalOutcome& outcome);

}  // namespace sfcn
