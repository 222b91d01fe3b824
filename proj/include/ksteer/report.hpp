#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ksteer/evaluation.hpp"

namespace ksteer {

enum class ReportFormat { csv, markdown };

/// One CSV line. Aggregate rows carry labels "*" and average, per
/// (method, dataset, k, layer), the per-combination means; alpha is the mean
/// alpha of the group.
struct ReportRow {
    std::string method;
    std::string dataset;
    std::size_t k = 0;
    std::string labels;  // "+a;+b;-c"
    std::size_t layer = 0;
    double alpha = 0.0;
    std::size_t steps = 0;
    double mean_delta = 0.0;
    std::optional<double> score;

    friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

/// Label names for the labels column; ids are printed when absent.
using LabelNames = std::vector<std::string>;

[[nodiscard]] std::string format_labels(const LossSpec& combo, const LabelNames& names = {});

/// Per-outcome rows in input order followed by aggregate rows sorted by
/// (method, dataset, k, layer).
[[nodiscard]] std::vector<ReportRow> report_rows(std::span<const EvalOutcome> outcomes,
                                                 const LabelNames& names = {});

/// Header "method,dataset,k,labels,layer,alpha,steps,mean_delta,score";
/// reals in shortest round-trip form, an absent score is an empty field.
[[nodiscard]] std::string render_csv(std::span<const ReportRow> rows);
[[nodiscard]] std::vector<ReportRow> parse_csv(std::string_view text);

/// Mean change in target probability (methods x dataset/K) and, when any
/// outcome has a score, steering scores (dataset/labels x methods).
[[nodiscard]] std::string render_markdown(std::span<const EvalOutcome> outcomes,
                                          const LabelNames& names = {});

/// Writes `path` in the requested format. Throws InvalidInput on an empty
/// outcome list and Error when the file cannot be written.
void emit_report(std::span<const EvalOutcome> outcomes, ReportFormat format,
                 const std::filesystem::path& path, const LabelNames& names = {});

}  // namespace ksteer
