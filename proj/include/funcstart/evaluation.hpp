#pragma once

#include "funcstart/ground_truth.hpp"

#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

namespace funcstart {

struct Metrics {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    /// tp + fp == 0; precision is reported as 0.
    bool undefined_precision = false;
    /// tp + fn == 0; recall is reported as 0.
    bool undefined_recall = false;
    friend bool operator==(const Metrics&, const Metrics&) = default;
};

[[nodiscard]] Metrics metrics_from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) noexcept;

/// Per-start scoring. With tolerance 0 a prediction matches only the exact
/// start. A positive tolerance matches predictions within +-tolerance bytes,
/// one prediction per start, greedily in address order.
[[nodiscard]] Metrics score_starts(const std::vector<Rva>& predicted, const std::vector<Rva>& gt_starts,
                                   std::uint32_t tolerance = 0);

/// Exact (start, end) matching. Throws EncodingMismatch when the encodings
/// differ.
[[nodiscard]] Metrics score_boundaries(const std::vector<BoundaryPair>& predicted, EndEncoding predicted_encoding,
                                       const std::vector<BoundaryPair>& gt, EndEncoding gt_encoding);

/// (tp + tn) / bytes, with tn = bytes - tp - fp - fn. Dominated by the
/// negative class, so it is only exposed behind an explicit opt-in.
[[nodiscard]] double unsafe_accuracy(const Metrics& m, std::uint64_t bytes) noexcept;

struct EvalReport {
    std::string sample_id;
    std::string detector_id;
    std::string config_digest;
    nlohmann::json config = nlohmann::json::object();
    Metrics metrics;
    std::optional<Metrics> boundary_metrics;
    double wall_time = 0.0;
    std::uint64_t prediction_count = 0;
    std::uint64_t gt_count = 0;
    std::uint32_t tolerance = 0;
    std::optional<double> accuracy;
    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

[[nodiscard]] nlohmann::json metrics_to_json(const Metrics& m);
[[nodiscard]] Metrics metrics_from_json(const nlohmann::json& j);
[[nodiscard]] nlohmann::json report_to_json(const EvalReport& r);
/// Throws SchemaError.
[[nodiscard]] EvalReport report_from_json(const nlohmann::json& j);

/// Scores one detector run on one sample. `config_digest` is the SHA-256
/// of the canonical JSON dump of `config`.
[[nodiscard]] EvalReport evaluate_run(const GroundTruth& gt, const std::vector<Rva>& predicted,
                                      std::string detector_id, nlohmann::json config, double wall_time = 0.0,
                                      std::uint32_t tolerance = 0);

struct Averages {
    /// Metrics over summed counts.
    Metrics micro;
    /// Unweighted means of per-sample precision, recall and F1.
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    std::size_t samples = 0;
};

[[nodiscard]] Averages average(const std::vector<EvalReport>& reports);

struct ComparisonRow {
    std::string sample_id;
    std::string detector_id;
    Metrics metrics;
    double wall_time = 0.0;
};

/// Rows sorted by (sample_id, detector_id).
[[nodiscard]] std::vector<ComparisonRow> compare(const std::vector<EvalReport>& reports);

struct DeltaRow {
    std::string sample_id;
    std::string detector_id;
    double precision_before = 0.0;
    double precision_after = 0.0;
    double recall_before = 0.0;
    double recall_after = 0.0;
    double f1_before = 0.0;
    double f1_after = 0.0;

    [[nodiscard]] double f1_delta() const noexcept { return f1_after - f1_before; }
};

/// Joins `before` and `after` on (sample_id, detector_id).
[[nodiscard]] std::vector<DeltaRow> delta_rows(const std::vector<EvalReport>& before,
                                               const std::vector<EvalReport>& after);

[[nodiscard]] std::string comparison_csv(const std::vector<ComparisonRow>& rows);
[[nodiscard]] std::string delta_csv(const std::vector<DeltaRow>& rows);

} // namespace funcstart
