#include "funcstart/evaluation.hpp"

#include "funcstart/error.hpp"
#include "funcstart/io.hpp"

#include <algorithm>
#include <fmt/format.h>
#include <map>
#include <set>

namespace funcstart {

namespace {

using nlohmann::json;

template <typename T>
std::vector<T> sorted_unique(std::vector<T> v)
{
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

std::string csv_field(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos)
        return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"')
            out += '"';
        out += c;
    }
    return out + "\"";
}

} // namespace

Metrics metrics_from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) noexcept
{
    Metrics m;
    m.tp = tp;
    m.fp = fp;
    m.fn = fn;
    if (tp + fp > 0)
        m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    else
        m.undefined_precision = true;
    if (tp + fn > 0)
        m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    else
        m.undefined_recall = true;
    if (m.precision + m.recall > 0)
        m.f1 = 2 * m.precision * m.recall / (m.precision + m.recall);
    return m;
}

Metrics score_starts(const std::vector<Rva>& predicted, const std::vector<Rva>& gt_starts, std::uint32_t tolerance)
{
    const auto pred = sorted_unique(predicted);
    const auto gt = sorted_unique(gt_starts);
    std::uint64_t tp = 0;
    if (tolerance == 0) {
        std::vector<Rva> both;
        std::set_intersection(pred.begin(), pred.end(), gt.begin(), gt.end(), std::back_inserter(both));
        tp = both.size();
    } else {
        std::size_t p = 0;
        for (Rva g : gt) {
            const Rva lo = g > tolerance ? g - tolerance : 0;
            while (p < pred.size() && pred[p] < lo)
                ++p;
            if (p < pred.size() && pred[p] <= static_cast<std::uint64_t>(g) + tolerance) {
                ++tp;
                ++p;
            }
        }
    }
    return metrics_from_counts(tp, pred.size() - tp, gt.size() - tp);
}

Metrics score_boundaries(const std::vector<BoundaryPair>& predicted, EndEncoding predicted_encoding,
                         const std::vector<BoundaryPair>& gt, EndEncoding gt_encoding)
{
    if (predicted_encoding != gt_encoding)
        throw Error(ErrorKind::EncodingMismatch, fmt::format("predictions use {} but ground truth uses {}",
                                                             encoding_name(predicted_encoding), encoding_name(gt_encoding)));
    const auto pred = sorted_unique(predicted);
    const auto truth = sorted_unique(gt);
    std::vector<BoundaryPair> both;
    std::set_intersection(pred.begin(), pred.end(), truth.begin(), truth.end(), std::back_inserter(both));
    return metrics_from_counts(both.size(), pred.size() - both.size(), truth.size() - both.size());
}

double unsafe_accuracy(const Metrics& m, std::uint64_t bytes) noexcept
{
    if (bytes == 0)
        return 0.0;
    const std::uint64_t wrong = m.fp + m.fn;
    const std::uint64_t tn = bytes > m.tp + wrong ? bytes - m.tp - wrong : 0;
    return static_cast<double>(m.tp + tn) / static_cast<double>(bytes);
}

json metrics_to_json(const Metrics& m)
{
    return {{"tp", m.tp},
            {"fp", m.fp},
            {"fn", m.fn},
            {"precision", m.precision},
            {"recall", m.recall},
            {"f1", m.f1},
            {"undefined_precision", m.undefined_precision},
            {"undefined_recall", m.undefined_recall}};
}

Metrics metrics_from_json(const json& j)
{
    Metrics m;
    m.tp = j.at("tp").get<std::uint64_t>();
    m.fp = j.at("fp").get<std::uint64_t>();
    m.fn = j.at("fn").get<std::uint64_t>();
    m.precision = j.at("precision").get<double>();
    m.recall = j.at("recall").get<double>();
    m.f1 = j.at("f1").get<double>();
    m.undefined_precision = j.at("undefined_precision").get<bool>();
    m.undefined_recall = j.at("undefined_recall").get<bool>();
    return m;
}

json report_to_json(const EvalReport& r)
{
    json j{{"sample_id", r.sample_id},
           {"detector_id", r.detector_id},
           {"config_digest", r.config_digest},
           {"config", r.config},
           {"metrics", metrics_to_json(r.metrics)},
           {"wall_time", r.wall_time},
           {"prediction_count", r.prediction_count},
           {"gt_count", r.gt_count},
           {"tolerance", r.tolerance}};
    if (r.boundary_metrics)
        j["boundary_metrics"] = metrics_to_json(*r.boundary_metrics);
    if (r.accuracy)
        j["unsafe_accuracy"] = *r.accuracy;
    return j;
}

EvalReport report_from_json(const json& j)
{
    try {
        EvalReport r;
        r.sample_id = j.at("sample_id").get<std::string>();
        r.detector_id = j.at("detector_id").get<std::string>();
        r.config_digest = j.at("config_digest").get<std::string>();
        r.config = j.at("config");
        r.metrics = metrics_from_json(j.at("metrics"));
        r.wall_time = j.at("wall_time").get<double>();
        r.prediction_count = j.at("prediction_count").get<std::uint64_t>();
        r.gt_count = j.at("gt_count").get<std::uint64_t>();
        r.tolerance = j.value("tolerance", 0u);
        if (j.contains("boundary_metrics"))
            r.boundary_metrics = metrics_from_json(j["boundary_metrics"]);
        if (j.contains("unsafe_accuracy"))
            r.accuracy = j["unsafe_accuracy"].get<double>();
        return r;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::SchemaError, fmt::format("eval report: {}", e.what()));
    }
}

EvalReport evaluate_run(const GroundTruth& gt, const std::vector<Rva>& predicted, std::string detector_id, json config,
                        double wall_time, std::uint32_t tolerance)
{
    EvalReport r;
    r.sample_id = gt.sample_id;
    r.detector_id = std::move(detector_id);
    r.config_digest = sha256_hex(config.dump());
    r.config = std::move(config);
    const auto starts = gt.starts();
    r.metrics = score_starts(predicted, starts, tolerance);
    r.wall_time = wall_time;
    r.prediction_count = r.metrics.tp + r.metrics.fp;
    r.gt_count = starts.size();
    r.tolerance = tolerance;
    return r;
}

Averages average(const std::vector<EvalReport>& reports)
{
    Averages a;
    std::uint64_t tp = 0, fp = 0, fn = 0;
    for (const auto& r : reports) {
        tp += r.metrics.tp;
        fp += r.metrics.fp;
        fn += r.metrics.fn;
        a.macro_precision += r.metrics.precision;
        a.macro_recall += r.metrics.recall;
        a.macro_f1 += r.metrics.f1;
    }
    a.samples = reports.size();
    a.micro = metrics_from_counts(tp, fp, fn);
    if (!reports.empty()) {
        const auto n = static_cast<double>(reports.size());
        a.macro_precision /= n;
        a.macro_recall /= n;
        a.macro_f1 /= n;
    }
    return a;
}

std::vector<ComparisonRow> compare(const std::vector<EvalReport>& reports)
{
    std::vector<ComparisonRow> rows;
    for (const auto& r : reports)
        rows.push_back({r.sample_id, r.detector_id, r.metrics, r.wall_time});
    std::stable_sort(rows.begin(), rows.end(), [](const ComparisonRow& a, const ComparisonRow& b) {
        return std::tie(a.sample_id, a.detector_id) < std::tie(b.sample_id, b.detector_id);
    });
    return rows;
}

std::vector<DeltaRow> delta_rows(const std::vector<EvalReport>& before, const std::vector<EvalReport>& after)
{
    std::map<std::pair<std::string, std::string>, const EvalReport*> index;
    for (const auto& r : after)
        index[{r.sample_id, r.detector_id}] = &r;
    std::vector<DeltaRow> rows;
    for (const auto& b : before) {
        auto it = index.find({b.sample_id, b.detector_id});
        if (it == index.end())
            continue;
        const EvalReport& a = *it->second;
        rows.push_back({b.sample_id, b.detector_id, b.metrics.precision, a.metrics.precision, b.metrics.recall,
                        a.metrics.recall, b.metrics.f1, a.metrics.f1});
    }
    std::stable_sort(rows.begin(), rows.end(), [](const DeltaRow& x, const DeltaRow& y) {
        return std::tie(x.sample_id, x.detector_id) < std::tie(y.sample_id, y.detector_id);
    });
    return rows;
}

std::string comparison_csv(const std::vector<ComparisonRow>& rows)
{
    std::string out = "sample_id,detector_id,tp,fp,fn,precision,recall,f1,wall_time\n";
    for (const auto& r : rows)
        out += fmt::format("{},{},{},{},{},{:.6f},{:.6f},{:.6f},{:.6f}\n", csv_field(r.sample_id), csv_field(r.detector_id),
                           r.metrics.tp, r.metrics.fp, r.metrics.fn, r.metrics.precision, r.metrics.recall, r.metrics.f1,
                           r.wall_time);
    return out;
}

std::string delta_csv(const std::vector<DeltaRow>& rows)
{
    std::string out = "sample_id,detector_id,precision_before,precision_after,recall_before,recall_after,f1_before,f1_after,f1_delta\n";
    for (const auto& r : rows)
        out += fmt::format("{},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}\n", csv_field(r.sample_id),
                           csv_field(r.detector_id), r.precision_before, r.precision_after, r.recall_before,
                           r.recall_after, r.f1_before, r.f1_after, r.f1_delta());
    return out;
}

} // namespace funcstart
