#pragma once

#include "funcstart/evaluation.hpp"
#include "funcstart/ground_truth.hpp"
#include "funcstart/pe_image.hpp"

#include <json.hpp>
#include <vector>

namespace funcstart {

struct PrefixTreeConfig {
    std::uint32_t depth = 16;
    /// Bytes before the candidate offset prepended to the lookup sequence.
    std::uint32_t context_window = 0;
    std::uint32_t min_support = 10;
    /// Only offsets that are multiples of this are candidates; 0 means all.
    std::uint32_t alignment_filter = 0;

    /// Throws SchemaError.
    void check() const;
    friend bool operator==(const PrefixTreeConfig&, const PrefixTreeConfig&) = default;
};

[[nodiscard]] nlohmann::json prefix_tree_config_json(const PrefixTreeConfig& c);

/// Trie symbol for a context position that lies before the section start.
inline constexpr std::uint16_t kOutsideSymbol = 256;

struct TrieNode {
    std::uint16_t symbol = 0;
    std::uint64_t start_count = 0;
    std::uint64_t total_count = 0;
    std::uint32_t first_child = 0;
    std::uint16_t child_count = 0;

    [[nodiscard]] double weight() const noexcept
    {
        return total_count == 0 ? 0.0 : static_cast<double>(start_count) / static_cast<double>(total_count);
    }
    friend bool operator==(const TrieNode&, const TrieNode&) = default;
};

/// Weighted prefix tree in canonical layout: node 0 is the root, nodes are
/// numbered breadth-first, children sorted by symbol and contiguous.
class PrefixTreeModel {
public:
    [[nodiscard]] const PrefixTreeConfig& config() const noexcept { return config_; }
    [[nodiscard]] const std::vector<TrieNode>& nodes() const noexcept { return nodes_; }
    [[nodiscard]] const TrieNode& root() const noexcept { return nodes_.front(); }

    /// Child of `node` with `symbol`, or nullptr.
    [[nodiscard]] const TrieNode* child(const TrieNode& node, std::uint16_t symbol) const noexcept;
    /// Node reached by following `path` from the root, or nullptr.
    [[nodiscard]] const TrieNode* find(const std::vector<std::uint16_t>& path) const noexcept;

    [[nodiscard]] Bytes serialize() const;
    /// Throws ModelFormat.
    [[nodiscard]] static PrefixTreeModel deserialize(ByteView bytes);

    friend bool operator==(const PrefixTreeModel&, const PrefixTreeModel&) = default;

private:
    friend class PrefixTreeBuilder;
    PrefixTreeConfig config_;
    std::vector<TrieNode> nodes_;
};

struct TrainingSample {
    const PeImage* image = nullptr;
    const GroundTruth* gt = nullptr;
};

/// Throws EmptyCorpus when `corpus` is empty.
[[nodiscard]] PrefixTreeModel train_prefix_tree(const std::vector<TrainingSample>& corpus,
                                                const PrefixTreeConfig& config = {});

/// Lookup sequence for `rva`: context_window symbols before it (positions
/// before the section start read as kOutsideSymbol), then up to `depth`
/// bytes, cut at the section end.
[[nodiscard]] std::vector<std::uint16_t> lookup_sequence(const PeImage& image, const Section& section, Rva rva,
                                                         const PrefixTreeConfig& config);

/// Candidate offsets: every file-backed executable byte, thinned by
/// alignment_filter.
[[nodiscard]] std::vector<Rva> candidate_offsets(const PeImage& image, const PrefixTreeConfig& config);

struct Prediction {
    Rva rva = 0;
    double score = 0.0;
    friend bool operator==(const Prediction&, const Prediction&) = default;
};

/// One prediction per candidate offset, sorted by rva. The score is the
/// weight of the deepest node (below the root) on the lookup path whose
/// total_count reaches min_support, or 0 when there is none.
[[nodiscard]] std::vector<Prediction> score_candidates(const PrefixTreeModel& model, const PeImage& image);

struct ClassifierThreshold {
    double t = 0.5;
};

/// {p.rva : p.score > t}, sorted.
[[nodiscard]] std::vector<Rva> classify(const std::vector<Prediction>& predictions, ClassifierThreshold threshold);

/// Threshold grid: t_i = i / 100 for i = 0..100.
inline constexpr int kThresholdSteps = 100;
[[nodiscard]] inline double grid_threshold(int i) noexcept
{
    return static_cast<double>(i) / kThresholdSteps;
}

struct ThresholdRow {
    double t = 0.0;
    Metrics metrics;
};

struct ThresholdSweep {
    double best_t = 0.0;
    Metrics best;
    /// 101 rows, one per grid threshold.
    std::vector<ThresholdRow> table;
    /// Best F1 is 0: no threshold separates anything.
    bool degenerate = false;
};

struct ScoredSample {
    std::vector<Prediction> predictions;
    std::vector<Rva> gt_starts;
};

/// F1 over counts summed across samples at each grid threshold; the
/// smallest t attaining the maximum wins. Throws EmptyValidation.
[[nodiscard]] ThresholdSweep sweep_threshold(const std::vector<ScoredSample>& validation);
[[nodiscard]] ThresholdSweep sweep_threshold(const PrefixTreeModel& model, const std::vector<TrainingSample>& validation);

struct ImbalancePrior {
    std::uint64_t pos = 0;
    std::uint64_t neg = 0;
    double b0 = 0.0;
};

/// b0 = ln(pos / neg). Throws DegenerateCounts when either count is 0.
[[nodiscard]] ImbalancePrior imbalance_prior(std::uint64_t pos, std::uint64_t neg);
/// pos = ground-truth starts on executable bytes, neg = the remaining
/// executable bytes.
[[nodiscard]] ImbalancePrior imbalance_prior(const GroundTruth& gt, const PeImage& image);

struct HeuristicOptions {
    bool gap_heuristic = true;
    bool prologue_patterns = true;
    bool pdata_seeds = true;
    /// Alignment of offsets tried by the prologue scan.
    std::uint32_t pattern_alignment = 16;
};

[[nodiscard]] nlohmann::json heuristic_options_json(const HeuristicOptions& o);

/// Built-in prologue byte patterns used by the gap scan.
[[nodiscard]] const std::vector<Bytes>& builtin_prologue_patterns();

/// Seeds (entry point, optionally .pdata begins), recursive descent with
/// call targets and optional gap entries, then optional prologue matching
/// in bytes no instruction covers, repeated until nothing new is found.
/// Sorted.
[[nodiscard]] std::vector<Rva> heuristic_detect(const PeImage& image, const HeuristicOptions& options = {});

} // namespace funcstart
