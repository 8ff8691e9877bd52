#include "funcstart/detectors.hpp"

#include "funcstart/disasm.hpp"
#include "funcstart/error.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fmt/format.h>
#include <set>
#include <unordered_map>

namespace funcstart {

namespace {

using nlohmann::json;

constexpr std::array<char, 4> kModelMagic{'F', 'S', 'P', 'T'};
constexpr std::uint32_t kModelVersion = 1;
constexpr std::size_t kModelHeaderSize = 4 + 6 * 4;
constexpr std::size_t kNodeRecordSize = 2 + 8 + 8 + 4 + 2;

[[noreturn]] void bad_model(const std::string& what)
{
    throw Error(ErrorKind::ModelFormat, what);
}

std::vector<Rva> sorted_starts(const GroundTruth& gt)
{
    auto s = gt.starts();
    std::sort(s.begin(), s.end());
    return s;
}

} // namespace

// Mutable trie used while counting; turned into the canonical layout once
// training is done.
class PrefixTreeBuilder {
public:
    PrefixTreeBuilder() { counts_.push_back({}); }

    void insert(const std::vector<std::uint16_t>& path, bool is_start)
    {
        std::uint32_t node = 0;
        bump(node, is_start);
        for (std::uint16_t sym : path) {
            const std::uint64_t key = (static_cast<std::uint64_t>(node) << 9) | sym;
            auto [it, inserted] = edges_.try_emplace(key, static_cast<std::uint32_t>(counts_.size()));
            if (inserted)
                counts_.push_back({});
            node = it->second;
            bump(node, is_start);
        }
    }

    PrefixTreeModel finish(const PrefixTreeConfig& config) const
    {
        std::vector<std::vector<std::pair<std::uint16_t, std::uint32_t>>> children(counts_.size());
        for (const auto& [key, child] : edges_)
            children[key >> 9].emplace_back(static_cast<std::uint16_t>(key & 0x1FF), child);
        for (auto& c : children)
            std::sort(c.begin(), c.end());

        PrefixTreeModel model;
        model.config_ = config;
        model.nodes_.reserve(counts_.size());
        std::deque<std::pair<std::uint32_t, std::uint16_t>> queue{{0, 0}};
        std::uint32_t next = 1;
        while (!queue.empty()) {
            const auto [old, sym] = queue.front();
            queue.pop_front();
            TrieNode n;
            n.symbol = sym;
            n.start_count = counts_[old].first;
            n.total_count = counts_[old].second;
            n.first_child = next;
            n.child_count = static_cast<std::uint16_t>(children[old].size());
            next += n.child_count;
            for (const auto& [s, c] : children[old])
                queue.emplace_back(c, s);
            model.nodes_.push_back(n);
        }
        return model;
    }

private:
    void bump(std::uint32_t node, bool is_start)
    {
        counts_[node].first += is_start ? 1 : 0;
        counts_[node].second += 1;
    }

    // (start_count, total_count) per node.
    std::vector<std::pair<std::uint64_t, std::uint64_t>> counts_;
    std::unordered_map<std::uint64_t, std::uint32_t> edges_;
};

void PrefixTreeConfig::check() const
{
    if (depth == 0)
        throw Error(ErrorKind::SchemaError, "prefix tree depth must be at least 1");
    if (depth + context_window > 4096)
        throw Error(ErrorKind::SchemaError, "depth plus context window is unreasonably large");
    if (alignment_filter != 0 && (alignment_filter & (alignment_filter - 1)) != 0)
        throw Error(ErrorKind::SchemaError, fmt::format("alignment filter {} is not a power of two", alignment_filter));
}

json prefix_tree_config_json(const PrefixTreeConfig& c)
{
    return {{"depth", c.depth},
            {"context_window", c.context_window},
            {"min_support", c.min_support},
            {"alignment_filter", c.alignment_filter}};
}

const TrieNode* PrefixTreeModel::child(const TrieNode& node, std::uint16_t symbol) const noexcept
{
    const auto first = nodes_.begin() + node.first_child;
    const auto last = first + node.child_count;
    auto it = std::lower_bound(first, last, symbol, [](const TrieNode& n, std::uint16_t s) { return n.symbol < s; });
    return it != last && it->symbol == symbol ? &*it : nullptr;
}

const TrieNode* PrefixTreeModel::find(const std::vector<std::uint16_t>& path) const noexcept
{
    const TrieNode* n = &root();
    for (auto sym : path) {
        n = child(*n, sym);
        if (n == nullptr)
            return nullptr;
    }
    return n;
}

Bytes PrefixTreeModel::serialize() const
{
    Bytes out(kModelMagic.begin(), kModelMagic.end());
    put_le32(out, kModelVersion);
    put_le32(out, config_.depth);
    put_le32(out, config_.context_window);
    put_le32(out, config_.min_support);
    put_le32(out, config_.alignment_filter);
    put_le32(out, static_cast<std::uint32_t>(nodes_.size()));
    out.reserve(out.size() + nodes_.size() * kNodeRecordSize);
    for (const auto& n : nodes_) {
        put_le16(out, n.symbol);
        put_le64(out, n.start_count);
        put_le64(out, n.total_count);
        put_le32(out, n.first_child);
        put_le16(out, n.child_count);
    }
    return out;
}

PrefixTreeModel PrefixTreeModel::deserialize(ByteView bytes)
{
    if (bytes.size() < kModelHeaderSize || !std::equal(kModelMagic.begin(), kModelMagic.end(), bytes.begin()))
        bad_model("missing FSPT magic");
    const std::uint32_t version = *read_le32(bytes, 4);
    if (version != kModelVersion)
        bad_model(fmt::format("unsupported model version {}", version));
    PrefixTreeModel m;
    m.config_.depth = *read_le32(bytes, 8);
    m.config_.context_window = *read_le32(bytes, 12);
    m.config_.min_support = *read_le32(bytes, 16);
    m.config_.alignment_filter = *read_le32(bytes, 20);
    const std::uint32_t count = *read_le32(bytes, 24);
    if (count == 0 || bytes.size() != kModelHeaderSize + static_cast<std::size_t>(count) * kNodeRecordSize)
        bad_model("node table size does not match the header");
    try {
        m.config_.check();
    } catch (const Error& e) {
        bad_model(e.what());
    }
    m.nodes_.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t off = kModelHeaderSize + static_cast<std::size_t>(i) * kNodeRecordSize;
        TrieNode& n = m.nodes_[i];
        n.symbol = *read_le16(bytes, off);
        n.start_count = *read_le64(bytes, off + 2);
        n.total_count = *read_le64(bytes, off + 10);
        n.first_child = *read_le32(bytes, off + 18);
        n.child_count = *read_le16(bytes, off + 22);
        if (n.symbol > kOutsideSymbol || n.start_count > n.total_count)
            bad_model(fmt::format("node {} is inconsistent", i));
        if (n.child_count != 0 && (n.first_child <= i || static_cast<std::uint64_t>(n.first_child) + n.child_count > count))
            bad_model(fmt::format("node {} has children out of range", i));
    }
    return m;
}

std::vector<std::uint16_t> lookup_sequence(const PeImage& image, const Section& section, Rva rva,
                                           const PrefixTreeConfig& config)
{
    const RvaRange raw = section.raw_range();
    const ByteView bytes = image.bytes_at(raw.begin, raw.size());
    std::vector<std::uint16_t> seq;
    seq.reserve(config.context_window + config.depth);
    for (std::uint32_t k = config.context_window; k > 0; --k)
        seq.push_back(rva - raw.begin >= k ? bytes[rva - raw.begin - k] : kOutsideSymbol);
    const std::uint64_t stop = std::min<std::uint64_t>(static_cast<std::uint64_t>(rva) + config.depth, raw.end);
    for (std::uint64_t a = rva; a < stop; ++a)
        seq.push_back(bytes[a - raw.begin]);
    return seq;
}

std::vector<Rva> candidate_offsets(const PeImage& image, const PrefixTreeConfig& config)
{
    std::vector<Rva> out;
    for (const auto& r : image.executable_ranges()) {
        for (std::uint64_t a = r.begin; a < r.end; ++a)
            if (config.alignment_filter == 0 || a % config.alignment_filter == 0)
                out.push_back(static_cast<Rva>(a));
    }
    return out;
}

PrefixTreeModel train_prefix_tree(const std::vector<TrainingSample>& corpus, const PrefixTreeConfig& config)
{
    config.check();
    if (corpus.empty())
        throw Error(ErrorKind::EmptyCorpus, "training corpus is empty");
    PrefixTreeBuilder builder;
    for (const auto& sample : corpus) {
        const auto starts = sorted_starts(*sample.gt);
        for (Rva rva : candidate_offsets(*sample.image, config)) {
            const Section* s = sample.image->section_containing(rva);
            builder.insert(lookup_sequence(*sample.image, *s, rva, config),
                           std::binary_search(starts.begin(), starts.end(), rva));
        }
    }
    return builder.finish(config);
}

std::vector<Prediction> score_candidates(const PrefixTreeModel& model, const PeImage& image)
{
    const PrefixTreeConfig& config = model.config();
    std::vector<Prediction> out;
    for (Rva rva : candidate_offsets(image, config)) {
        const Section* s = image.section_containing(rva);
        double score = 0.0;
        const TrieNode* n = &model.root();
        for (std::uint16_t sym : lookup_sequence(image, *s, rva, config)) {
            n = model.child(*n, sym);
            if (n == nullptr)
                break;
            if (n->total_count >= config.min_support && n->total_count > 0)
                score = n->weight();
        }
        out.push_back({rva, score});
    }
    return out;
}

std::vector<Rva> classify(const std::vector<Prediction>& predictions, ClassifierThreshold threshold)
{
    std::vector<Rva> out;
    for (const auto& p : predictions)
        if (p.score > threshold.t)
            out.push_back(p.rva);
    std::sort(out.begin(), out.end());
    return out;
}

ThresholdSweep sweep_threshold(const std::vector<ScoredSample>& validation)
{
    if (validation.empty())
        throw Error(ErrorKind::EmptyValidation, "validation set is empty");
    std::vector<std::uint64_t> tp(kThresholdSteps + 1, 0);
    std::vector<std::uint64_t> fp(kThresholdSteps + 1, 0);
    std::uint64_t gt_total = 0;
    for (const auto& sample : validation) {
        std::vector<Rva> gt = sample.gt_starts;
        std::sort(gt.begin(), gt.end());
        gt.erase(std::unique(gt.begin(), gt.end()), gt.end());
        gt_total += gt.size();
        std::set<Rva> seen;
        for (const auto& p : sample.predictions) {
            if (!seen.insert(p.rva).second)
                continue;
            const bool hit = std::binary_search(gt.begin(), gt.end(), p.rva);
            for (int i = 0; i <= kThresholdSteps; ++i) {
                if (!(p.score > grid_threshold(i)))
                    break;
                ++(hit ? tp : fp)[static_cast<std::size_t>(i)];
            }
        }
    }
    ThresholdSweep out;
    out.table.reserve(kThresholdSteps + 1);
    std::size_t best = 0;
    for (int i = 0; i <= kThresholdSteps; ++i) {
        const auto k = static_cast<std::size_t>(i);
        out.table.push_back({grid_threshold(i), metrics_from_counts(tp[k], fp[k], gt_total - tp[k])});
        if (out.table[k].metrics.f1 > out.table[best].metrics.f1)
            best = k;
    }
    out.best_t = out.table[best].t;
    out.best = out.table[best].metrics;
    out.degenerate = out.best.f1 == 0.0;
    return out;
}

ThresholdSweep sweep_threshold(const PrefixTreeModel& model, const std::vector<TrainingSample>& validation)
{
    std::vector<ScoredSample> scored;
    for (const auto& v : validation)
        scored.push_back({score_candidates(model, *v.image), v.gt->starts()});
    return sweep_threshold(scored);
}

ImbalancePrior imbalance_prior(std::uint64_t pos, std::uint64_t neg)
{
    if (pos == 0 || neg == 0)
        throw Error(ErrorKind::DegenerateCounts, fmt::format("pos = {}, neg = {}", pos, neg));
    return {pos, neg, std::log(static_cast<double>(pos) / static_cast<double>(neg))};
}

ImbalancePrior imbalance_prior(const GroundTruth& gt, const PeImage& image)
{
    std::uint64_t bytes = 0;
    for (const auto& r : image.executable_ranges())
        bytes += r.size();
    std::uint64_t pos = 0;
    for (const auto& r : gt.records)
        if (image.is_executable(r.start))
            ++pos;
    return imbalance_prior(pos, bytes - pos);
}

json heuristic_options_json(const HeuristicOptions& o)
{
    return {{"gap_heuristic", o.gap_heuristic},
            {"prologue_patterns", o.prologue_patterns},
            {"pdata_seeds", o.pdata_seeds},
            {"pattern_alignment", o.pattern_alignment}};
}

const std::vector<Bytes>& builtin_prologue_patterns()
{
    static const std::vector<Bytes> patterns = {
        {0x55, 0x8B, 0xEC},             // push ebp; mov ebp, esp
        {0x55, 0x89, 0xE5},             // push ebp; mov ebp, esp (alternate form)
        {0x55, 0x48, 0x89, 0xE5},       // push rbp; mov rbp, rsp
        {0x48, 0x83, 0xEC},             // sub rsp, imm8
        {0x48, 0x81, 0xEC},             // sub rsp, imm32
        {0x48, 0x89, 0x5C, 0x24},       // mov [rsp+d8], rbx
        {0x48, 0x89, 0x4C, 0x24},       // mov [rsp+d8], rcx
        {0x40, 0x53},                   // push rbx (REX)
        {0x40, 0x55},
        {0x40, 0x56},
        {0x40, 0x57},
        {0x53, 0x56, 0x57},             // push ebx; push esi; push edi
        {0x83, 0xEC},                   // sub esp, imm8
        {0x81, 0xEC},                   // sub esp, imm32
    };
    return patterns;
}

std::vector<Rva> heuristic_detect(const PeImage& image, const HeuristicOptions& options)
{
    std::set<Rva> seeds;
    if (image.entry_point() != 0 && image.is_executable(image.entry_point()))
        seeds.insert(image.entry_point());
    if (options.pdata_seeds && image.machine() == Machine::x64 && image.exception_directory().size != 0) {
        try {
            for (const auto& e : parse_pdata(image).entries)
                if (image.is_executable(e.begin))
                    seeds.insert(e.begin);
        } catch (const Error&) {
            // A broken exception directory only costs us seeds.
        }
    }

    std::set<Rva> starts = seeds;
    const auto ranges = image.executable_ranges();
    const auto& patterns = builtin_prologue_patterns();
    while (!seeds.empty()) {
        const DescentResult d = recursive_descent(image, seeds, {options.gap_heuristic, true});
        starts.insert(d.call_targets.begin(), d.call_targets.end());
        if (options.gap_heuristic)
            starts.insert(d.gap_entries.begin(), d.gap_entries.end());
        if (!options.prologue_patterns)
            break;

        std::vector<std::vector<bool>> covered;
        for (const auto& r : ranges)
            covered.emplace_back(r.size(), false);
        for (const auto& insn : d.instructions) {
            for (std::size_t i = 0; i < ranges.size(); ++i) {
                if (!ranges[i].contains(static_cast<Rva>(insn.address)))
                    continue;
                const std::uint64_t end = std::min<std::uint64_t>(insn.end(), ranges[i].end);
                for (std::uint64_t a = insn.address; a < end; ++a)
                    covered[i][a - ranges[i].begin] = true;
            }
        }
        std::set<Rva> fresh;
        const std::uint32_t align = std::max<std::uint32_t>(1, options.pattern_alignment);
        for (std::size_t i = 0; i < ranges.size(); ++i) {
            const ByteView bytes = image.bytes_at(ranges[i].begin, ranges[i].size());
            const std::uint32_t first = (ranges[i].begin + align - 1) / align * align;
            for (std::uint64_t a = first; a < ranges[i].end; a += align) {
                const std::size_t off = a - ranges[i].begin;
                if (covered[i][off] || seeds.count(static_cast<Rva>(a)) != 0)
                    continue;
                for (const auto& p : patterns) {
                    if (off + p.size() <= bytes.size() && std::equal(p.begin(), p.end(), bytes.begin() + off)) {
                        fresh.insert(static_cast<Rva>(a));
                        break;
                    }
                }
            }
        }
        if (fresh.empty())
            break;
        seeds.insert(fresh.begin(), fresh.end());
        starts.insert(fresh.begin(), fresh.end());
    }
    return {starts.begin(), starts.end()};
}

} // namespace funcstart
