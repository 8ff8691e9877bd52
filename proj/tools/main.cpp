#include "manifest.hpp"

#include "funcstart/corpus_stats.hpp"
#include "funcstart/detectors.hpp"
#include "funcstart/disasm.hpp"
#include "funcstart/error.hpp"
#include "funcstart/evaluation.hpp"
#include "funcstart/ground_truth.hpp"
#include "funcstart/io.hpp"
#include "funcstart/padding.hpp"
#include "funcstart/pe_image.hpp"
#include "funcstart/synth_corpus.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <atomic>
#include <fmt/format.h>
#include <iostream>
#include <map>
#include <thread>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace funcstart;
using funcstart::cli::emit;
using funcstart::cli::RunManifest;
using funcstart::cli::Stopwatch;

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

Rva parse_rva(const std::string& s)
{
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(s, &used, 0);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || v > UINT32_MAX)
        throw UsageError(fmt::format("'{}' is not an RVA", s));
    return static_cast<Rva>(v);
}

std::bitset<256> parse_padding_bytes(const std::string& list)
{
    std::bitset<256> out;
    std::size_t pos = 0;
    while (pos <= list.size()) {
        const std::size_t comma = std::min(list.find(',', pos), list.size());
        std::string tok = list.substr(pos, comma - pos);
        if (tok.rfind("0x", 0) == 0 || tok.rfind("0X", 0) == 0)
            tok = tok.substr(2);
        std::size_t used = 0;
        unsigned long v = 0;
        try {
            v = std::stoul(tok, &used, 16);
        } catch (const std::exception&) {
            used = 0;
        }
        if (tok.empty() || used != tok.size() || v > 0xFF)
            throw UsageError(fmt::format("--padding-bytes: '{}' is not a hex byte", tok));
        out.set(v);
        pos = comma + 1;
    }
    return out;
}

std::string padding_list(const std::bitset<256>& b)
{
    std::string out;
    for (std::size_t i = 0; i < 256; ++i)
        if (b.test(i))
            out += fmt::format("{}{:02x}", out.empty() ? "" : ",", i);
    return out;
}

std::string to_hex(ByteView bytes)
{
    std::string out;
    for (auto b : bytes)
        out += fmt::format("{:02x}", b);
    return out;
}

template <typename F>
void parallel_for(std::size_t n, unsigned jobs, F&& fn)
{
    jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(n)));
    if (jobs <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> threads;
    for (unsigned t = 0; t < jobs; ++t) {
        threads.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure)
                        failure = std::current_exception();
                }
            }
        });
    }
    for (auto& t : threads)
        t.join();
    if (failure)
        std::rethrow_exception(failure);
}

struct Sample {
    fs::path pe_path;
    fs::path gt_path;
    PeImage image;
    GroundTruth gt;
    bool has_gt = false;
};

Sample load_sample(const fs::path& pe_path, const std::optional<fs::path>& gt_path)
{
    Sample s;
    s.pe_path = pe_path;
    s.image = parse_pe(read_file(pe_path));
    if (gt_path) {
        s.gt_path = *gt_path;
        s.gt = load_ground_truth(*gt_path);
        s.has_gt = true;
        const BindReport rep = bind_to_image(s.gt, s.image);
        for (Rva r : rep.non_executable)
            std::cerr << fmt::format("warning: {}: start {:#x} is in a non-executable section; ignored\n",
                                     gt_path->string(), r);
    } else {
        s.gt.sample_id = pe_path.stem().string();
        s.gt.machine = s.image.machine();
    }
    return s;
}

void add_text_input(RunManifest& m, const fs::path& path, const std::string& text)
{
    m.add_input(path, ByteView(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<Sample> load_samples(const std::vector<std::string>& inputs, const std::vector<std::string>& gts,
                                 unsigned jobs, RunManifest& manifest, bool require_gt)
{
    if (require_gt && gts.size() != inputs.size())
        throw UsageError(fmt::format("--ground-truth given {} times for {} --input files", gts.size(), inputs.size()));
    if (!gts.empty() && gts.size() != inputs.size())
        throw UsageError("--ground-truth must be given once per --input");
    std::vector<Sample> out(inputs.size());
    parallel_for(inputs.size(), jobs, [&](std::size_t i) {
        out[i] = load_sample(inputs[i], gts.empty() ? std::nullopt : std::optional<fs::path>(gts[i]));
    });
    for (const auto& s : out) {
        manifest.add_input(s.pe_path, s.image.raw_bytes());
        if (s.has_gt)
            add_text_input(manifest, s.gt_path, read_text_file(s.gt_path));
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const Sample& a, const Sample& b) { return a.gt.sample_id < b.gt.sample_id; });
    return out;
}

// Output to a file with manifest, or to stdout when no path is given.
void output(const std::optional<std::string>& out, const std::string& text, RunManifest& manifest, const Stopwatch& sw)
{
    manifest.wall_time = sw.seconds();
    if (out)
        emit(*out, text, manifest);
    else
        std::cout << text;
}

json instruction_json(const Instruction& insn, ByteView bytes)
{
    json j{{"rva", insn.address}, {"length", insn.length}, {"class", insn_class_name(insn.cls)}, {"bytes", to_hex(bytes)}};
    if (insn.rel_target) {
        j["rel_target"] = *insn.rel_target;
        j["target_unmapped"] = insn.target_unmapped;
    }
    return j;
}

ByteView insn_bytes(const PeImage& image, const Instruction& insn)
{
    const Section* s = image.section_containing(static_cast<Rva>(insn.address));
    const std::uint64_t end = std::min<std::uint64_t>(insn.end(), s->raw_range().end);
    return image.bytes_at(static_cast<Rva>(insn.address), static_cast<std::uint32_t>(end - insn.address));
}

struct Detections {
    std::string sample_id;
    std::string detector_id;
    EndEncoding encoding = EndEncoding::starts_only;
    json config = json::object();
    std::vector<Prediction> predictions;
    std::vector<BoundaryPair> boundaries;
};

json detections_json(const Detections& d)
{
    json preds = json::array();
    for (const auto& p : d.predictions)
        preds.push_back({{"rva", p.rva}, {"score", p.score}});
    json j{{"sample_id", d.sample_id},
           {"detector_id", d.detector_id},
           {"encoding", encoding_name(d.encoding)},
           {"config", d.config},
           {"predictions", preds}};
    if (!d.boundaries.empty()) {
        json b = json::array();
        for (const auto& [s, e] : d.boundaries)
            b.push_back({{"start", s}, {"end", e}});
        j["boundaries"] = b;
    }
    return j;
}

Detections detections_from_json(const json& j)
{
    try {
        Detections d;
        d.sample_id = j.at("sample_id").get<std::string>();
        d.detector_id = j.at("detector_id").get<std::string>();
        d.encoding = parse_encoding(j.at("encoding").get<std::string>());
        d.config = j.value("config", json::object());
        for (const auto& p : j.at("predictions"))
            d.predictions.push_back({p.at("rva").get<Rva>(), p.value("score", 1.0)});
        if (j.contains("boundaries"))
            for (const auto& b : j["boundaries"])
                d.boundaries.emplace_back(b.at("start").get<Rva>(), b.at("end").get<Rva>());
        return d;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::SchemaError, fmt::format("detections: {}", e.what()));
    }
}

json parse_json(const std::string& text, const std::string& what)
{
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::SchemaError, fmt::format("{}: {}", what, e.what()));
    }
}

json averages_json(const Averages& a)
{
    return {{"samples", a.samples},
            {"micro", metrics_to_json(a.micro)},
            {"macro", {{"precision", a.macro_precision}, {"recall", a.macro_recall}, {"f1", a.macro_f1}}}};
}

std::vector<EvalReport> load_reports(const std::vector<std::string>& paths, RunManifest& manifest)
{
    std::vector<EvalReport> out;
    for (const auto& p : paths) {
        const std::string text = read_text_file(p);
        add_text_input(manifest, p, text);
        const json j = parse_json(text, p);
        if (j.contains("reports")) {
            for (const auto& r : j["reports"])
                out.push_back(report_from_json(r));
        } else {
            out.push_back(report_from_json(j));
        }
    }
    return out;
}

// Options shared by several subcommands.
struct Common {
    std::vector<std::string> inputs;
    std::vector<std::string> gts;
    std::optional<std::string> out;
    unsigned jobs = 1;
    std::string format = "json";
};

void add_inputs(CLI::App* c, Common& o, bool gt_required)
{
    c->add_option("--input", o.inputs, "PE file (repeatable)")->required()->check(CLI::ExistingFile);
    auto* g = c->add_option("--ground-truth", o.gts, "Ground-truth JSON-lines, one per --input")->check(CLI::ExistingFile);
    if (gt_required)
        g->required();
    c->add_option("--jobs", o.jobs, "Samples processed in parallel")->check(CLI::PositiveNumber);
}

void add_out(CLI::App* c, Common& o, bool required = false)
{
    auto* opt = c->add_option("--out", o.out, "Output file (stdout when omitted)");
    if (required)
        opt->required();
}

void add_format(CLI::App* c, Common& o)
{
    c->add_option("--format", o.format, "Output format")->check(CLI::IsMember({"json", "csv"}));
}

std::string stats_csv(const std::vector<std::pair<std::string, DiversityStats>>& rows)
{
    std::string out = "sample_id,rvas,unique,normalized,prologue_present,prologue_unique,prologue_normalized,"
                      "padding_instances,without_extent,extent_source\n";
    for (const auto& [id, s] : rows)
        out += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", id, s.rva_count, s.byte_unique_count,
                           s.normalized_unique_count, s.prologue_present, s.prologue_unique, s.prologue_normalized,
                           s.padding_instances, s.functions_without_extent, extent_source_name(s.extent_source));
    return out;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Function-start detection toolkit for PE binaries"};
    app.set_version_flag("--version", cli::kToolVersion);
    app.require_subcommand(1);
    Stopwatch sw;
    std::function<void()> run;

    // info
    Common info;
    auto* c_info = app.add_subcommand("info", "Describe a PE image");
    c_info->add_option("--input", info.inputs, "PE file")->required()->expected(1)->check(CLI::ExistingFile);
    add_out(c_info, info);
    c_info->callback([&] {
        run = [&] {
            RunManifest m{"info"};
            const Bytes raw = read_file(info.inputs[0]);
            m.add_input(info.inputs[0], raw);
            const PeImage img = parse_pe(raw);
            json sections = json::array();
            for (const auto& s : img.sections())
                sections.push_back({{"name", s.name},
                                    {"rva", s.rva},
                                    {"virtual_size", s.virtual_size},
                                    {"raw_offset", s.raw_offset},
                                    {"raw_size", s.raw_size},
                                    {"executable", s.executable}});
            json j{{"machine", machine_name(img.machine())},
                   {"image_base", img.image_base()},
                   {"entry_point", img.entry_point()},
                   {"sections", sections}};
            if (img.machine() == Machine::x64) {
                const PdataTable t = parse_pdata(img);
                j["pdata_entries"] = t.entries.size();
                j["pdata_skipped_chains"] = t.skipped_chains;
                j["pdata_skipped_invalid"] = t.skipped_invalid;
            }
            output(info.out, j.dump(2) + "\n", m, sw);
        };
    });

    // stats
    Common stats;
    std::string padding_bytes = "cc";
    std::uint32_t lookback = 20;
    std::string extent = "automatic";
    auto* c_stats = app.add_subcommand("stats", "Dataset diversity statistics per sample");
    add_inputs(c_stats, stats, true);
    add_out(c_stats, stats);
    add_format(c_stats, stats);
    c_stats->add_option("--padding-bytes", padding_bytes, "Padding byte values, comma-separated hex");
    c_stats->add_option("--lookback", lookback, "Padding lookback in bytes")->check(CLI::PositiveNumber);
    c_stats->add_option("--extent-source", extent, "Function extents")
        ->check(CLI::IsMember({"automatic", "ground_truth", "pdata"}));
    c_stats->callback([&] {
        run = [&] {
            RunManifest m{"stats"};
            PaddingConfig pc;
            pc.padding_values = parse_padding_bytes(padding_bytes);
            pc.lookback = lookback;
            const ExtentSource src = extent == "pdata"          ? ExtentSource::pdata
                                     : extent == "ground_truth" ? ExtentSource::ground_truth
                                                                : ExtentSource::automatic;
            m.config = {{"padding_bytes", padding_list(pc.padding_values)}, {"lookback", lookback}, {"extent_source", extent}};
            auto samples = load_samples(stats.inputs, stats.gts, stats.jobs, m, true);
            std::vector<std::pair<std::string, DiversityStats>> rows(samples.size());
            parallel_for(samples.size(), stats.jobs, [&](std::size_t i) {
                rows[i] = {samples[i].gt.sample_id, diversity_stats(samples[i].image, samples[i].gt, pc, src)};
            });
            if (stats.format == "csv") {
                output(stats.out, stats_csv(rows), m, sw);
                return;
            }
            json arr = json::array();
            for (const auto& [id, s] : rows)
                arr.push_back({{"sample_id", id},
                               {"rvas", s.rva_count},
                               {"unique", s.byte_unique_count},
                               {"normalized", s.normalized_unique_count},
                               {"prologue_present", s.prologue_present},
                               {"prologue_unique", s.prologue_unique},
                               {"prologue_normalized", s.prologue_normalized},
                               {"padding_instances", s.padding_instances},
                               {"functions_without_extent", s.functions_without_extent},
                               {"extent_source", extent_source_name(s.extent_source)}});
            output(stats.out, arr.dump(2) + "\n", m, sw);
        };
    });

    // synth
    std::optional<std::string> spec_file;
    std::string out_dir;
    std::optional<std::string> name;
    std::uint32_t count = 1;
    CorpusSpec spec;
    std::string machine = "x64";
    std::string synth_encoding = "exclusive";
    auto* c_synth = app.add_subcommand("synth", "Generate synthetic PE images with ground truth");
    c_synth->add_option("--spec", spec_file, "Corpus spec JSON; flags override it")->check(CLI::ExistingFile);
    c_synth->add_option("--out-dir", out_dir, "Output directory")->required();
    c_synth->add_option("--name", name, "File stem (default: sample id)");
    c_synth->add_option("--count", count, "Images to generate, with consecutive seeds")->check(CLI::PositiveNumber);
    auto* o_machine = c_synth->add_option("--machine", machine)->check(CLI::IsMember({"x86", "x64"}));
    auto* o_seed = c_synth->add_option("--seed", spec.seed);
    auto* o_fc = c_synth->add_option("--functions", spec.function_count)->check(CLI::PositiveNumber);
    auto* o_align = c_synth->add_option("--alignment", spec.alignment);
    auto* o_minpad = c_synth->add_option("--min-padding", spec.min_padding);
    auto* o_pad = c_synth->add_option("--padding-value", spec.padding_value);
    auto* o_dup = c_synth->add_option("--duplicate-fraction", spec.duplicate_fraction);
    auto* o_var = c_synth->add_option("--variant-fraction", spec.immediate_variant_fraction);
    auto* o_calls = c_synth->add_option("--call-density", spec.call_density);
    auto* o_unref = c_synth->add_option("--unreferenced-rate", spec.unreferenced_rate);
    auto* o_minb = c_synth->add_option("--min-body", spec.min_body);
    auto* o_maxb = c_synth->add_option("--max-body", spec.max_body);
    auto* o_enc = c_synth->add_option("--encoding", synth_encoding)
                      ->check(CLI::IsMember({"exclusive", "inclusive", "starts-only"}));
    auto* o_sid = c_synth->add_option("--sample-id", spec.sample_id);
    c_synth->callback([&] {
        run = [&] {
            RunManifest m{"synth"};
            CorpusSpec s;
            if (spec_file) {
                const std::string text = read_text_file(*spec_file);
                add_text_input(m, *spec_file, text);
                s = spec_from_json(parse_json(text, *spec_file));
            }
            if (o_machine->count() || !spec_file)
                s.machine = parse_machine(machine);
            if (o_enc->count() || !spec_file)
                s.encoding = parse_encoding(synth_encoding);
            auto take = [&](CLI::Option* o, auto& dst, const auto& src) {
                if (o->count())
                    dst = src;
            };
            take(o_seed, s.seed, spec.seed);
            take(o_fc, s.function_count, spec.function_count);
            take(o_align, s.alignment, spec.alignment);
            take(o_minpad, s.min_padding, spec.min_padding);
            take(o_pad, s.padding_value, spec.padding_value);
            take(o_dup, s.duplicate_fraction, spec.duplicate_fraction);
            take(o_var, s.immediate_variant_fraction, spec.immediate_variant_fraction);
            take(o_calls, s.call_density, spec.call_density);
            take(o_unref, s.unreferenced_rate, spec.unreferenced_rate);
            take(o_minb, s.min_body, spec.min_body);
            take(o_maxb, s.max_body, spec.max_body);
            take(o_sid, s.sample_id, spec.sample_id);
            fs::create_directories(out_dir);
            const std::string base_id = s.sample_id;
            for (std::uint32_t k = 0; k < count; ++k) {
                CorpusSpec one = s;
                one.seed = s.seed + k;
                if (count > 1)
                    one.sample_id = fmt::format("{}-{:03}", base_id, k);
                const std::string stem = count > 1 ? fmt::format("{}-{:03}", name.value_or(base_id), k)
                                                   : name.value_or(one.sample_id);
                const SynthImage img = generate(one);
                RunManifest mk = m;
                mk.seed = one.seed;
                mk.config = spec_to_json(one);
                mk.wall_time = sw.seconds();
                const fs::path dir(out_dir);
                emit(dir / (stem + ".exe"), img.pe, mk);
                emit(dir / (stem + ".gt.jsonl"), serialize_ground_truth(img.gt), mk);
                emit(dir / (stem + ".spec.json"), spec_to_json(one).dump(2) + "\n", mk);
            }
        };
    });

    // randomize-padding
    Common rp;
    std::uint64_t rp_seed = 0;
    std::string rp_padding = "cc";
    std::uint32_t rp_lookback = 20;
    bool exclude_original = false;
    std::optional<std::string> changes_path;
    auto* c_rp = app.add_subcommand("randomize-padding", "Replace inter-function padding with random bytes");
    c_rp->add_option("--input", rp.inputs, "PE file")->required()->expected(1)->check(CLI::ExistingFile);
    c_rp->add_option("--ground-truth", rp.gts, "Ground truth")->required()->expected(1)->check(CLI::ExistingFile);
    c_rp->add_option("--seed", rp_seed, "Random seed")->required();
    c_rp->add_option("--padding-bytes", rp_padding, "Padding byte values, comma-separated hex");
    c_rp->add_option("--lookback", rp_lookback, "Bytes inspected before each start")->check(CLI::PositiveNumber);
    c_rp->add_flag("--exclude-original", exclude_original, "Never write a byte equal to the one it replaces");
    c_rp->add_option("--out", rp.out, "Modified PE")->required();
    c_rp->add_option("--changes", changes_path, "Change log (default: <out>.changes.json)");
    c_rp->callback([&] {
        run = [&] {
            RunManifest m{"randomize-padding"};
            m.seed = rp_seed;
            auto samples = load_samples(rp.inputs, rp.gts, 1, m, true);
            const Sample& s = samples.front();
            PaddingConfig pc;
            pc.seed = rp_seed;
            pc.lookback = rp_lookback;
            pc.padding_values = parse_padding_bytes(rp_padding);
            pc.exclude_original = exclude_original;
            m.config = {{"padding_bytes", padding_list(pc.padding_values)},
                        {"lookback", pc.lookback},
                        {"exclude_original", exclude_original}};
            const RandomizeResult r = randomize_padding(s.image, s.gt, pc);
            json log = json::array();
            for (const auto& c : r.changes)
                log.push_back({{"rva", c.rva}, {"old", c.old_value}, {"new", c.new_value}});
            const json doc{{"sample_id", s.gt.sample_id},
                           {"seed", rp_seed},
                           {"ownership_mode", ownership_mode_name(r.mode)},
                           {"lookback", pc.lookback},
                           {"padding_bytes", padding_list(pc.padding_values)},
                           {"changes", log}};
            m.wall_time = sw.seconds();
            emit(*rp.out, r.bytes, m);
            emit(changes_path.value_or(*rp.out + ".changes.json"), doc.dump(2) + "\n", m);
        };
    });

    // train
    Common tr;
    PrefixTreeConfig tcfg;
    auto* c_train = app.add_subcommand("train", "Train the weighted prefix tree");
    add_inputs(c_train, tr, true);
    c_train->add_option("--out", tr.out, "Model file")->required();
    c_train->add_option("--depth", tcfg.depth)->check(CLI::PositiveNumber);
    c_train->add_option("--context-window", tcfg.context_window);
    c_train->add_option("--min-support", tcfg.min_support);
    c_train->add_option("--alignment-filter", tcfg.alignment_filter);
    c_train->callback([&] {
        run = [&] {
            RunManifest m{"train"};
            m.config = prefix_tree_config_json(tcfg);
            auto samples = load_samples(tr.inputs, tr.gts, tr.jobs, m, true);
            std::vector<TrainingSample> corpus;
            std::uint64_t pos = 0, neg = 0;
            for (const auto& s : samples) {
                corpus.push_back({&s.image, &s.gt});
                try {
                    const ImbalancePrior p = imbalance_prior(s.gt, s.image);
                    pos += p.pos;
                    neg += p.neg;
                } catch (const Error&) {
                }
            }
            const PrefixTreeModel model = train_prefix_tree(corpus, tcfg);
            m.wall_time = sw.seconds();
            emit(*tr.out, model.serialize(), m);
            json summary{{"nodes", model.nodes().size()}, {"pos", pos}, {"neg", neg}};
            if (pos > 0 && neg > 0)
                summary["b0"] = imbalance_prior(pos, neg).b0;
            std::cout << summary.dump() << "\n";
        };
    });

    // detect
    Common dt;
    std::optional<std::string> model_path;
    double threshold = 0.5;
    bool heuristic = false;
    bool no_gap = false, no_prologues = false, no_pdata = false;
    std::optional<std::string> det_sample_id;
    auto* c_detect = app.add_subcommand("detect", "Detect function starts");
    c_detect->add_option("--input", dt.inputs, "PE file")->required()->expected(1)->check(CLI::ExistingFile);
    auto* o_model = c_detect->add_option("--model", model_path, "Prefix-tree model")->check(CLI::ExistingFile);
    c_detect->add_option("--threshold", threshold, "Score threshold t (start iff score > t)")->check(CLI::Range(0.0, 1.0));
    auto* o_heur = c_detect->add_flag("--heuristic", heuristic, "Recursive descent with gap analysis");
    c_detect->add_flag("--no-gap", no_gap, "Heuristic: disable the gap heuristic");
    c_detect->add_flag("--no-prologues", no_prologues, "Heuristic: disable prologue matching");
    c_detect->add_flag("--no-pdata", no_pdata, "Heuristic: do not seed from .pdata");
    c_detect->add_option("--sample-id", det_sample_id, "Sample id (default: input file stem)");
    o_model->excludes(o_heur);
    add_out(c_detect, dt);
    c_detect->callback([&] {
        if (!model_path && !heuristic)
            throw CLI::RequiredError("--model or --heuristic");
        run = [&] {
            RunManifest m{"detect"};
            const Bytes raw = read_file(dt.inputs[0]);
            m.add_input(dt.inputs[0], raw);
            const PeImage img = parse_pe(raw);
            Detections d;
            d.sample_id = det_sample_id.value_or(fs::path(dt.inputs[0]).stem().string());
            Stopwatch detect_time;
            if (model_path) {
                const Bytes mb = read_file(*model_path);
                m.add_input(*model_path, mb);
                const PrefixTreeModel model = PrefixTreeModel::deserialize(mb);
                d.detector_id = "prefix-tree";
                d.config = prefix_tree_config_json(model.config());
                d.config["threshold"] = threshold;
                for (const auto& p : score_candidates(model, img))
                    if (p.score > threshold)
                        d.predictions.push_back(p);
            } else {
                HeuristicOptions ho;
                ho.gap_heuristic = !no_gap;
                ho.prologue_patterns = !no_prologues;
                ho.pdata_seeds = !no_pdata;
                d.detector_id = "heuristic";
                d.config = heuristic_options_json(ho);
                for (Rva r : heuristic_detect(img, ho))
                    d.predictions.push_back({r, 1.0});
            }
            m.config = d.config;
            m.wall_time = detect_time.seconds();
            const std::string text = detections_json(d).dump(2) + "\n";
            if (dt.out)
                emit(*dt.out, text, m);
            else
                std::cout << text;
        };
    });

    // sweep
    Common swp;
    std::string sweep_model;
    auto* c_sweep = app.add_subcommand("sweep", "Pick the threshold with the best F1 on validation data");
    c_sweep->add_option("--model", sweep_model, "Prefix-tree model")->required()->check(CLI::ExistingFile);
    add_inputs(c_sweep, swp, true);
    add_out(c_sweep, swp);
    add_format(c_sweep, swp);
    c_sweep->callback([&] {
        run = [&] {
            RunManifest m{"sweep"};
            const Bytes mb = read_file(sweep_model);
            m.add_input(sweep_model, mb);
            const PrefixTreeModel model = PrefixTreeModel::deserialize(mb);
            auto samples = load_samples(swp.inputs, swp.gts, swp.jobs, m, true);
            std::vector<ScoredSample> scored(samples.size());
            parallel_for(samples.size(), swp.jobs, [&](std::size_t i) {
                scored[i] = {score_candidates(model, samples[i].image), samples[i].gt.starts()};
            });
            const ThresholdSweep r = sweep_threshold(scored);
            m.config = prefix_tree_config_json(model.config());
            if (swp.format == "csv") {
                std::string csv = "t,tp,fp,fn,precision,recall,f1\n";
                for (const auto& row : r.table)
                    csv += fmt::format("{:.2f},{},{},{},{:.6f},{:.6f},{:.6f}\n", row.t, row.metrics.tp, row.metrics.fp,
                                       row.metrics.fn, row.metrics.precision, row.metrics.recall, row.metrics.f1);
                output(swp.out, csv, m, sw);
                return;
            }
            json table = json::array();
            for (const auto& row : r.table)
                table.push_back({{"t", row.t}, {"metrics", metrics_to_json(row.metrics)}});
            const json doc{{"best_t", r.best_t}, {"best", metrics_to_json(r.best)}, {"degenerate", r.degenerate}, {"table", table}};
            output(swp.out, doc.dump(2) + "\n", m, sw);
        };
    });

    // eval
    Common ev;
    std::vector<std::string> det_paths;
    std::uint32_t tolerance = 0;
    bool unsafe_acc = false;
    bool include_timing = false;
    auto* c_eval = app.add_subcommand("eval", "Score detections against ground truth");
    c_eval->add_option("--ground-truth", ev.gts, "Ground truth, one per --detections")->required()->check(CLI::ExistingFile);
    c_eval->add_option("--detections", det_paths, "Detection file (repeatable)")->required()->check(CLI::ExistingFile);
    c_eval->add_option("--input", ev.inputs, "PE files, needed for --unsafe-accuracy")->check(CLI::ExistingFile);
    c_eval->add_option("--tolerance", tolerance, "Match window in bytes (0 = exact match)");
    c_eval->add_flag("--unsafe-accuracy", unsafe_acc, "Also report accuracy (misleading under class imbalance)");
    c_eval->add_flag("--include-timing", include_timing, "Copy detector wall time from the detection manifest");
    add_out(c_eval, ev);
    c_eval->callback([&] {
        if (ev.gts.size() != det_paths.size())
            throw CLI::ValidationError("--detections", "must be given once per --ground-truth");
        if (unsafe_acc && ev.inputs.size() != det_paths.size())
            throw CLI::ValidationError("--unsafe-accuracy", "needs one --input per --detections");
        run = [&] {
            RunManifest m{"eval"};
            m.config = {{"tolerance", tolerance}, {"unsafe_accuracy", unsafe_acc}, {"include_timing", include_timing}};
            std::vector<EvalReport> reports;
            for (std::size_t i = 0; i < det_paths.size(); ++i) {
                const std::string gt_text = read_text_file(ev.gts[i]);
                add_text_input(m, ev.gts[i], gt_text);
                const GroundTruth gt = parse_ground_truth(gt_text);
                const std::string det_text = read_text_file(det_paths[i]);
                add_text_input(m, det_paths[i], det_text);
                const Detections d = detections_from_json(parse_json(det_text, det_paths[i]));
                std::vector<Rva> pred;
                for (const auto& p : d.predictions)
                    pred.push_back(p.rva);
                double wall = 0.0;
                if (include_timing && fs::exists(cli::manifest_path(det_paths[i])))
                    wall = parse_json(read_text_file(cli::manifest_path(det_paths[i])), "manifest").value("wall_time", 0.0);
                EvalReport r = evaluate_run(gt, pred, d.detector_id, d.config, wall, tolerance);
                if (!d.boundaries.empty() && gt.has_ends()) {
                    if (d.encoding == EndEncoding::starts_only)
                        throw Error(ErrorKind::EncodingMismatch, "boundary detections declare starts_only");
                    const GroundTruth conv = convert_encoding(gt, d.encoding);
                    r.boundary_metrics = score_boundaries(d.boundaries, d.encoding, boundary_pairs(conv), conv.encoding);
                }
                if (unsafe_acc) {
                    const Bytes raw = read_file(ev.inputs[i]);
                    m.add_input(ev.inputs[i], raw);
                    std::uint64_t bytes = 0;
                    for (const auto& rr : parse_pe(raw).executable_ranges())
                        bytes += rr.size();
                    r.accuracy = unsafe_accuracy(r.metrics, bytes);
                }
                reports.push_back(std::move(r));
            }
            std::stable_sort(reports.begin(), reports.end(), [](const EvalReport& a, const EvalReport& b) {
                return std::tie(a.sample_id, a.detector_id) < std::tie(b.sample_id, b.detector_id);
            });
            json arr = json::array();
            for (const auto& r : reports)
                arr.push_back(report_to_json(r));
            const json doc{{"reports", arr}, {"averages", averages_json(average(reports))}};
            output(ev.out, doc.dump(2) + "\n", m, sw);
        };
    });

    // compare
    Common cmp;
    std::vector<std::string> before_paths;
    std::vector<std::string> after_paths;
    auto* c_cmp = app.add_subcommand("compare", "Join eval reports into a comparison table");
    c_cmp->add_option("--report", before_paths, "Eval report (repeatable)")->required()->check(CLI::ExistingFile);
    c_cmp->add_option("--after", after_paths, "Reports of a second variant, for delta rows")->check(CLI::ExistingFile);
    add_out(c_cmp, cmp);
    add_format(c_cmp, cmp);
    c_cmp->callback([&] {
        run = [&] {
            RunManifest m{"compare"};
            const auto before = load_reports(before_paths, m);
            const auto after = load_reports(after_paths, m);
            const auto rows = compare(before);
            const auto deltas = delta_rows(before, after);
            if (cmp.format == "csv") {
                output(cmp.out, after_paths.empty() ? comparison_csv(rows) : delta_csv(deltas), m, sw);
                return;
            }
            json jrows = json::array();
            for (const auto& r : rows)
                jrows.push_back({{"sample_id", r.sample_id},
                                 {"detector_id", r.detector_id},
                                 {"metrics", metrics_to_json(r.metrics)},
                                 {"wall_time", r.wall_time}});
            std::map<std::string, std::vector<EvalReport>> by_detector;
            for (const auto& r : before)
                by_detector[r.detector_id].push_back(r);
            json avg = json::object();
            for (const auto& [id, rs] : by_detector)
                avg[id] = averages_json(average(rs));
            json doc{{"rows", jrows}, {"averages", avg}};
            if (!after_paths.empty()) {
                json jd = json::array();
                for (const auto& d : deltas)
                    jd.push_back({{"sample_id", d.sample_id},
                                  {"detector_id", d.detector_id},
                                  {"f1_before", d.f1_before},
                                  {"f1_after", d.f1_after},
                                  {"f1_delta", d.f1_delta()},
                                  {"precision_before", d.precision_before},
                                  {"precision_after", d.precision_after},
                                  {"recall_before", d.recall_before},
                                  {"recall_after", d.recall_after}});
                doc["deltas"] = jd;
            }
            output(cmp.out, doc.dump(2) + "\n", m, sw);
        };
    });

    // external-import
    Common ext;
    std::string ext_encoding = "starts-only";
    std::string ext_detector;
    std::string ext_sample;
    auto* c_ext = app.add_subcommand("external-import", "Convert a third-party result list into a detection file");
    c_ext->add_option("--input", ext.inputs, "JSON list of {rva} / {rva, score} / {start, end}")
        ->required()
        ->expected(1)
        ->check(CLI::ExistingFile);
    c_ext->add_option("--encoding", ext_encoding, "End encoding of the imported records")
        ->check(CLI::IsMember({"exclusive", "inclusive", "starts-only"}));
    c_ext->add_option("--detector-id", ext_detector, "Name of the external tool")->required();
    c_ext->add_option("--sample-id", ext_sample, "Sample id the results belong to")->required();
    add_out(c_ext, ext);
    c_ext->callback([&] {
        run = [&] {
            RunManifest m{"external-import"};
            const std::string text = read_text_file(ext.inputs[0]);
            add_text_input(m, ext.inputs[0], text);
            json j = parse_json(text, ext.inputs[0]);
            if (j.is_object() && j.contains("predictions"))
                j = j["predictions"];
            if (!j.is_array())
                throw Error(ErrorKind::SchemaError, "expected a JSON list of records");
            Detections d;
            d.sample_id = ext_sample;
            d.detector_id = ext_detector;
            d.encoding = parse_encoding(ext_encoding);
            d.config = {{"source", fs::path(ext.inputs[0]).filename().string()}};
            m.config = {{"encoding", ext_encoding}, {"detector_id", ext_detector}};
            std::set<Rva> seen;
            try {
                for (const auto& e : j) {
                    const Rva start = e.contains("rva") ? e["rva"].get<Rva>() : e.at("start").get<Rva>();
                    if (seen.insert(start).second)
                        d.predictions.push_back({start, e.value("score", 1.0)});
                    if (e.contains("end") && !e["end"].is_null()) {
                        if (d.encoding == EndEncoding::starts_only)
                            throw Error(ErrorKind::EncodingMismatch, "records carry ends but --encoding is starts-only");
                        d.boundaries.emplace_back(start, e["end"].get<Rva>());
                    }
                }
            } catch (const json::exception& e) {
                throw Error(ErrorKind::SchemaError, fmt::format("external results: {}", e.what()));
            }
            std::sort(d.predictions.begin(), d.predictions.end(),
                      [](const Prediction& a, const Prediction& b) { return a.rva < b.rva; });
            std::sort(d.boundaries.begin(), d.boundaries.end());
            output(ext.out, detections_json(d).dump(2) + "\n", m, sw);
        };
    });

    // disasm
    Common da;
    std::optional<std::string> da_rva;
    std::optional<std::uint32_t> da_size;
    bool recursive = false;
    bool gap = false;
    auto* c_da = app.add_subcommand("disasm", "JSON instruction listing for debugging");
    c_da->add_option("--input", da.inputs, "PE file")->required()->expected(1)->check(CLI::ExistingFile);
    c_da->add_option("--rva", da_rva, "Start RVA (default: each executable range)");
    c_da->add_option("--size", da_size, "Bytes to sweep from --rva");
    c_da->add_flag("--recursive", recursive, "Recursive descent from the entry point (or --rva)");
    c_da->add_flag("--gap-heuristic", gap, "With --recursive: resume after block ends");
    add_out(c_da, da);
    c_da->callback([&] {
        run = [&] {
            RunManifest m{"disasm"};
            const Bytes raw = read_file(da.inputs[0]);
            m.add_input(da.inputs[0], raw);
            const PeImage img = parse_pe(raw);
            json arr = json::array();
            json extra = json::object();
            if (recursive) {
                std::set<Rva> seeds;
                seeds.insert(da_rva ? parse_rva(*da_rva) : img.entry_point());
                const DescentResult d = recursive_descent(img, seeds, {gap, true});
                for (const auto& insn : d.instructions)
                    arr.push_back(instruction_json(insn, insn_bytes(img, insn)));
                extra["call_targets"] = d.call_targets;
                extra["gap_entries"] = d.gap_entries;
                extra["unmapped_targets"] = d.unmapped_targets;
            } else {
                std::vector<RvaRange> ranges;
                if (da_rva) {
                    const Rva begin = parse_rva(*da_rva);
                    const Section* s = img.section_containing(begin);
                    const Rva end = da_size ? begin + *da_size : (s ? s->raw_range().end : begin);
                    ranges.push_back({begin, end});
                } else {
                    ranges = img.executable_ranges();
                }
                bool truncated = false;
                for (const auto& r : ranges) {
                    const SweepResult res = linear_sweep(img, r);
                    truncated = truncated || res.truncated;
                    for (const auto& insn : res.instructions)
                        arr.push_back(instruction_json(insn, insn_bytes(img, insn)));
                }
                extra["truncated"] = truncated;
            }
            m.config = {{"recursive", recursive}, {"gap_heuristic", gap}};
            json doc{{"instructions", arr}};
            doc.update(extra);
            output(da.out, doc.dump(1) + "\n", m, sw);
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    try {
        run();
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << error_kind_name(e.kind()) << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
