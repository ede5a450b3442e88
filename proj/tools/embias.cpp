#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "embias/embias.hpp"

namespace fs = std::filesystem;
using namespace embias;

namespace {

/// Configuration problems detected after CLI11 parsing; exit code 1.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::pair<std::string, std::string> parse_anchor_pair(const std::string& arg) {
    const auto comma = arg.find(',');
    if (comma == std::string::npos || comma == 0 || comma + 1 == arg.size() ||
        arg.find(',', comma + 1) != std::string::npos)
        throw ConfigError("--anchors expects POS,NEG; got '" + arg + "'");
    return {arg.substr(0, comma), arg.substr(comma + 1)};
}

std::pair<std::string, std::string> parse_named_path(const std::string& arg, const char* flag) {
    const auto eq = arg.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == arg.size())
        throw ConfigError(std::string(flag) + " expects NAME=PATH; got '" + arg + "'");
    std::pair<std::string, std::string> named{arg.substr(0, eq), arg.substr(eq + 1)};
    if (!fs::exists(named.second))
        throw ConfigError(std::string(flag) + " path does not exist: " + named.second);
    return named;
}

fs::path prepare_out_dir(const std::string& out) {
    fs::path dir(out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (!fs::is_directory(dir))
        throw ConfigError("cannot create output directory: " + out);
    return dir;
}

Embedding load(const std::string& path, const std::string& format, bool normalize) {
    Embedding emb = load_embedding(path, parse_format(format));
    log_info("loaded " + path + ": " + std::to_string(emb.size()) + " vectors, dim " +
             std::to_string(emb.dim()));
    return normalize ? normalize_rows(emb) : emb;
}

/// Deterministic background sample for reports: vocabulary order is
/// preserved and excluded tokens never appear.
std::vector<std::string> sample_background(const Embedding& emb,
                                           const std::vector<std::string>& exclude,
                                           std::size_t target, std::uint32_t seed) {
    const std::unordered_set<std::string> skip(exclude.begin(), exclude.end());
    std::vector<std::string> pool;
    for (std::size_t i = 0; i < emb.size(); ++i)
        if (!skip.contains(emb.token(i))) pool.push_back(emb.token(i));
    if (pool.size() <= target) return pool;
    std::vector<std::string> out;
    out.reserve(target);
    std::mt19937 rng(seed);
    std::sample(pool.begin(), pool.end(), std::back_inserter(out), target, rng);
    return out;
}

struct ProjectOpts {
    std::string embedding;
    std::string embedding2;
    std::string format = "auto";
    std::string anchors;
    std::string words;
    std::string on_oov = "skip";
    std::string out = ".";
    bool normalize = false;
};

int run_project(const ProjectOpts& o) {
    const auto [pos, neg] = parse_anchor_pair(o.anchors);
    const fs::path out = prepare_out_dir(o.out);
    const std::vector<std::string> words = load_word_list(o.words);
    const Embedding emb = load(o.embedding, o.format, o.normalize);
    const Direction dir = bias_direction(emb, pos, neg);

    if (o.embedding2.empty()) {
        const OnOov policy = o.on_oov == "error" ? OnOov::error : OnOov::skip;
        const auto records = project_words(emb, words, dir, policy);
        write_projection_csv(records, out / "projections.csv");
        std::cout << "wrote " << (out / "projections.csv").string() << " (" << records.size()
                  << " of " << words.size() << " words)\n";
        return 0;
    }

    const Embedding emb2 = load(o.embedding2, o.format, o.normalize);
    const Direction dir2 = bias_direction(emb2, pos, neg);
    const CrossReport report = cross_embedding_report(emb, emb2, words, dir, dir2);
    write_cross_report_csv(report, out / "projections.csv");

    std::vector<ScatterPoint> points;
    points.reserve(report.records.size());
    for (const PairedProjection& r : report.records) points.push_back({r.proj_a, r.proj_b});
    ScatterOptions sopts;
    sopts.title = "projection onto " + pos + " - " + neg;
    sopts.x_label = "projection A";
    sopts.y_label = "projection B";
    write_scatter_svg(points, out / "projections.svg", sopts);
    std::cout << "wrote " << (out / "projections.csv").string() << " and "
              << (out / "projections.svg").string() << " (" << report.records.size() << " of "
              << report.n_requested << " words)\n";
    return 0;
}

struct AnalogiesOpts {
    std::string embedding;
    std::string format = "auto";
    std::string anchors;
    std::string words;
    std::string out = ".";
    double delta = 1.0;
    std::uint64_t top_k = 1000;
    std::uint64_t max_candidates = 50000;
    bool export_tasks = false;
};

int run_analogies(const AnalogiesOpts& o) {
    const auto [pos, neg] = parse_anchor_pair(o.anchors);
    const fs::path out = prepare_out_dir(o.out);
    std::optional<std::vector<std::string>> candidates;
    if (!o.words.empty()) candidates = load_word_list(o.words);
    const Embedding emb = load(o.embedding, o.format, false);
    const Direction dir = bias_direction(emb, pos, neg);
    const std::vector<AnalogyPair> pairs = generate_analogies(
        emb, dir, o.delta, o.top_k, std::move(candidates), true, o.max_candidates);
    write_analogies_csv(pairs, out / "analogies.csv");
    std::cout << "wrote " << (out / "analogies.csv").string() << " (" << pairs.size()
              << " pairs)\n";
    if (o.export_tasks) {
        export_rating_tasks(pairs, pos, neg, out / "rating_tasks.csv");
        std::cout << "wrote " << (out / "rating_tasks.csv").string() << "\n";
    }
    return 0;
}

struct ExportTasksOpts {
    std::string analogies;
    std::string anchors;
    std::string out = ".";
};

int run_export_tasks(const ExportTasksOpts& o) {
    const auto [pos, neg] = parse_anchor_pair(o.anchors);
    const fs::path out = prepare_out_dir(o.out);
    const std::vector<AnalogyPair> pairs = read_analogies_csv(o.analogies);
    export_rating_tasks(pairs, pos, neg, out / "rating_tasks.csv");
    std::cout << "wrote " << (out / "rating_tasks.csv").string() << " (" << pairs.size()
              << " tasks)\n";
    return 0;
}

struct AggregateOpts {
    std::string tasks;
    std::string responses;
    std::string out = ".";
};

int run_aggregate(const AggregateOpts& o) {
    const fs::path out = prepare_out_dir(o.out);
    const std::vector<RatingTask> tasks = load_rating_tasks(o.tasks);
    const RatingSummary summary = aggregate_ratings(tasks, o.responses);
    write_aggregate_csv(summary, out / "aggregate.csv");
    std::cout << "wrote " << (out / "aggregate.csv").string() << ": judgments="
              << summary.n_judgments
              << " stereotype_fraction=" << format_double(summary.fraction_stereotype)
              << " nonsensical_fraction=" << format_double(summary.fraction_nonsensical) << "\n";
    return 0;
}

struct DebiasOpts {
    std::string embedding;
    std::string format = "auto";
    std::string seeds;
    std::string background;
    std::vector<std::string> anchors;
    std::string out = ".";
    double lambda = 0.2;
    double tol = 1e-8;
    std::uint64_t max_iters = 5000;
    std::uint64_t sample = 500;
    std::uint32_t seed = 42;
    bool normalize = false;
};

int run_debias(const DebiasOpts& o) {
    std::vector<std::pair<std::string, std::string>> pairs;
    pairs.reserve(o.anchors.size());
    for (const std::string& a : o.anchors) pairs.push_back(parse_anchor_pair(a));
    const fs::path out = prepare_out_dir(o.out);

    const Embedding emb = load(o.embedding, o.format, o.normalize);
    const std::vector<std::string> seeds = load_word_list(o.seeds);
    if (seeds.empty())
        throw ParseError("seed list is empty, refusing a no-op debias: " + o.seeds);
    std::optional<std::vector<std::string>> background;
    if (!o.background.empty()) background = load_word_list(o.background);

    const DebiasProblem problem = build_problem(emb, seeds, pairs, background, o.lambda);
    SolverOptions sopts;
    sopts.max_iters = o.max_iters;
    sopts.tol = o.tol;
    const DebiasSolution sol = solve_sdp(problem, sopts);
    const Embedding debiased = apply_transform(emb, sol.T);

    write_transform(sol.T, out / "transform.txt");
    write_embedding(debiased, out / "debiased.txt", EmbeddingFormat::word2vec_text);
    write_diagnostics_csv(sol, o.lambda, out / "diagnostics.csv");

    std::vector<std::string> exclude = seeds;
    for (const auto& [p, n] : pairs) {
        exclude.push_back(p);
        exclude.push_back(n);
    }
    const std::vector<std::string> report_bg =
        background ? *background : sample_background(emb, exclude, o.sample, o.seed);
    try {
        const DebiasReport report = debias_report(emb, debiased, pairs, seeds, report_bg);
        write_report_csv(report, out / "report.csv");
        write_report_pairs_csv(report, out / "report_pairs.csv");
        for (const DebiasReportEntry& e : report.entries)
            std::cout << e.pos_anchor << "," << e.neg_anchor << ": seed variance "
                      << format_double(e.seeds.variance_before) << " -> "
                      << format_double(e.seeds.variance_after) << "; background variance "
                      << format_double(e.background.variance_before) << " -> "
                      << format_double(e.background.variance_after) << "\n";
    } catch (const InvalidArgument& e) {
        log_warn(std::string("skipping before/after report: ") + e.what());
    }

    std::cout << (sol.converged ? "converged" : "did not converge") << " after "
              << sol.iterations << " iterations; objective "
              << format_double(sol.objective_trace.back()) << "\n";
    if (!sol.converged) {
        std::cerr << "embias: solver did not converge within " << o.max_iters
                  << " iterations (artifacts written with converged=false)\n";
        return 3;
    }
    return 0;
}

struct EvalOpts {
    std::string embedding;
    std::string embedding2;
    std::string format = "auto";
    std::string out = ".";
    std::vector<std::string> similarity;
    std::vector<std::string> analogy;
};

int run_eval(const EvalOpts& o) {
    if (o.similarity.empty() && o.analogy.empty())
        throw ConfigError("eval needs at least one --similarity or --analogy dataset");
    std::vector<std::pair<std::string, std::string>> sim_specs;
    std::vector<std::pair<std::string, std::string>> an_specs;
    for (const std::string& s : o.similarity)
        sim_specs.push_back(parse_named_path(s, "--similarity"));
    for (const std::string& s : o.analogy) an_specs.push_back(parse_named_path(s, "--analogy"));
    const fs::path out = prepare_out_dir(o.out);

    std::vector<std::pair<std::string, Embedding>> embeddings;
    embeddings.emplace_back(o.embedding2.empty() ? "embedding" : "before",
                            load(o.embedding, o.format, false));
    if (!o.embedding2.empty()) embeddings.emplace_back("after", load(o.embedding2, o.format, false));

    std::vector<SimilarityDataset> sim_ds;
    for (const auto& [name, path] : sim_specs) sim_ds.push_back(load_similarity_dataset(path, name));
    std::vector<AnalogyDataset> an_ds;
    for (const auto& [name, path] : an_specs) an_ds.push_back(load_analogy_dataset(path, name));

    std::vector<std::pair<std::string, BenchmarkResult>> rows;
    for (const auto& [label, emb] : embeddings) {
        for (const SimilarityDataset& ds : sim_ds)
            rows.emplace_back(label, evaluate_similarity(emb, ds));
        for (const AnalogyDataset& ds : an_ds) rows.emplace_back(label, evaluate_analogy(emb, ds));
    }
    write_benchmark_csv(rows, out / "eval.csv");
    for (const auto& [label, r] : rows)
        std::cout << label << "," << r.name << ": metric=" << format_double(r.metric)
                  << " coverage=" << format_double(r.coverage) << "\n";
    std::cout << "wrote " << (out / "eval.csv").string() << "\n";
    return 0;
}

struct CompareOpts {
    std::string embedding;
    std::string embedding2;
    std::string format = "auto";
    std::string anchors;
    std::string words;
    std::string background;
    std::string out = ".";
    std::uint64_t sample = 500;
    std::uint32_t seed = 42;
    bool normalize = false;
};

int run_compare(const CompareOpts& o) {
    const auto [pos, neg] = parse_anchor_pair(o.anchors);
    const fs::path out = prepare_out_dir(o.out);
    const Embedding before = load(o.embedding, o.format, o.normalize);
    const Embedding after = load(o.embedding2, o.format, o.normalize);
    const std::vector<std::string> words = load_word_list(o.words);

    std::vector<std::string> exclude = words;
    exclude.push_back(pos);
    exclude.push_back(neg);
    const std::vector<std::string> bg = o.background.empty()
                                            ? sample_background(before, exclude, o.sample, o.seed)
                                            : load_word_list(o.background);

    const std::vector<std::pair<std::string, std::string>> pairs{{pos, neg}};
    const DebiasReport report = debias_report(before, after, pairs, words, bg);
    write_report_csv(report, out / "compare_variance.csv");
    write_report_pairs_csv(report, out / "compare.csv");

    std::vector<ScatterPoint> points;
    for (const PairedProjection& p : report.entries[0].pairs) points.push_back({p.proj_a, p.proj_b});
    ScatterOptions sopts;
    sopts.title = "|projection| before vs after (" + pos + " - " + neg + ")";
    sopts.x_label = "before";
    sopts.y_label = "after";
    write_scatter_svg(points, out / "compare.svg", sopts);

    for (const DebiasReportEntry& e : report.entries)
        std::cout << e.pos_anchor << "," << e.neg_anchor << ": word variance "
                  << format_double(e.seeds.variance_before) << " -> "
                  << format_double(e.seeds.variance_after) << "; background variance "
                  << format_double(e.background.variance_before) << " -> "
                  << format_double(e.background.variance_after) << "\n";
    std::cout << "wrote " << (out / "compare.csv").string() << ", "
              << (out / "compare_variance.csv").string() << ", "
              << (out / "compare.svg").string() << "\n";
    return 0;
}

const std::vector<std::string> kFormats{"auto", "word2vec-binary", "word2vec-text", "glove-text"};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"embias: measure and reduce stereotype directions in word embeddings"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "embias 0.1.0");

    std::function<int()> runner;

    auto fmt_opt = [](CLI::App* cmd, std::string& target) {
        cmd->add_option("--format", target, "embedding file format")
            ->check(CLI::IsMember(kFormats))
            ->capture_default_str();
    };

    {
        auto o = std::make_shared<ProjectOpts>();
        CLI::App* cmd = app.add_subcommand(
            "project", "project a word list onto an anchor-pair direction");
        cmd->add_option("--embedding", o->embedding, "embedding file")
            ->required()
            ->check(CLI::ExistingFile);
        cmd->add_option("--embedding2", o->embedding2,
                        "second embedding for a side-by-side report")
            ->check(CLI::ExistingFile);
        fmt_opt(cmd, o->format);
        cmd->add_option("--anchors", o->anchors, "direction anchors as POS,NEG")->required();
        cmd->add_option("--words", o->words, "word list file")
            ->required()
            ->check(CLI::ExistingFile);
        cmd->add_option("--on-oov", o->on_oov, "out-of-vocabulary policy")
            ->check(CLI::IsMember({"skip", "error"}))
            ->capture_default_str();
        cmd->add_flag("--normalize", o->normalize, "normalize embedding rows before projecting");
        cmd->add_option("--out", o->out, "output directory")->capture_default_str();
        cmd->callback([&runner, o] { runner = [o] { return run_project(*o); }; });
    }

    {
        auto o = std::make_shared<AnalogiesOpts>();
        CLI::App* cmd = app.add_subcommand(
            "analogies", "generate direction-aligned analogy pairs (he:x :: she:y)");
        cmd->add_option("--embedding", o->embedding, "embedding file")
            ->required()
            ->check(CLI::ExistingFile);
        fmt_opt(cmd, o->format);
        cmd->add_option("--anchors", o->anchors, "direction anchors as POS,NEG")->required();
        cmd->add_option("--words", o->words, "candidate word list (default: vocabulary order)")
            ->check(CLI::ExistingFile);
        cmd->add_option("--delta", o->delta, "pair distance threshold")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
        cmd->add_option("--top-k", o->top_k, "number of pairs to keep")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
        cmd->add_option("--max-candidates", o->max_candidates,
                        "vocabulary prefix size when no word list is given")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
        cmd->add_flag("--export-tasks", o->export_tasks, "also write the crowd rating-task CSV");
        cmd->add_option("--out", o->out, "output directory")->capture_default_str();
        cmd->callback([&runner, o] { runner = [o] { return run_analogies(*o); }; });
    }

    {
        auto o = std::make_shared<ExportTasksOpts>();
        CLI::App* cmd = app.add_subcommand(
            "export-tasks", "turn a generated analogy CSV into crowd rating tasks");
        cmd->add_option("--analogies", o->analogies, "analogies CSV from the analogies command")
            ->required()
            ->check(CLI::ExistingFile);
        cmd->add_option("--anchors", o->anchors, "direction anchors as POS,NEG")->required();
        cmd->add_option("--out", o->out, "output directory")->capture_default_str();
        cmd->callback([&runner, o] { runner = [o] { return run_export_tasks(*o); }; });
    }

    {
        auto o = std::make_shared<AggregateOpts>();
        CLI::App* cmd = app.add_subcommand(
            "aggregate", "aggregate crowd rating responses per pair");
        cmd->add_option("--tasks", o->tasks, "rating-task CSV")
            ->required()
            ->check(CLI::ExistingFile);
        cmd->add_option("--responses", o->responses, "rater response CSV")
            ->required()
            ->check(CLI::ExistingFile);
        cmd->add_option("--out", o->out, "output directory")->capture_default_str();
        cmd->callback([&runner, o] { runner = [o] { return run_aggregate(*o); }; });
    }

    {
        auto o = std::make_shared<DebiasOpts>();
        CLI::App* cmd = app.add_subcommand(
            "debias", "solve for a bias-reducing transform and apply it");
        cmd->add_option("--embedding", o->embedding, "embedding file")
            ->required()
            ->check(CLI::ExistingFile);
        fmt_opt(cmd, o->format);
        cmd->add_option("--seeds", o->seeds, "seed word list (stereotype-prone words)")
            ->required()
            ->check(CLI::ExistingFile);
        cmd->add_option("--anchors", o->anchors,
                        "direction anchors as POS,NEG (repeatable)")
            ->required();
        cmd->add_option("--background", o->background,
                        "background word list (default: everything but seeds and anchors)")
            ->check(CLI::ExistingFile);
        cmd->add_option("--lambda", o->lambda, "bias-projection weight")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
        cmd->add_option("--tol", o->tol, "relative objective-decrease tolerance")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
        cmd->add_option("--max-iters", o->max_iters, "iteration cap")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
        cmd->add_option("--report-sample", o->sample, "background sample size for the report")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
        cmd->add_option("--seed", o->seed, "seed for report background sampling")
            ->capture_default_str();
        cmd->add_flag("--normalize", o->normalize, "normalize embedding rows before solving");
        cmd->add_option("--out", o->out, "output directory")->capture_default_str();
        cmd->callback([&runner, o] { runner = [o] { return run_debias(*o); }; });
    }

    {
        auto o = std::make_shared<EvalOpts>();
        CLI::App* cmd = app.add_subcommand(
            "eval", "score embeddings on similarity and analogy benchmarks");
        cmd->add_option("--embedding", o->embedding, "embedding file")
            ->required()
            ->check(CLI::ExistingFile);
        cmd->add_option("--embedding2", o->embedding2, "second embedding (before/after rows)")
            ->check(CLI::ExistingFile);
        fmt_opt(cmd, o->format);
        cmd->add_option("--similarity", o->similarity,
                        "similarity dataset as NAME=PATH (repeatable)");
        cmd->add_option("--analogy", o->analogy, "analogy dataset as NAME=PATH (repeatable)");
        cmd->add_option("--out", o->out, "output directory")->capture_default_str();
        cmd->callback([&runner, o] { runner = [o] { return run_eval(*o); }; });
    }

    {
        auto o = std::make_shared<CompareOpts>();
        CLI::App* cmd = app.add_subcommand(
            "compare", "before/after projection report for two embeddings");
        cmd->add_option("--embedding", o->embedding, "embedding before debiasing")
            ->required()
            ->check(CLI::ExistingFile);
        cmd->add_option("--embedding2", o->embedding2, "embedding after debiasing")
            ->required()
            ->check(CLI::ExistingFile);
        fmt_opt(cmd, o->format);
        cmd->add_option("--anchors", o->anchors, "direction anchors as POS,NEG")->required();
        cmd->add_option("--words", o->words, "word list to compare")
            ->required()
            ->check(CLI::ExistingFile);
        cmd->add_option("--background", o->background, "background word list for variance rows")
            ->check(CLI::ExistingFile);
        cmd->add_option("--report-sample", o->sample, "background sample size")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
        cmd->add_option("--seed", o->seed, "seed for background sampling")
            ->capture_default_str();
        cmd->add_flag("--normalize", o->normalize, "normalize embedding rows first");
        cmd->add_option("--out", o->out, "output directory")->capture_default_str();
        cmd->callback([&runner, o] { runner = [o] { return run_compare(*o); }; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        return runner ? runner() : 1;
    } catch (const ConfigError& e) {
        std::cerr << "embias: " << e.what() << "\n";
        return 1;
    } catch (const SolverError& e) {
        std::cerr << "embias: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "embias: " << e.what() << "\n";
        return 2;
    }
}
