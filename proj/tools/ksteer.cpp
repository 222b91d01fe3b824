// ksteer: command-line front end over the toy model and the steering library.
//
// Exit codes: 0 success, 1 domain error, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "ksteer/calibration.hpp"
#include "ksteer/classifier.hpp"
#include "ksteer/datasets.hpp"
#include "ksteer/error.hpp"
#include "ksteer/evaluation.hpp"
#include "ksteer/exchange.hpp"
#include "ksteer/judges.hpp"
#include "ksteer/kernels.hpp"
#include "ksteer/numeric.hpp"
#include "ksteer/report.hpp"
#include "ksteer/steering.hpp"
#include "ksteer/toy_model.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ksteer;

namespace {

// ---------------------------------------------------------------------------
// Options

struct Common {
    std::string out = "out";
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    std::string judge = "offline";
};

/// Toy model: either a KSTM weight file or a config built from flags.
struct ModelOpts {
    std::string weights;
    std::uint64_t seed = 0;
    std::string planting = "linear";
    std::size_t classes = 6;
    std::size_t d_model = 32;
    std::size_t n_layers = 6;
    std::size_t vocab = 64;
    float decode_range = 1.5f;

    void add(CLI::App* app) {
        app->add_option("--model", weights, "Toy model weights (KSTM); overrides the model flags");
        app->add_option("--model-seed", seed, "Toy model seed");
        app->add_option("--planting", planting, "Planted attribute structure")
            ->check(CLI::IsMember({"linear", "xor", "none"}));
        app->add_option("--classes", classes, "Planted classes (linear)");
        app->add_option("--d-model", d_model, "Residual width");
        app->add_option("--n-layers", n_layers, "Residual blocks");
        app->add_option("--vocab", vocab, "Vocabulary size");
        app->add_option("--decode-range", decode_range, "Decoder range over the typical norm (0 = off)");
    }

    [[nodiscard]] ToyModel build() const {
        if (!weights.empty()) return ToyModel::load_weights(weights);
        ToyModelConfig cfg;
        cfg.seed = seed;
        cfg.d_model = d_model;
        cfg.n_layers = n_layers;
        cfg.vocab_size = vocab;
        cfg.decode_range = decode_range;
        if (planting == "linear") cfg.planting = AttributePlanting{PlantingKind::linear, classes};
        if (planting == "xor") cfg.planting = AttributePlanting{PlantingKind::xor_pair, 2};
        return ToyModel(cfg);
    }
};

struct SpecOpts {
    std::vector<std::size_t> targets;
    std::vector<std::size_t> avoids;
    float alpha = 1.0f;
    std::size_t steps = 1;
    float gamma = 1.0f;
    std::vector<std::size_t> layers;
    std::string method = "gradient";
    std::string classifier;
    std::string vector;

    void add(CLI::App* app, bool with_alpha = true) {
        app->add_option("--targets", targets, "Target labels T+")->delimiter(',');
        app->add_option("--avoids", avoids, "Avoid labels T-")->delimiter(',');
        if (with_alpha) app->add_option("--alpha", alpha, "Steering magnitude");
        app->add_option("--steps", steps, "Gradient steps");
        app->add_option("--gamma", gamma, "Per-step decay");
        app->add_option("--layers", layers, "Steered layers")->delimiter(',');
        app->add_option("--method", method, "Steering method")
            ->check(CLI::IsMember({"gradient", "projection_removal", "caa_add", "directional_ablation"}));
        app->add_option("--classifier", classifier, "Steering classifier (KSCL)");
        app->add_option("--vector", vector, "Steering vector (KSVF) for caa_add / directional_ablation");
    }

    [[nodiscard]] SteeringSpec spec() const {
        SteeringSpec s;
        s.loss = {targets, avoids};
        s.alpha = alpha;
        s.steps = steps;
        s.gamma = gamma;
        s.layers = layers;
        s.method = parse_method(method);
        return s;
    }

    [[nodiscard]] Intervention intervention(const LossSpec* loss = nullptr) const {
        auto s = spec();
        if (loss) s.loss = *loss;
        std::shared_ptr<const MlpClassifier> clf;
        std::shared_ptr<const SteeringVector> vec;
        if (!classifier.empty()) clf = std::make_shared<const MlpClassifier>(load_classifier(classifier));
        if (!vector.empty()) vec = std::make_shared<const SteeringVector>(load_steering_vector(vector));
        return Intervention(s, std::move(clf), std::move(vec));
    }
};

/// Prompts: one text per line of --prompts, the questions of --dataset, or
/// seeded random token sequences.
struct PromptOpts {
    std::string prompts_file;
    std::string dataset;
    std::size_t count = 100;
    std::size_t length = 8;

    void add(CLI::App* app, std::size_t default_count) {
        count = default_count;
        app->add_option("--prompts", prompts_file, "Text file, one prompt per line");
        app->add_option("--dataset", dataset, "Prompt bank JSON; its questions are the prompts");
        app->add_option("--num-inputs", count, "Random prompts when no file is given");
        app->add_option("--prompt-length", length, "Tokens per random prompt");
    }

    [[nodiscard]] std::vector<Prompt> load(const ToyModel& model, std::uint64_t seed) const {
        std::vector<Prompt> out;
        if (!prompts_file.empty()) {
            std::ifstream in(prompts_file);
            if (!in) throw InvalidInput("cannot read " + prompts_file);
            for (std::string line; std::getline(in, line);) {
                if (!line.empty()) out.push_back(tokenize(line, model.vocab_size()));
            }
        } else if (!dataset.empty()) {
            for (const auto& rec : load_prompt_bank(dataset)) out.push_back(tokenize(rec.question, model.vocab_size()));
        } else {
            SeededRng rng(seed);
            for (std::size_t i = 0; i < count; ++i) out.push_back(random_prompt(rng, length, model.vocab_size()));
        }
        if (out.empty()) throw InvalidInput("no prompts");
        return out;
    }
};

// ---------------------------------------------------------------------------
// Output helpers

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

class Run {
public:
    Run(const Common& common, std::string command) : common_(common), command_(std::move(command)) {
        fs::create_directories(common_.out);
    }

    [[nodiscard]] fs::path path(const std::string& name) const { return fs::path(common_.out) / name; }

    /// Records an artifact already written under --out.
    void artifact(const std::string& name) {
        std::ifstream in(path(name), std::ios::binary);
        std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        char hex[17];
        std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
        artifacts_[name] = {{"fnv1a64", hex}, {"bytes", bytes.size()}};
    }

    void write_text(const std::string& name, const std::string& text) {
        std::ofstream out(path(name), std::ios::binary);
        out << text;
        if (!out) throw Error("cannot write " + path(name).string());
        out.close();
        artifact(name);
    }

    void write_json(const std::string& name, const json& doc) { write_text(name, doc.dump(2) + "\n"); }

    void manifest(const CLI::App& sub, const char* status, const std::string& error = {}) const {
        json options = json::object();
        for (const auto* opt : sub.get_options()) {
            if (opt->get_name() == "--help" || opt->get_name() == "--config") continue;
            const auto& res = opt->results();
            std::string key = opt->get_name();
            while (!key.empty() && key.front() == '-') key.erase(key.begin());
            if (opt->get_expected_max() > 1 || opt->get_items_expected_max() > 1) {
                options[key] = res;
            } else {
                options[key] = res.empty() ? opt->get_default_str() : res.back();
            }
        }
        json doc{{"command", command_},
                 {"seed", common_.seed},
                 {"jobs", common_.jobs},
                 {"judge", common_.judge},
                 {"status", status},
                 {"options", options},
                 {"kernels", std::string(kernels::active().name)},
                 {"artifacts", artifacts_}};
        if (!error.empty()) doc["error"] = error;
        std::ofstream out(path("manifest.json"), std::ios::binary);
        out << doc.dump(2) << "\n";
    }

private:
    const Common& common_;
    std::string command_;
    json artifacts_ = json::object();
};

json outcome_to_json(const EvalOutcome& o) {
    json j{{"method", std::string(method_name(o.method))},
           {"dataset", o.dataset},
           {"layer", o.layer},
           {"alpha", o.alpha},
           {"steps", o.steps},
           {"targets", o.label_combo.targets},
           {"avoids", o.label_combo.avoids},
           {"mean_delta", o.mean_delta},
           {"per_input", o.per_input}};
    j["score"] = o.score ? json(*o.score) : json(nullptr);
    return j;
}

EvalOutcome outcome_from_json(const json& j) {
    EvalOutcome o;
    o.method = parse_method(j.at("method").get<std::string>());
    o.dataset = j.value("dataset", "");
    o.layer = j.at("layer").get<std::size_t>();
    o.alpha = j.at("alpha").get<double>();
    o.steps = j.value("steps", std::size_t{1});
    o.label_combo.targets = j.value("targets", std::vector<std::size_t>{});
    o.label_combo.avoids = j.value("avoids", std::vector<std::size_t>{});
    o.mean_delta = j.at("mean_delta").get<double>();
    o.per_input = j.value("per_input", std::vector<double>{});
    if (j.contains("score") && !j["score"].is_null()) o.score = j["score"].get<double>();
    return o;
}

std::unique_ptr<CoherenceJudge> make_judge(const Common& common, const ToyModel& model) {
    if (common.judge == "http") return std::make_unique<HttpCoherenceJudge>(JudgeEndpoint::from_env());
    return std::make_unique<OfflineHeuristicJudge>(model.vocab_size());
}

// ---------------------------------------------------------------------------
// Subcommands

struct ExtractOpts {
    ModelOpts model;
    std::string source = "planted";
    std::size_t count = 2000;
    std::size_t length = 8;
    std::string dataset;
    std::string labels;
    std::vector<std::size_t> layers;
    bool save_model = true;
};

void run_extract(const Common& c, const ExtractOpts& o, Run& run) {
    const auto model = o.model.build();
    std::vector<LabeledPrompt> prompts;
    if (o.source == "planted") {
        prompts = planted_prompt_corpus(model, o.count, o.length, c.seed);
    } else {
        if (o.dataset.empty()) throw InvalidInput("--source bank needs --dataset");
        const auto bank = load_prompt_bank(o.dataset);
        const auto labels = o.labels.empty() ? tonebank_labels() : load_label_descriptors(o.labels);
        for (const auto& d : labels)
            for (const auto& rec : bank) prompts.push_back({tokenize(compose_prompt(d, rec), model.vocab_size()), d.id});
    }
    auto layers = o.layers;
    if (layers.empty()) layers.push_back(model.final_layer());
    json summary{{"prompts", prompts.size()}, {"files", json::array()}};
    for (const auto layer : layers) {
        const auto set = extract_activations(model, prompts, layer, c.jobs);
        const std::string name = "activations_L" + std::to_string(layer) + ".ksav";
        save_activations(set, run.path(name));
        run.artifact(name);
        summary["files"].push_back(name);
    }
    if (o.save_model) {
        model.save_weights(run.path("model.kstm"));
        run.artifact("model.kstm");
    }
    run.write_json("extract.json", summary);
}

struct TrainOpts {
    std::string activations;
    std::string split = "train";
    std::size_t epochs = 30;
    std::size_t batch = 32;
    float lr = 1e-3f;
    std::string name = "classifier.kscl";
};

void run_train(const Common& c, const TrainOpts& o, Run& run) {
    const auto set = load_activations(o.activations);
    const auto split = split_train_heldout(set, c.seed);
    const LabeledActivationSet* fit = &set;
    const LabeledActivationSet* check = &set;
    if (o.split == "train") {
        fit = &split.train;
        check = &split.heldout;
    } else if (o.split == "heldout") {
        fit = &split.heldout;
        check = &split.train;
    }
    TrainConfig tc;
    tc.epochs = o.epochs;
    tc.batch_size = o.batch;
    tc.learning_rate = o.lr;
    tc.seed = c.seed;
    const auto result =
        train(MlpClassifier::initialized(set.d_model, set.label_count(), c.seed), *fit, tc);
    save_classifier(result.classifier, run.path(o.name));
    run.artifact(o.name);
    const double acc = accuracy(result.classifier, *check);
    run.write_json("train.json", {{"classifier", o.name},
                                  {"split", o.split},
                                  {"trained_on", fit->size()},
                                  {"checked_on", check->size()},
                                  {"accuracy", acc},
                                  {"loss_history", result.loss_history}});
    std::cout << "accuracy " << acc << " on " << check->size() << " entries\n";
}

struct CaaOpts {
    std::string activations;
    std::size_t pairs = 200;
    bool mirrored = false;
    std::vector<std::size_t> targets;
    std::vector<std::size_t> avoids;
};

void run_caa(const Common& c, const CaaOpts& o, Run& run) {
    const auto set = load_activations(o.activations);
    std::map<std::uint32_t, SteeringVector> per_label;
    json summary = json::array();
    for (std::uint32_t label = 0; label < set.label_count(); ++label) {
        const auto pairs = o.mirrored ? mirrored_contrastive_pairs(set, label, o.pairs, c.seed)
                                      : planted_contrastive_pairs(set, label, o.pairs, c.seed);
        auto v = caa_compute_vector(pairs.positive, pairs.negative);
        v.labels = {{label, 1}};
        v.source_layer = set.entries.empty() ? 0 : set.entries.front().layer;
        const std::string name = "caa_" + std::to_string(label) + ".ksvf";
        save_steering_vector(v, run.path(name));
        run.artifact(name);
        summary.push_back({{"label", label}, {"file", name}, {"norm", l2_norm(v.direction)}});
        per_label.emplace(label, std::move(v));
    }
    if (!o.targets.empty() || !o.avoids.empty()) {
        const auto combined = caa_combine(per_label, o.targets, o.avoids);
        save_steering_vector(combined, run.path("caa_combo.ksvf"));
        run.artifact("caa_combo.ksvf");
    }
    run.write_json("caa.json", summary);
}

struct CalibrateOpts {
    ModelOpts model;
    SpecOpts spec;
    PromptOpts prompts;
    CalibrationConfig cfg;
    std::size_t max_new = 24;
};

void run_calibrate(const Common& c, const CalibrateOpts& o, Run& run) {
    const auto model = o.model.build();
    const auto iv = o.spec.intervention();
    const auto judge = make_judge(c, model);
    const auto result = calibrate_alpha(toy_generation_sampler(model, iv, o.prompts.load(model, c.seed), o.max_new, c.seed),
                                        *judge, o.cfg, iv.spec().loss, c.jobs);
    json probes = json::array();
    for (const auto& p : result.probes) {
        probes.push_back({{"alpha", p.alpha},
                          {"coherent", p.coherent},
                          {"scores", p.scores},
                          {"below_threshold", p.below_threshold},
                          {"judge_errors", p.judge_errors}});
    }
    run.write_json("calibration.json", {{"best_alpha", result.best_alpha},
                                        {"targets", result.label_combo.targets},
                                        {"avoids", result.label_combo.avoids},
                                        {"judged", result.judged()},
                                        {"probes", probes}});
    std::cout << "best alpha " << result.best_alpha << "\n";
}

struct SteerOpts {
    ModelOpts model;
    SpecOpts spec;
    PromptOpts prompts;
    std::size_t max_new = 24;
};

void run_steer(const Common& c, const SteerOpts& o, Run& run) {
    const auto model = o.model.build();
    const auto iv = o.spec.intervention();
    const auto hooks = hooks_for(iv);
    std::string lines;
    std::size_t changed = 0;
    for (const auto& p : o.prompts.load(model, c.seed)) {
        const auto base = model.generate(p, o.max_new);
        const auto steered = model.generate(p, o.max_new, hooks);
        const json row{{"prompt", render_tokens(p)},
                       {"unsteered", render_tokens(base.generated())},
                       {"steered", render_tokens(steered.generated())},
                       {"degenerate_rows", steered.notes.degenerate_rows}};
        changed += base.tokens != steered.tokens;
        lines += row.dump() + "\n";
    }
    run.write_text("generations.jsonl", lines);
    std::cout << changed << " generations changed by steering\n";
}

struct EvaluateOpts {
    ModelOpts model;
    SpecOpts spec;
    PromptOpts prompts;
    std::string eval_classifier;
    std::string combos = "given";
    bool calibrate = false;
    CalibrationConfig cfg;
    std::size_t calibration_prompts = 40;
    std::size_t max_new = 24;
    std::string dataset_name = "toy";
};

void run_evaluate(const Common& c, const EvaluateOpts& o, Run& run) {
    const auto model = o.model.build();
    const auto eval_clf = load_classifier(o.eval_classifier);
    const auto inputs = o.prompts.load(model, c.seed);
    std::vector<LossSpec> combos;
    if (o.combos == "all") {
        combos = enumerate_label_combos(eval_clf.num_classes(), 3);
    } else {
        combos.push_back({o.spec.targets, o.spec.avoids});
    }
    auto layers = o.spec.layers;
    if (layers.empty()) throw InvalidInput("evaluate needs --layers");
    EvalConfig ec;
    ec.max_new_tokens = o.max_new;
    ec.jobs = c.jobs;
    ec.dataset = o.dataset_name;
    const BaselineCache baseline(model, inputs, o.max_new, c.jobs);
    const auto judge = make_judge(c, model);
    SeededRng rng(c.seed ^ 0xCA1ULL);
    std::vector<Prompt> calib;
    for (std::size_t i = 0; i < o.calibration_prompts; ++i) calib.push_back(random_prompt(rng, o.prompts.length, model.vocab_size()));

    std::vector<EvalOutcome> outcomes;
    for (const auto layer : layers) {
        auto spec = o.spec;
        spec.layers = {layer};
        for (const auto& combo : combos) {
            auto iv = spec.intervention(&combo);
            if (o.calibrate) {
                const auto cal = calibrate_alpha(toy_generation_sampler(model, iv, calib, o.max_new, c.seed), *judge,
                                                 o.cfg, combo, c.jobs);
                iv = iv.with_alpha(static_cast<float>(cal.best_alpha));
            }
            outcomes.push_back(mean_target_prob_delta(model, eval_clf, iv, baseline, ec));
        }
    }
    json list = json::array();
    for (const auto& out : outcomes) list.push_back(outcome_to_json(out));
    const auto best = select_best_layer(outcomes);
    run.write_json("outcomes.json", {{"best_layer", best}, {"outcomes", list}});
    std::cout << outcomes.size() << " outcomes, best layer " << best << "\n";
}

struct SweepOpts {
    ModelOpts model;
    SpecOpts spec;
    PromptOpts prompts;
    std::string eval_classifier;
    std::vector<double> alphas;
    std::vector<std::size_t> steps;
    std::size_t max_new = 24;
};

void run_sweep(const Common& c, const SweepOpts& o, Run& run) {
    const auto model = o.model.build();
    const auto eval_clf = load_classifier(o.eval_classifier);
    auto grid = SweepConfig::defaults();
    if (!o.alphas.empty()) grid.alphas = o.alphas;
    if (!o.steps.empty()) grid.steps = o.steps;
    EvalConfig ec;
    ec.max_new_tokens = o.max_new;
    ec.jobs = c.jobs;
    const auto result = multi_step_sweep(model, eval_clf, o.spec.intervention(), o.prompts.load(model, c.seed), grid, ec);
    std::ostringstream csv;
    csv.precision(17);
    csv << "alpha,steps,mean_delta\n";
    json cells = json::array();
    for (const auto& cell : result.cells) {
        csv << cell.alpha << ',' << cell.steps << ',' << cell.mean_delta << '\n';
        cells.push_back({{"alpha", cell.alpha}, {"steps", cell.steps}, {"mean_delta", cell.mean_delta}});
    }
    json groups = json::array();
    for (const auto& g : result.group_best) {
        groups.push_back({{"group", g.group}, {"alpha", g.alpha}, {"steps", g.steps}, {"mean_delta", g.mean_delta}});
    }
    run.write_text("sweep.csv", csv.str());
    run.write_json("sweep.json", {{"cells", cells}, {"group_best", groups}});
}

struct ReportOpts {
    std::vector<std::string> outcomes;
    std::string format = "both";
    std::string labels;
};

void run_report(const Common&, const ReportOpts& o, Run& run) {
    std::vector<EvalOutcome> all;
    for (const auto& file : o.outcomes) {
        std::ifstream in(file);
        if (!in) throw InvalidInput("cannot read " + file);
        json doc;
        try {
            doc = json::parse(in);
        } catch (const json::exception& e) {
            throw ParseError(std::string("outcomes file: ") + e.what(), 0);
        }
        for (const auto& j : doc.at("outcomes")) all.push_back(outcome_from_json(j));
    }
    LabelNames names;
    if (!o.labels.empty()) {
        for (const auto& d : load_label_descriptors(o.labels)) names.push_back(d.name);
    }
    if (o.format != "markdown") {
        emit_report(all, ReportFormat::csv, run.path("report.csv"), names);
        run.artifact("report.csv");
    }
    if (o.format != "csv") {
        emit_report(all, ReportFormat::markdown, run.path("report.md"), names);
        run.artifact("report.md");
    }
}

struct ServeOpts {
    SpecOpts spec;
    std::string listen;
    std::size_t max_sessions = 0;
};

void run_serve(const Common&, const ServeOpts& o, Run&) {
    if (o.spec.classifier.empty() && o.spec.vector.empty()) throw InvalidInput("serve-exchange needs --classifier or --vector");
    const auto iv = o.spec.intervention();
    const std::size_t d = !o.spec.classifier.empty() ? load_classifier(o.spec.classifier).d_model()
                                                     : load_steering_vector(o.spec.vector).direction.size();
    if (o.listen.empty()) {
        serve_exchange(std::cin, std::cout, iv, d);
        return;
    }
    const auto colon = o.listen.rfind(':');
    if (colon == std::string::npos) throw InvalidInput("--listen expects host:port");
    const auto port = std::stoul(o.listen.substr(colon + 1));
    if (port == 0 || port > 65535) throw InvalidInput("port out of range");
    serve_exchange_tcp(o.listen.substr(0, colon), static_cast<std::uint16_t>(port), iv, d, o.max_sessions);
}

void add_calibration_flags(CLI::App* app, CalibrationConfig& cfg) {
    app->add_option("--alpha-lo", cfg.alpha_lo, "Lower end of the alpha search");
    app->add_option("--alpha-hi", cfg.alpha_hi, "Upper end of the alpha search");
    app->add_option("--iterations", cfg.iterations, "Bisection iterations");
    app->add_option("--samples", cfg.samples_per_probe, "Generations judged per probe");
    app->add_option("--threshold", cfg.coherence_threshold, "Coherence threshold")->check(CLI::Range(30, 60));
    app->add_option("--max-failures", cfg.max_failures, "Allowed below-threshold samples per probe");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"K-Steering toolkit over a seeded toy model"};
    app.option_defaults()->always_capture_default();
    app.set_config("--config", "", "INI file; [subcommand] sections, key = value");
    app.require_subcommand(1);
    Common common;
    app.add_option("--out", common.out, "Output directory")->capture_default_str();
    app.add_option("--seed", common.seed, "Seed for every random choice")->capture_default_str();
    app.add_option("--jobs", common.jobs, "Worker threads (0 = all cores)")->capture_default_str();
    app.add_option("--judge", common.judge, "Coherence judge")
        ->check(CLI::IsMember({"offline", "http"}))
        ->capture_default_str();

    ExtractOpts extract;
    auto* sub_extract = app.add_subcommand("extract-activations", "Final-position activations of a prompt set");
    extract.model.add(sub_extract);
    sub_extract->add_option("--source", extract.source, "planted corpus or prompt bank")
        ->check(CLI::IsMember({"planted", "bank"}));
    sub_extract->add_option("--count", extract.count, "Planted prompts (even)");
    sub_extract->add_option("--prompt-length", extract.length, "Tokens per planted prompt");
    sub_extract->add_option("--dataset", extract.dataset, "Prompt bank JSON (bank source)");
    sub_extract->add_option("--labels", extract.labels, "Label descriptor JSON (default: tonebank)");
    sub_extract->add_option("--layers", extract.layers, "Layers to read (default: final)")->delimiter(',');

    TrainOpts train_opts;
    auto* sub_train = app.add_subcommand("train-classifier", "Train the attribute classifier");
    sub_train->add_option("--activations", train_opts.activations, "KSAV file")->required();
    sub_train->add_option("--split", train_opts.split, "Fit on the 80% train part, the 20% held-out part, or all")
        ->check(CLI::IsMember({"train", "heldout", "all"}));
    sub_train->add_option("--epochs", train_opts.epochs);
    sub_train->add_option("--batch-size", train_opts.batch);
    sub_train->add_option("--lr", train_opts.lr);
    sub_train->add_option("--name", train_opts.name, "Output file name under --out");

    CaaOpts caa;
    auto* sub_caa = app.add_subcommand("build-caa", "Difference-in-means steering vectors per label");
    sub_caa->add_option("--activations", caa.activations, "KSAV file")->required();
    sub_caa->add_option("--pairs", caa.pairs, "Contrastive pairs per label");
    sub_caa->add_flag("--mirrored", caa.mirrored, "Draw whole mirror couples (planted mirror corpus)");
    sub_caa->add_option("--targets", caa.targets, "Also write the combined vector for these targets")->delimiter(',');
    sub_caa->add_option("--avoids", caa.avoids, "... and avoids")->delimiter(',');

    CalibrateOpts calibrate;
    auto* sub_cal = app.add_subcommand("calibrate-alpha", "Bisection search for the largest coherent alpha");
    calibrate.model.add(sub_cal);
    calibrate.spec.add(sub_cal, false);
    calibrate.prompts.add(sub_cal, 40);
    add_calibration_flags(sub_cal, calibrate.cfg);
    sub_cal->add_option("--max-new", calibrate.max_new, "Generated tokens per sample");

    SteerOpts steer;
    auto* sub_steer = app.add_subcommand("steer", "Steered and unsteered generations side by side");
    steer.model.add(sub_steer);
    steer.spec.add(sub_steer);
    steer.prompts.add(sub_steer, 10);
    sub_steer->add_option("--max-new", steer.max_new, "Generated tokens");

    EvaluateOpts evaluate;
    auto* sub_eval = app.add_subcommand("evaluate", "Mean change in target probability per combo and layer");
    evaluate.model.add(sub_eval);
    evaluate.spec.add(sub_eval);
    evaluate.prompts.add(sub_eval, 100);
    sub_eval->add_option("--eval-classifier", evaluate.eval_classifier, "Final-layer classifier (KSCL)")->required();
    sub_eval->add_option("--combos", evaluate.combos, "The given targets/avoids, or every combo of up to 3 labels")
        ->check(CLI::IsMember({"given", "all"}));
    sub_eval->add_flag("--calibrate", evaluate.calibrate, "Calibrate alpha per combo instead of using --alpha");
    add_calibration_flags(sub_eval, evaluate.cfg);
    sub_eval->add_option("--calibration-prompts", evaluate.calibration_prompts);
    sub_eval->add_option("--max-new", evaluate.max_new, "Generated tokens per input");
    sub_eval->add_option("--dataset-name", evaluate.dataset_name, "Dataset column in reports");

    SweepOpts sweep;
    auto* sub_sweep = app.add_subcommand("sweep", "Grid over alpha and step count");
    sweep.model.add(sub_sweep);
    sweep.spec.add(sub_sweep, false);
    sweep.prompts.add(sub_sweep, 100);
    sub_sweep->add_option("--eval-classifier", sweep.eval_classifier, "Final-layer classifier (KSCL)")->required();
    sub_sweep->add_option("--alphas", sweep.alphas, "Alpha grid (default 0.2..4.6 by 0.4)")->delimiter(',');
    sub_sweep->add_option("--step-counts", sweep.steps, "Step grid (default 1..10)")->delimiter(',');
    sub_sweep->add_option("--max-new", sweep.max_new, "Generated tokens per input");

    ReportOpts report;
    auto* sub_report = app.add_subcommand("report", "CSV and markdown tables from evaluate outputs");
    sub_report->add_option("--outcomes", report.outcomes, "outcomes.json files")->required();
    sub_report->add_option("--format", report.format)->check(CLI::IsMember({"csv", "markdown", "both"}));
    sub_report->add_option("--labels", report.labels, "Label descriptor JSON for label names");

    ServeOpts serve;
    auto* sub_serve = app.add_subcommand("serve-exchange", "Apply a steering spec to activation frames");
    serve.spec.add(sub_serve);
    sub_serve->add_option("--listen", serve.listen, "host:port (default: stdin/stdout)");
    sub_serve->add_option("--max-sessions", serve.max_sessions, "Stop after this many connections (0 = never)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    const auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    try {
        Run run(common, name);
        try {
            if (name == "extract-activations") run_extract(common, extract, run);
            else if (name == "train-classifier") run_train(common, train_opts, run);
            else if (name == "build-caa") run_caa(common, caa, run);
            else if (name == "calibrate-alpha") run_calibrate(common, calibrate, run);
            else if (name == "steer") run_steer(common, steer, run);
            else if (name == "evaluate") run_evaluate(common, evaluate, run);
            else if (name == "sweep") run_sweep(common, sweep, run);
            else if (name == "report") run_report(common, report, run);
            else if (name == "serve-exchange") run_serve(common, serve, run);
        } catch (const std::exception& e) {
            run.manifest(*sub, "error", e.what());
            throw;
        }
        run.manifest(*sub, "ok");
    } catch (const std::exception& e) {
        std::cerr << "ksteer " << name << ": " << e.what() << "\n";
        return 1;
    }
    return 0;
}
