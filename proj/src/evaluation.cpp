#include "ksteer/evaluation.hpp"

#include <algorithm>
#include <map>

#include "ksteer/error.hpp"
#include "ksteer/parallel.hpp"

namespace ksteer {

double target_probability(std::span<const float> probs, const LossSpec& combo) {
    double value = 0.0;
    if (!combo.targets.empty()) {
        double sum = 0.0;
        for (const auto t : combo.targets) sum += probs[t];
        value += sum / static_cast<double>(combo.targets.size());
    }
    if (!combo.avoids.empty()) {
        double sum = 0.0;
        for (const auto a : combo.avoids) sum += probs[a];
        value -= sum / static_cast<double>(combo.avoids.size());
    }
    return value;
}

std::vector<float> final_activation(const ToyModel& model, const Prompt& prompt, std::size_t max_new,
                                    std::span<const HookPoint> hooks) {
    const auto gen = model.generate(prompt, max_new, hooks, true);
    const auto& a = gen.per_layer_activations.at(model.final_layer());
    const auto last = a.row(a.rows() - 1);
    return {last.begin(), last.end()};
}

BaselineCache::BaselineCache(const ToyModel& model, std::span<const Prompt> inputs,
                             std::size_t max_new, std::size_t jobs)
    : inputs_(inputs.begin(), inputs.end()), max_new_(max_new), final_(inputs.size()) {
    parallel_for(inputs_.size(), jobs,
                 [&](std::size_t i) { final_[i] = final_activation(model, inputs_[i], max_new_, {}); });
}

EvalOutcome mean_target_prob_delta(const ToyModel& model, const MlpClassifier& eval_clf,
                                   const Intervention& intervention, const BaselineCache& baseline,
                                   const EvalConfig& cfg) {
    if (baseline.inputs().empty()) throw InvalidInput("evaluation: no inputs");
    if (eval_clf.d_model() != model.d_model()) {
        throw ShapeError("evaluation classifier width " + std::to_string(eval_clf.d_model()) +
                         " differs from model width " + std::to_string(model.d_model()));
    }
    const auto& spec = intervention.spec();
    spec.loss.validate(eval_clf.num_classes());

    EvalOutcome out;
    out.label_combo = spec.loss;
    out.layer = spec.layers.empty() ? 0 : spec.layers.front();
    out.method = spec.method;
    out.alpha = spec.alpha;
    out.steps = spec.steps;
    out.dataset = cfg.dataset;
    out.per_input.resize(baseline.inputs().size());

    const auto hooks = hooks_for(intervention);
    parallel_for(baseline.inputs().size(), cfg.jobs, [&](std::size_t i) {
        const auto& base = baseline.activation(i);
        // alpha = 0 disables every method, so skip the steered run and report 0 exactly.
        const auto steered = spec.alpha == 0.0f
                                 ? base
                                 : final_activation(model, baseline.inputs()[i], baseline.max_new(), hooks);
        const auto p_base = eval_clf.predict_probs(ActivationMatrix::row_vector(base));
        const auto p_steer = eval_clf.predict_probs(ActivationMatrix::row_vector(steered));
        out.per_input[i] = target_probability(p_steer.row(0), spec.loss) -
                           target_probability(p_base.row(0), spec.loss);
    });
    double sum = 0.0;
    for (const double d : out.per_input) sum += d;
    out.mean_delta = sum / static_cast<double>(out.per_input.size());
    return out;
}

EvalOutcome mean_target_prob_delta(const ToyModel& model, const MlpClassifier& eval_clf,
                                   const Intervention& intervention, std::span<const Prompt> inputs,
                                   const EvalConfig& cfg) {
    if (inputs.empty()) throw InvalidInput("evaluation: no inputs");
    const BaselineCache baseline(model, inputs, cfg.max_new_tokens, cfg.jobs);
    return mean_target_prob_delta(model, eval_clf, intervention, baseline, cfg);
}

std::size_t select_best_layer(std::span<const EvalOutcome> outcomes) {
    if (outcomes.empty()) throw InvalidInput("select_best_layer: no outcomes");
    std::map<std::size_t, std::pair<double, std::size_t>> by_layer;
    for (const auto& o : outcomes) {
        auto& [sum, count] = by_layer[o.layer];
        sum += o.mean_delta;
        ++count;
    }
    std::size_t best = by_layer.begin()->first;
    double best_mean = -std::numeric_limits<double>::infinity();
    // std::map iterates in ascending layer order, so strict > keeps the lowest on ties.
    for (const auto& [layer, acc] : by_layer) {
        const double mean = acc.first / static_cast<double>(acc.second);
        if (mean > best_mean) {
            best_mean = mean;
            best = layer;
        }
    }
    return best;
}

double steering_score(std::span<const JudgeVerdict> verdicts) {
    if (verdicts.empty()) throw InvalidInput("steering_score: no verdicts");
    std::size_t successes = 0;
    long strength = 0;
    for (const auto& raw : verdicts) {
        const auto v = raw.normalized();
        successes += v.steering_successful ? 1 : 0;
        strength += std::clamp(v.steering_strength, 0, 5);
    }
    const auto n = static_cast<double>(verdicts.size());
    const double average_strength = static_cast<double>(strength) / n;
    const double success_rate = static_cast<double>(successes) / n;
    return (average_strength / 5.0) * success_rate;
}

std::vector<LossSpec> enumerate_label_combos(std::size_t n, std::size_t max_k) {
    std::vector<LossSpec> out;
    for (std::size_t k = 1; k <= std::min(n, max_k); ++k) {
        std::vector<std::size_t> idx(k);
        for (std::size_t i = 0; i < k; ++i) idx[i] = i;
        for (;;) {
            out.push_back({idx, {}});
            std::size_t i = k;
            while (i > 0 && idx[i - 1] == n - k + i - 1) --i;
            if (i == 0) break;
            ++idx[i - 1];
            for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
        }
    }
    return out;
}

SweepConfig SweepConfig::defaults() {
    SweepConfig cfg;
    for (int i = 0; i < 12; ++i) cfg.alphas.push_back(0.2 + 0.4 * i);  // ... 4.6
    for (std::size_t s = 1; s <= 10; ++s) cfg.steps.push_back(s);
    return cfg;
}

SweepResult multi_step_sweep(const ToyModel& model, const MlpClassifier& eval_clf,
                             const Intervention& base, std::span<const Prompt> inputs,
                             const SweepConfig& grid, const EvalConfig& cfg) {
    if (grid.alphas.empty() || grid.steps.empty()) throw InvalidInput("sweep: empty grid");
    for (const auto s : grid.steps) {
        if (s == 0) throw InvalidInput("sweep: step counts start at 1");
    }
    const BaselineCache baseline(model, inputs, cfg.max_new_tokens, cfg.jobs);
    SweepResult result;
    result.alphas = grid.alphas;
    result.steps = grid.steps;
    for (const double alpha : grid.alphas) {
        for (const auto steps : grid.steps) {
            const auto iv = base.with_alpha(static_cast<float>(alpha)).with_steps(steps);
            const auto outcome = mean_target_prob_delta(model, eval_clf, iv, baseline, cfg);
            result.cells.push_back({alpha, steps, outcome.mean_delta});
        }
    }
    const std::pair<const char*, std::pair<double, double>> groups[] = {
        {"early", {-1e300, 1.0}}, {"middle", {1.0, 3.0}}, {"late", {3.0, 1e300}}};
    for (const auto& [name, range] : groups) {
        std::optional<SweepGroupBest> best;
        for (const auto& c : result.cells) {
            if (!(c.alpha > range.first && c.alpha <= range.second)) continue;
            if (!best || c.mean_delta > best->mean_delta) best = SweepGroupBest{name, c.alpha, c.steps, c.mean_delta};
        }
        if (best) result.group_best.push_back(*best);
    }
    return result;
}

}  // namespace ksteer
