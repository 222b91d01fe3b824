#include "ksteer/calibration.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>

#include "ksteer/error.hpp"
#include "ksteer/parallel.hpp"
#include "ksteer/rng.hpp"

namespace ksteer {

void CalibrationConfig::validate() const {
    if (!(alpha_lo < alpha_hi)) throw InvalidInput("calibration: alpha_lo must be < alpha_hi");
    if (!(alpha_lo >= 0.0)) throw InvalidInput("calibration: alpha_lo must be >= 0");
    if (iterations < 1) throw InvalidInput("calibration: iterations must be >= 1");
    if (samples_per_probe < 1) throw InvalidInput("calibration: samples_per_probe must be >= 1");
    if (coherence_threshold < 0 || coherence_threshold > 100) {
        throw InvalidInput("calibration: threshold must be within 0..100");
    }
}

namespace {

std::vector<std::string_view> split_words(std::string_view text) {
    std::vector<std::string_view> words;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        const std::size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i > start) words.push_back(text.substr(start, i - start));
    }
    return words;
}

bool valid_token(std::string_view w, std::size_t vocab) {
    if (w.size() < 2 || w[0] != 't') return false;
    std::size_t id = 0;
    const auto* end = w.data() + w.size();
    const auto [ptr, ec] = std::from_chars(w.data() + 1, end, id);
    return ec == std::errc() && ptr == end && id < vocab;
}

}  // namespace

double offline_heuristic_score(std::string_view text, std::size_t vocab_size) {
    const auto words = split_words(text);
    if (words.empty()) return 0.0;
    std::size_t valid = 0;
    for (const auto w : words) valid += valid_token(w, vocab_size) ? 1 : 0;
    const double validity = static_cast<double>(valid) / static_cast<double>(words.size());

    double repetition = 0.0;
    constexpr std::size_t kWindow = 4;
    if (words.size() >= kWindow) {
        const std::size_t n = words.size() - kWindow + 1;
        std::map<std::vector<std::string_view>, std::size_t> counts;
        std::vector<std::vector<std::string_view>> windows(n);
        for (std::size_t i = 0; i < n; ++i) {
            windows[i].assign(words.begin() + static_cast<std::ptrdiff_t>(i),
                              words.begin() + static_cast<std::ptrdiff_t>(i + kWindow));
            ++counts[windows[i]];
        }
        std::size_t repeated = 0;
        for (const auto& w : windows) repeated += counts[w] > 1 ? 1 : 0;
        repetition = static_cast<double>(repeated) / static_cast<double>(n);
    }
    const double score = 100.0 * (1.0 - repetition) * validity;
    return std::clamp(std::round(score), 0.0, 100.0);
}

std::size_t CalibrationResult::judged() const {
    std::size_t n = 0;
    for (const auto& p : probes) n += p.scores.size() + p.judge_errors.size();
    return n;
}

CalibrationResult calibrate_alpha(const GenerationSampler& sampler, const CoherenceJudge& judge,
                                  const CalibrationConfig& cfg, LossSpec label_combo,
                                  std::size_t jobs) {
    cfg.validate();
    CalibrationResult result;
    result.label_combo = std::move(label_combo);
    result.best_alpha = cfg.alpha_lo;
    double lo = cfg.alpha_lo;
    double hi = cfg.alpha_hi;
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        CalibrationProbe probe;
        probe.alpha = 0.5 * (lo + hi);

        std::vector<double> scores(cfg.samples_per_probe, 0.0);
        std::vector<std::string> errors(cfg.samples_per_probe);
        std::vector<char> ok(cfg.samples_per_probe, 0);
        parallel_for(cfg.samples_per_probe, jobs, [&](std::size_t i) {
            // Sampling failures propagate; only judge failures are absorbed.
            const std::string text = sampler(probe.alpha, i);
            try {
                scores[i] = std::clamp(judge.score(text), 0.0, 100.0);
                ok[i] = 1;
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        });
        for (std::size_t i = 0; i < cfg.samples_per_probe; ++i) {
            if (ok[i]) {
                probe.scores.push_back(scores[i]);
                if (scores[i] < cfg.coherence_threshold) ++probe.below_threshold;
            } else {
                probe.judge_errors.push_back(std::move(errors[i]));
            }
        }
        probe.coherent = probe.judge_errors.empty() && probe.below_threshold <= cfg.max_failures;
        if (probe.coherent) {
            lo = probe.alpha;
            result.best_alpha = std::max(result.best_alpha, probe.alpha);
        } else {
            hi = probe.alpha;
        }
        result.probes.push_back(std::move(probe));
    }
    return result;
}

GenerationSampler toy_generation_sampler(const ToyModel& model, const Intervention& intervention,
                                         std::vector<std::vector<std::uint32_t>> prompts,
                                         std::size_t max_new, std::uint64_t seed) {
    if (prompts.empty()) throw InvalidInput("calibration sampler: no prompts");
    SeededRng rng(seed);
    auto order = rng.permutation(prompts.size());
    auto shared = std::make_shared<const std::vector<std::vector<std::uint32_t>>>(std::move(prompts));
    return [&model, intervention, shared, order = std::move(order), max_new](double alpha, std::size_t index) {
        const auto steered = intervention.with_alpha(static_cast<float>(alpha));
        const auto hooks = hooks_for(steered);
        const auto& prompt = (*shared)[order[index % order.size()]];
        const auto gen = model.generate(prompt, max_new, hooks);
        return render_tokens(gen.generated());
    };
}

}  // namespace ksteer
