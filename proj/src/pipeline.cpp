#include "ksteer/pipeline.hpp"

#include "ksteer/error.hpp"

namespace ksteer {

ToyPipeline::ToyPipeline(ToyPipelineConfig cfg) : cfg_(std::move(cfg)), model_(cfg_.model),
      eval_clf_(MlpClassifier::zeros(1, 2, 1)) {
    if (!model_.has_planting()) throw InvalidInput("toy pipeline needs a planted model");
    if (cfg_.steer_layer >= model_.n_layers()) throw InvalidInput("toy pipeline: steer layer out of range");
    if (cfg_.num_inputs == 0) throw InvalidInput("toy pipeline: no evaluation inputs");
    if (cfg_.calibration_prompts == 0 || cfg_.calibration_prompts > cfg_.corpus_size) {
        throw InvalidInput("toy pipeline: calibration prompts must be within 1..corpus_size");
    }
    const std::size_t k = model_.planted_classes();
    corpus_ = planted_prompt_corpus(model_, cfg_.corpus_size, cfg_.prompt_length, cfg_.corpus_seed);
    steer_set_ = extract_activations(model_, corpus_, cfg_.steer_layer, cfg_.jobs);
    const auto final_set = cfg_.steer_layer == model_.final_layer()
                               ? steer_set_
                               : extract_activations(model_, corpus_, model_.final_layer(), cfg_.jobs);

    const auto steer_split = split_train_heldout(steer_set_, cfg_.split_seed);
    const auto final_split = split_train_heldout(final_set, cfg_.split_seed);
    auto steer = train(MlpClassifier::initialized(model_.d_model(), k, cfg_.steer_clf_seed),
                       steer_split.train, cfg_.train);
    steer_accuracy_ = accuracy(steer.classifier, steer_split.heldout);
    steer_clf_ = std::make_shared<const MlpClassifier>(std::move(steer.classifier));
    eval_clf_ = train(MlpClassifier::initialized(model_.d_model(), k, cfg_.eval_clf_seed),
                      final_split.heldout, cfg_.train)
                    .classifier;
    eval_accuracy_ = accuracy(eval_clf_, final_split.train);

    SeededRng rng(cfg_.input_seed);
    for (std::size_t i = 0; i < cfg_.num_inputs; ++i) {
        inputs_.push_back(random_prompt(rng, cfg_.prompt_length, model_.vocab_size()));
    }
    for (std::size_t i = 0; i < cfg_.calibration_prompts; ++i) calibration_prompts_.push_back(corpus_[i].tokens);
    baseline_ = std::make_unique<BaselineCache>(model_, inputs_, cfg_.max_new_tokens, cfg_.jobs);
}

ContrastivePairs ToyPipeline::caa_pairs(std::uint32_t label) const {
    if (model_.config().planting->kind == PlantingKind::xor_pair) {
        return mirrored_contrastive_pairs(steer_set_, label, cfg_.caa_pairs, cfg_.caa_seed);
    }
    return planted_contrastive_pairs(steer_set_, label, cfg_.caa_pairs, cfg_.caa_seed);
}

const std::map<std::uint32_t, SteeringVector>& ToyPipeline::caa_vectors() const {
    if (caa_.empty()) {
        for (std::uint32_t c = 0; c < num_classes(); ++c) {
            const auto pairs = caa_pairs(c);
            auto v = caa_compute_vector(pairs.positive, pairs.negative);
            v.labels = {{c, 1}};
            v.source_layer = static_cast<std::uint32_t>(cfg_.steer_layer);
            caa_.emplace(c, std::move(v));
        }
    }
    return caa_;
}

Intervention ToyPipeline::intervention(const LossSpec& combo, SteeringMethod method) const {
    SteeringSpec spec;
    spec.loss = combo;
    spec.alpha = 1.0f;
    spec.steps = cfg_.steps;
    spec.gamma = cfg_.gamma;
    spec.layers = {cfg_.steer_layer};
    spec.method = method;
    std::shared_ptr<const SteeringVector> vector;
    if (method == SteeringMethod::caa_add || method == SteeringMethod::directional_ablation) {
        vector = std::make_shared<const SteeringVector>(caa_combine(caa_vectors(), combo.targets, combo.avoids));
    }
    return Intervention(spec, steer_clf_, std::move(vector));
}

EvalOutcome ToyPipeline::evaluate(const Intervention& intervention) const {
    EvalConfig ec;
    ec.max_new_tokens = cfg_.max_new_tokens;
    ec.jobs = cfg_.jobs;
    ec.dataset = "toy";
    return mean_target_prob_delta(model_, eval_clf_, intervention, *baseline_, ec);
}

ComboRun ToyPipeline::run(const LossSpec& combo, SteeringMethod method) const {
    const auto iv = intervention(combo, method);
    const OfflineHeuristicJudge judge(model_.vocab_size());
    ComboRun out;
    out.calibration = calibrate_alpha(
        toy_generation_sampler(model_, iv, calibration_prompts_, cfg_.max_new_tokens, cfg_.sampler_seed),
        judge, cfg_.calibration, combo, cfg_.jobs);
    out.outcome = evaluate(iv.with_alpha(static_cast<float>(out.calibration.best_alpha)));
    return out;
}

}  // namespace ksteer
