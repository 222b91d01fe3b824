#include "ksteer/steering.hpp"

#include <algorithm>
#include <cmath>

#include "ksteer/binary_io.hpp"
#include "ksteer/error.hpp"
#include "ksteer/numeric.hpp"

namespace ksteer {

std::string_view method_name(SteeringMethod m) {
    switch (m) {
        case SteeringMethod::gradient:
            return "gradient";
        case SteeringMethod::projection_removal:
            return "projection_removal";
        case SteeringMethod::caa_add:
            return "caa_add";
        case SteeringMethod::directional_ablation:
            return "directional_ablation";
    }
    return "unknown";
}

SteeringMethod parse_method(std::string_view name) {
    for (auto m : {SteeringMethod::gradient, SteeringMethod::projection_removal,
                   SteeringMethod::caa_add, SteeringMethod::directional_ablation}) {
        if (method_name(m) == name) return m;
    }
    throw InvalidInput("unknown steering method: " + std::string(name));
}

void SteeringSpec::validate() const {
    if (!(alpha >= 0.0f) || !std::isfinite(alpha)) throw InvalidInput("alpha must be finite and >= 0");
    if (!(gamma > 0.0f && gamma <= 1.0f)) throw InvalidInput("gamma must lie in (0, 1]");
    if (layers.empty()) throw InvalidInput("steering spec needs at least one layer");
}

std::vector<float> step_sizes(float alpha, float gamma, std::size_t steps) {
    std::vector<float> out;
    out.reserve(steps);
    float current = alpha;
    for (std::size_t k = 0; k < steps; ++k) {
        out.push_back(current);
        current *= gamma;
    }
    return out;
}

ActivationMatrix gradient_steer(const ActivationMatrix& a, const MlpClassifier& clf,
                                const SteeringSpec& spec) {
    spec.validate();
    if (a.cols() != clf.d_model()) {
        throw ShapeError("activation width " + std::to_string(a.cols()) +
                         " != classifier d_model " + std::to_string(clf.d_model()));
    }
    spec.loss.validate(clf.num_classes());
    if (spec.alpha == 0.0f || spec.steps == 0) return a;

    ActivationMatrix current = a;
    const auto sizes = step_sizes(spec.alpha, spec.gamma, spec.steps);
    for (std::size_t k = 0; k < sizes.size(); ++k) {
        const Tensor2 grad = input_gradient(clf, current, spec.loss);
        auto values = current.values();
        const auto g = grad.values();
        for (std::size_t i = 0; i < values.size(); ++i) values[i] -= sizes[k] * g[i];
        if (!current.all_finite()) throw NumericOverflow("gradient steering diverged", k);
    }
    return current;
}

bool householder_reflect(std::span<float> row, std::span<const float> normal, float scale) {
    if (row.size() != normal.size()) throw ShapeError("householder_reflect: length mismatch");
    const float norm_sq = dot(normal, normal);
    if (!(norm_sq >= kDegenerateGradient)) return false;
    const float coeff = 2.0f * scale * (dot(row, normal) / norm_sq);
    for (std::size_t i = 0; i < row.size(); ++i) row[i] -= coeff * normal[i];
    return true;
}

ReflectionResult projection_removal(const ActivationMatrix& a, const MlpClassifier& clf,
                                    std::span<const std::size_t> avoids, ReflectionMode mode,
                                    float scale) {
    if (avoids.empty()) throw InvalidInput("projection removal needs at least one avoid class");
    const LossSpec loss{{}, {avoids.begin(), avoids.end()}};
    const Tensor2 grad = input_gradient(clf, a, loss);

    ReflectionResult result{a, {}};
    if (mode == ReflectionMode::per_row) {
        for (std::size_t r = 0; r < a.rows(); ++r) {
            if (!householder_reflect(result.activations.row(r), grad.row(r), scale)) {
                result.degenerate_rows.push_back(r);
            }
        }
    } else if (!householder_reflect(result.activations.values(), grad.values(), scale)) {
        for (std::size_t r = 0; r < a.rows(); ++r) result.degenerate_rows.push_back(r);
    }
    return result;
}

SteeringVector caa_compute_vector(std::span<const std::vector<float>> pos,
                                  std::span<const std::vector<float>> neg) {
    if (pos.size() != neg.size()) {
        throw InvalidInput("contrastive sets differ in size: " + std::to_string(pos.size()) +
                           " vs " + std::to_string(neg.size()));
    }
    if (pos.empty()) throw InvalidInput("no contrastive pairs");
    const std::size_t dim = pos.front().size();
    std::vector<float> sum(dim, 0.0f);
    for (std::size_t i = 0; i < pos.size(); ++i) {
        if (pos[i].size() != dim || neg[i].size() != dim) throw ShapeError("pair width mismatch");
        for (std::size_t j = 0; j < dim; ++j) sum[j] += pos[i][j] - neg[i][j];
    }
    const auto n = static_cast<float>(pos.size());
    for (float& x : sum) x /= n;
    SteeringVector v;
    v.direction = std::move(sum);
    v.method = VectorProvenance::caa;
    return v;
}

SteeringVector caa_combine(const std::map<std::uint32_t, SteeringVector>& per_label,
                           std::span<const std::size_t> targets,
                           std::span<const std::size_t> avoids) {
    if (targets.empty() && avoids.empty()) throw InvalidInput("caa_combine: no labels selected");
    SteeringVector out;
    bool all_caa = true;
    std::size_t dim = 0;
    auto accumulate = [&](std::size_t label, std::int8_t sign) {
        const auto it = per_label.find(static_cast<std::uint32_t>(label));
        if (it == per_label.end()) {
            throw InvalidInput("no steering vector for label " + std::to_string(label));
        }
        const SteeringVector& v = it->second;
        if (out.direction.empty()) {
            dim = v.direction.size();
            out.direction.assign(dim, 0.0f);
            out.source_layer = v.source_layer;
        } else if (v.direction.size() != dim) {
            throw ShapeError("caa_combine: vectors differ in width");
        }
        for (std::size_t j = 0; j < dim; ++j) out.direction[j] += static_cast<float>(sign) * v.direction[j];
        out.labels.push_back({static_cast<std::uint32_t>(label), sign});
        all_caa = all_caa && v.method == VectorProvenance::caa;
    };
    for (std::size_t t : targets) accumulate(t, 1);
    for (std::size_t a : avoids) accumulate(a, -1);
    const auto count = static_cast<float>(targets.size() + avoids.size());
    for (float& x : out.direction) x /= count;
    out.method = all_caa ? VectorProvenance::caa : VectorProvenance::external;
    return out;
}

ActivationMatrix caa_apply(const ActivationMatrix& a, const SteeringVector& v, float alpha) {
    if (v.direction.size() != a.cols()) {
        throw ShapeError("steering vector width " + std::to_string(v.direction.size()) +
                         " != activation width " + std::to_string(a.cols()));
    }
    ActivationMatrix out = a;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += alpha * v.direction[j];
    }
    return out;
}

ActivationMatrix directional_ablation(const ActivationMatrix& a, const SteeringVector& v,
                                      float strength) {
    if (v.direction.size() != a.cols()) throw ShapeError("ablation vector width mismatch");
    const float norm = l2_norm(v.direction);
    if (!(norm > 0.0f)) throw InvalidInput("directional ablation needs a nonzero direction");
    std::vector<float> unit(v.direction);
    for (float& x : unit) x /= norm;
    ActivationMatrix out = a;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        const float coeff = strength * dot(row, unit);
        for (std::size_t j = 0; j < row.size(); ++j) row[j] -= coeff * unit[j];
    }
    return out;
}

namespace {
constexpr std::uint32_t kVectorVersion = 1;
}

std::vector<std::uint8_t> encode_steering_vector(const SteeringVector& v) {
    io::ByteWriter w;
    w.magic("KSVF");
    w.u32(kVectorVersion);
    w.u32(static_cast<std::uint32_t>(v.direction.size()));
    w.u32(static_cast<std::uint32_t>(v.labels.size()));
    for (const auto& l : v.labels) {
        w.u32(l.label);
        w.i8(l.sign);
    }
    w.u32(v.source_layer);
    w.u8(static_cast<std::uint8_t>(v.method));
    w.f32s(v.direction);
    return w.bytes();
}

SteeringVector decode_steering_vector(std::span<const std::uint8_t> bytes) {
    io::ByteReader r(bytes);
    r.expect_magic("KSVF");
    if (const auto version = r.u32(); version != kVectorVersion) {
        throw FormatError("unsupported KSVF version " + std::to_string(version));
    }
    SteeringVector v;
    const std::uint32_t d_model = r.u32();
    const std::uint32_t label_count = r.u32();
    if (static_cast<std::uint64_t>(label_count) * 5 > bytes.size()) {
        throw FormatError("KSVF label count exceeds file size");
    }
    v.labels.resize(label_count);
    for (auto& l : v.labels) {
        l.label = r.u32();
        l.sign = r.i8();
    }
    v.source_layer = r.u32();
    const std::uint8_t tag = r.u8();
    if (tag > static_cast<std::uint8_t>(VectorProvenance::external)) {
        throw FormatError("unknown KSVF method tag " + std::to_string(tag));
    }
    v.method = static_cast<VectorProvenance>(tag);
    if (static_cast<std::uint64_t>(d_model) * 4 > bytes.size()) throw FormatError("truncated KSVF payload");
    v.direction.resize(d_model);
    r.f32s(v.direction);
    r.expect_end();
    return v;
}

void save_steering_vector(const SteeringVector& v, const std::filesystem::path& path) {
    io::write_file(path, encode_steering_vector(v));
}

SteeringVector load_steering_vector(const std::filesystem::path& path) {
    return decode_steering_vector(io::read_file(path));
}

Intervention::Intervention(SteeringSpec spec, std::shared_ptr<const MlpClassifier> clf,
                           std::shared_ptr<const SteeringVector> vector, ReflectionMode mode)
    : spec_(std::move(spec)), clf_(std::move(clf)), vector_(std::move(vector)), mode_(mode) {
    spec_.validate();
    switch (spec_.method) {
        case SteeringMethod::gradient:
        case SteeringMethod::projection_removal:
            if (!clf_) throw InvalidInput(std::string(method_name(spec_.method)) + " needs a classifier");
            spec_.loss.validate(clf_->num_classes());
            if (spec_.method == SteeringMethod::projection_removal && spec_.loss.avoids.empty()) {
                throw InvalidInput("projection_removal needs avoid classes");
            }
            break;
        case SteeringMethod::caa_add:
        case SteeringMethod::directional_ablation:
            if (!vector_) throw InvalidInput(std::string(method_name(spec_.method)) + " needs a steering vector");
            if (spec_.method == SteeringMethod::directional_ablation && !(l2_norm(vector_->direction) > 0.0f)) {
                throw InvalidInput("directional ablation needs a nonzero direction");
            }
            break;
    }
}

Intervention Intervention::with_alpha(float alpha) const {
    Intervention copy = *this;
    copy.spec_.alpha = alpha;
    copy.spec_.validate();
    return copy;
}

Intervention Intervention::with_steps(std::size_t steps) const {
    Intervention copy = *this;
    copy.spec_.steps = steps;
    return copy;
}

ActivationMatrix Intervention::apply(const ActivationMatrix& a, InterventionNotes& notes) const {
    if (spec_.alpha == 0.0f) return a;
    switch (spec_.method) {
        case SteeringMethod::gradient:
            return gradient_steer(a, *clf_, spec_);
        case SteeringMethod::projection_removal: {
            auto result = projection_removal(a, *clf_, spec_.loss.avoids, mode_, spec_.alpha);
            notes.degenerate_rows += result.degenerate_rows.size();
            return std::move(result.activations);
        }
        case SteeringMethod::caa_add:
            return caa_apply(a, *vector_, spec_.alpha);
        case SteeringMethod::directional_ablation:
            return directional_ablation(a, *vector_, spec_.alpha);
    }
    return a;
}

}  // namespace ksteer
