#include "cmc/model/model.hpp"

#include <cmath>

#include "cmc/core/hash.hpp"
#include "cmc/core/random.hpp"

namespace cmc {

nn::Triple EncoderConfig::divisor() const {
    nn::Triple d{1, 1, 1};
    for (const auto& s : strides)
        for (int a = 0; a < 3; ++a) d[a] *= s[a];
    return d;
}

void EncoderConfig::validate() const {
    const auto n = stage_depths.size();
    if (n == 0 || channels.size() != n || strides.size() != n)
        throw InvalidConfig("stage_depths, channels and strides must have the same nonzero length");
    for (std::size_t s = 0; s < n; ++s) {
        if (stage_depths[s] < 0 || channels[s] < 1) throw InvalidConfig("stage depth/channels must be positive");
        for (int v : strides[s])
            if (v < 1) throw InvalidConfig("strides must be >= 1");
        if (backbone == Backbone::HybridTransformer && int(s) >= global_stage_start && stage_depths[s] > 0 &&
            (attention_heads < 1 || channels[s] % attention_heads != 0))
            throw InvalidConfig("attention_heads (" + std::to_string(attention_heads) + ") must divide channels (" +
                                std::to_string(channels[s]) + ") of global stage " + std::to_string(s));
    }
    if (mlp_ratio < 1) throw InvalidConfig("mlp_ratio must be >= 1");
    if (local_kernel < 1 || local_kernel % 2 == 0) throw InvalidConfig("local_kernel must be odd");
}

void ModelConfig::validate() const {
    encoder.validate();
    if (projection_dim < 1 || projection_hidden < 0 || classes < 2)
        throw InvalidConfig("projection_dim >= 1, projection_hidden >= 0 and classes >= 2 required");
}

namespace {

Matrix random_normal(Index rows, Index cols, Real stddev, Rng& rng) {
    std::normal_distribution<Real> dist(0.0, stddev);
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

}  // namespace

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    const auto& e = cfg_.encoder;

    auto weight = [&](const std::string& name, std::vector<int> shape, Index fan_in) {
        auto rng = derive_rng({seed, fnv1a64(name)});
        const auto [r, c] = storage_extent(shape);
        params_.add(name, std::move(shape), random_normal(r, c, 1.0 / std::sqrt(Real(fan_in)), rng));
    };
    auto zeros = [&](const std::string& name, int n) { params_.add(name, {n}, Matrix::Zero(1, n)); };
    auto bias = [&](const std::string& name, int n, Index fan_in) {
        auto rng = derive_rng({seed, fnv1a64(name)});
        const Real bound = 1.0 / std::sqrt(Real(fan_in));
        std::uniform_real_distribution<Real> dist(-bound, bound);
        Matrix b(1, n);
        for (Index i = 0; i < n; ++i) b(0, i) = dist(rng);
        params_.add(name, {n}, std::move(b));
    };
    auto ones = [&](const std::string& name, int n) { params_.add(name, {n}, Matrix::Ones(1, n)); };
    auto norm = [&](const std::string& prefix, int c) {
        ones(prefix + ".weight", c);
        zeros(prefix + ".bias", c);
    };

    int cin = 1;
    for (std::size_t s = 0; s < e.channels.size(); ++s) {
        const int c = e.channels[s];
        const auto& k = e.strides[s];
        const std::string pe = "encoder.patch_embed" + std::to_string(s);
        weight(pe + ".proj.weight", {c, cin, k[0], k[1], k[2]}, Index(cin) * k[0] * k[1] * k[2]);
        bias(pe + ".proj.bias", c, Index(cin) * k[0] * k[1] * k[2]);
        norm(pe + ".norm", c);
        for (int b = 0; b < e.stage_depths[s]; ++b) {
            const std::string p = "encoder.stages." + std::to_string(s) + "." + std::to_string(b);
            if (e.backbone == Backbone::ResidualCnn) {
                weight(p + ".conv1.weight", {c, c, 3, 3, 3}, Index(c) * 27);
                bias(p + ".conv1.bias", c, Index(c) * 27);
                norm(p + ".norm1", c);
                weight(p + ".conv2.weight", {c, c, 3, 3, 3}, Index(c) * 27);
                bias(p + ".conv2.bias", c, Index(c) * 27);
                norm(p + ".norm2", c);
                continue;
            }
            weight(p + ".pos_embed.weight", {c, 1, 3, 3, 3}, 27);
            bias(p + ".pos_embed.bias", c, 27);
            norm(p + ".norm1", c);
            if (int(s) >= e.global_stage_start) {
                weight(p + ".attn.qkv.weight", {3 * c, c}, c);
                bias(p + ".attn.qkv.bias", 3 * c, c);
                weight(p + ".attn.proj.weight", {c, c}, c);
                bias(p + ".attn.proj.bias", c, c);
            } else {
                const int lk = e.local_kernel;
                weight(p + ".attn.conv1.weight", {c, c}, c);
                bias(p + ".attn.conv1.bias", c, c);
                weight(p + ".attn.dw.weight", {c, 1, lk, lk, lk}, Index(lk) * lk * lk);
                bias(p + ".attn.dw.bias", c, Index(lk) * lk * lk);
                weight(p + ".attn.conv2.weight", {c, c}, c);
                bias(p + ".attn.conv2.bias", c, c);
            }
            norm(p + ".norm2", c);
            weight(p + ".mlp.fc1.weight", {e.mlp_ratio * c, c}, c);
            bias(p + ".mlp.fc1.bias", e.mlp_ratio * c, c);
            weight(p + ".mlp.fc2.weight", {c, e.mlp_ratio * c}, Index(e.mlp_ratio) * c);
            bias(p + ".mlp.fc2.bias", c, Index(e.mlp_ratio) * c);
        }
        cin = c;
    }
    const int de = e.feature_dim();
    norm("encoder.norm", de);
    const int hidden = cfg_.projection_hidden > 0 ? cfg_.projection_hidden : de;
    weight("projection.fc1.weight", {hidden, de}, de);
    bias("projection.fc1.bias", hidden, de);
    weight("projection.fc2.weight", {cfg_.projection_dim, hidden}, hidden);
    bias("projection.fc2.bias", cfg_.projection_dim, hidden);
    weight("classifier.weight", {cfg_.classes, de}, de);
    bias("classifier.bias", cfg_.classes, de);
}

nn::Var Model::param(const std::string& name) const {
    const auto* p = params_.find(name);
    if (!p) throw InvalidArgument("missing parameter " + name);
    return p->var;
}

HybridBlockParams Model::block_params(int stage, int block) const {
    const std::string p = "encoder.stages." + std::to_string(stage) + "." + std::to_string(block);
    const auto& e = cfg_.encoder;
    HybridBlockParams b;
    b.global = stage >= e.global_stage_start;
    b.heads = e.attention_heads;
    b.local_kernel = e.local_kernel;
    b.pos_w = param(p + ".pos_embed.weight");
    b.pos_b = param(p + ".pos_embed.bias");
    b.norm1_g = param(p + ".norm1.weight");
    b.norm1_b = param(p + ".norm1.bias");
    if (b.global) {
        b.qkv_w = param(p + ".attn.qkv.weight");
        b.qkv_b = param(p + ".attn.qkv.bias");
        b.proj_w = param(p + ".attn.proj.weight");
        b.proj_b = param(p + ".attn.proj.bias");
    } else {
        b.conv1_w = param(p + ".attn.conv1.weight");
        b.conv1_b = param(p + ".attn.conv1.bias");
        b.dw_w = param(p + ".attn.dw.weight");
        b.dw_b = param(p + ".attn.dw.bias");
        b.conv2_w = param(p + ".attn.conv2.weight");
        b.conv2_b = param(p + ".attn.conv2.bias");
    }
    b.norm2_g = param(p + ".norm2.weight");
    b.norm2_b = param(p + ".norm2.bias");
    b.fc1_w = param(p + ".mlp.fc1.weight");
    b.fc1_b = param(p + ".mlp.fc1.bias");
    b.fc2_w = param(p + ".mlp.fc2.weight");
    b.fc2_b = param(p + ".mlp.fc2.bias");
    return b;
}

nn::Var hybrid_block(const nn::Var& x, const HybridBlockParams& p, std::vector<Matrix>* attention) {
    using namespace nn;
    Var h = add(x, depthwise_conv3d(x, p.pos_w, p.pos_b, {3, 3, 3}));
    Var n1 = layer_norm(h, p.norm1_g, p.norm1_b);
    Var agg;
    if (p.global) {
        agg = linear(self_attention(linear(n1, p.qkv_w, p.qkv_b), p.heads, attention), p.proj_w, p.proj_b);
    } else {
        const int k = p.local_kernel;
        agg = linear(depthwise_conv3d(linear(n1, p.conv1_w, p.conv1_b), p.dw_w, p.dw_b, {k, k, k}), p.conv2_w,
                     p.conv2_b);
    }
    h = add(h, agg);
    Var n2 = layer_norm(h, p.norm2_g, p.norm2_b);
    return add(h, linear(gelu(linear(n2, p.fc1_w, p.fc1_b)), p.fc2_w, p.fc2_b));
}

void Model::check_input(const Shape3& s) const {
    const auto d = cfg_.encoder.divisor();
    if (s.depth % d[0] != 0 || s.height % d[1] != 0 || s.width % d[2] != 0)
        throw InvalidArgument("input shape " + s.str() + " is not divisible by the encoder downsampling factor (" +
                              std::to_string(d[0]) + "," + std::to_string(d[1]) + "," + std::to_string(d[2]) + ")");
}

nn::Var Model::encode_grid(const CTVolume& v) const {
    using namespace nn;
    check_input(v.shape());
    const auto& e = cfg_.encoder;
    Var x = constant(Eigen::Map<const Matrix>(v.data(), v.size(), 1), v.shape());
    for (std::size_t s = 0; s < e.channels.size(); ++s) {
        const std::string pe = "encoder.patch_embed" + std::to_string(s);
        x = conv3d(x, param(pe + ".proj.weight"), param(pe + ".proj.bias"), e.strides[s], e.strides[s], {0, 0, 0});
        x = layer_norm(x, param(pe + ".norm.weight"), param(pe + ".norm.bias"));
        for (int b = 0; b < e.stage_depths[s]; ++b) {
            if (e.backbone == Backbone::HybridTransformer) {
                x = hybrid_block(x, block_params(int(s), b));
                continue;
            }
            const std::string p = "encoder.stages." + std::to_string(s) + "." + std::to_string(b);
            Var h = conv3d(x, param(p + ".conv1.weight"), param(p + ".conv1.bias"), {3, 3, 3}, {1, 1, 1}, {1, 1, 1});
            h = relu(layer_norm(h, param(p + ".norm1.weight"), param(p + ".norm1.bias")));
            h = conv3d(h, param(p + ".conv2.weight"), param(p + ".conv2.bias"), {3, 3, 3}, {1, 1, 1}, {1, 1, 1});
            h = layer_norm(h, param(p + ".norm2.weight"), param(p + ".norm2.bias"));
            x = relu(add(x, h));
        }
    }
    return layer_norm(x, param("encoder.norm.weight"), param("encoder.norm.bias"));
}

nn::Var Model::project(const nn::Var& features) const {
    using namespace nn;
    Var h = relu(linear(features, param("projection.fc1.weight"), param("projection.fc1.bias")));
    return l2_normalize_rows(linear(h, param("projection.fc2.weight"), param("projection.fc2.bias")));
}

nn::Var Model::classify(const nn::Var& features) const {
    return nn::linear(features, param("classifier.weight"), param("classifier.bias"));
}

Model::Outputs Model::forward(const CTVolume& v) const {
    Outputs o;
    o.grid = encode_grid(v);
    o.features = nn::mean_rows(o.grid);
    o.projection = project(o.features);
    o.logits = classify(o.features);
    return o;
}

void Model::zero_residual_branches() {
    for (auto& p : params_.items()) {
        const auto& n = p.name;
        const bool branch_out = n.ends_with(".pos_embed.weight") || n.ends_with(".pos_embed.bias") ||
                                n.ends_with(".attn.conv2.weight") || n.ends_with(".attn.conv2.bias") ||
                                n.ends_with(".attn.proj.weight") || n.ends_with(".attn.proj.bias") ||
                                n.ends_with(".mlp.fc2.weight") || n.ends_with(".mlp.fc2.bias");
        if (branch_out) p.var->value.setZero();
    }
}

Matrix encode(const Model& model, std::span<const CTVolume> batch) {
    if (batch.empty()) return Matrix(0, model.config().encoder.feature_dim());
    nn::NoGradGuard guard;
    Matrix out(Index(batch.size()), model.config().encoder.feature_dim());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (!(batch[i].shape() == batch[0].shape()))
            throw InvalidArgument("batch volumes must share one shape: " + batch[i].shape().str() + " vs " +
                                  batch[0].shape().str());
        out.row(Index(i)) = nn::mean_rows(model.encode_grid(batch[i]))->value;
    }
    return out;
}

Matrix project(const Model& model, const Matrix& features) {
    nn::NoGradGuard guard;
    return model.project(nn::constant(features))->value;
}

Matrix classify(const Model& model, const Matrix& features) {
    nn::NoGradGuard guard;
    return model.classify(nn::constant(features))->value;
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix p = logits.colwise() - logits.rowwise().maxCoeff();
    p = p.array().exp();
    return p.array().colwise() / p.rowwise().sum().array();
}

}  // namespace cmc
