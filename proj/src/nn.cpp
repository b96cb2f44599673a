#include "cola/nn.hpp"

#include <cmath>

namespace cola {

namespace {
Tensor xavier(std::size_t in, std::size_t out, Rng& rng) {
    const double std = std::sqrt(2.0 / double(in + out));
    return Tensor::randn(in, out, rng, std);
}
}  // namespace

void register_linear(ParameterSet& params, const std::string& prefix, std::size_t in,
                     std::size_t out, Rng& rng, double init_std) {
    params.add(prefix + "w", init_std > 0 ? Tensor::randn(in, out, rng, init_std)
                                          : xavier(in, out, rng));
    params.add(prefix + "b", Tensor::zeros(1, out));
}

Tensor linear_forward(const Tensor& x, const ParameterSet& params, const std::string& prefix) {
    return add_rowwise(matmul(x, params.at(prefix + "w")), params.at(prefix + "b"));
}

void register_attention_params(ParameterSet& params, const std::string& prefix, std::size_t d,
                               Rng& rng) {
    register_linear(params, prefix + "wq_", d, d, rng);
    // No bias on the key projection: a constant key offset shifts each
    // query's logits uniformly and softmax cancels the shift, so such a
    // parameter could never receive gradient.
    params.add(prefix + "wk_w", xavier(d, d, rng));
    register_linear(params, prefix + "wv_", d, d, rng);
    register_linear(params, prefix + "wo_", d, d, rng);
}

Tensor multi_head_attention(const Tensor& queries, const Tensor& keys, const Tensor& values,
                            const ParameterSet& params, int heads, const std::string& prefix) {
    const std::size_t d = queries.cols();
    if (heads <= 0 || d % std::size_t(heads) != 0)
        throw ConfigError("multi_head_attention: d=" + std::to_string(d) + " not divisible by heads=" +
                          std::to_string(heads));
    if (keys.cols() != d || values.cols() != d)
        throw ShapeError("multi_head_attention: feature dims disagree, q " + queries.shape_str() +
                         " k " + keys.shape_str() + " v " + values.shape_str());
    if (keys.rows() != values.rows())
        throw ShapeError("multi_head_attention: keys " + keys.shape_str() + " vs values " +
                         values.shape_str());

    const Tensor q = linear_forward(queries, params, prefix + "wq_");
    const Tensor k = matmul(keys, params.at(prefix + "wk_w"));
    const Tensor v = linear_forward(values, params, prefix + "wv_");

    const std::size_t head_dim = d / std::size_t(heads);
    const double inv_scale = 1.0 / std::sqrt(double(head_dim));
    std::vector<Tensor> head_outs;
    head_outs.reserve(std::size_t(heads));
    for (int h = 0; h < heads; ++h) {
        const std::size_t off = std::size_t(h) * head_dim;
        const Tensor qh = slice_cols(q, off, head_dim);
        const Tensor kh = slice_cols(k, off, head_dim);
        const Tensor vh = slice_cols(v, off, head_dim);
        const Tensor weights = softmax(scale(matmul(qh, transpose(kh)), inv_scale), 1);
        head_outs.push_back(matmul(weights, vh));
    }
    const Tensor merged = heads == 1 ? head_outs[0] : concat_cols(head_outs);
    return linear_forward(merged, params, prefix + "wo_");
}

namespace {
void register_layer_norm(ParameterSet& params, const std::string& prefix, std::size_t d) {
    params.add(prefix + "g", Tensor::from(1, d, std::vector<double>(d, 1.0)));
    params.add(prefix + "b", Tensor::zeros(1, d));
}

Tensor ln_forward(const Tensor& x, const ParameterSet& params, const std::string& prefix) {
    return layer_norm(x, params.at(prefix + "g"), params.at(prefix + "b"));
}

Tensor ffn_forward(const Tensor& x, const ParameterSet& params, const std::string& prefix) {
    return linear_forward(gelu(linear_forward(x, params, prefix + "ff1_")), params, prefix + "ff2_");
}

void register_ffn(ParameterSet& params, const std::string& prefix, std::size_t d, Rng& rng) {
    register_linear(params, prefix + "ff1_", d, 4 * d, rng);
    register_linear(params, prefix + "ff2_", 4 * d, d, rng);
}
}  // namespace

void register_encoder_layer(ParameterSet& params, const std::string& prefix, std::size_t d,
                            Rng& rng) {
    register_layer_norm(params, prefix + "ln1.", d);
    register_attention_params(params, prefix + "attn.", d, rng);
    register_layer_norm(params, prefix + "ln2.", d);
    register_ffn(params, prefix, d, rng);
}

Tensor encoder_layer_forward(const Tensor& x, const ParameterSet& params, int heads,
                             const std::string& prefix) {
    const Tensor normed = ln_forward(x, params, prefix + "ln1.");
    const Tensor h = add(x, multi_head_attention(normed, normed, normed, params, heads, prefix + "attn."));
    return add(h, ffn_forward(ln_forward(h, params, prefix + "ln2."), params, prefix));
}

void register_encoder_stack(ParameterSet& params, const std::string& prefix, int layers,
                            std::size_t d, Rng& rng) {
    for (int i = 0; i < layers; ++i)
        register_encoder_layer(params, prefix + "L" + std::to_string(i) + ".", d, rng);
    register_layer_norm(params, prefix + "out_ln.", d);
}

Tensor encoder_stack_forward(const Tensor& x, const ParameterSet& params, int layers, int heads,
                             const std::string& prefix) {
    Tensor h = x;
    for (int i = 0; i < layers; ++i)
        h = encoder_layer_forward(h, params, heads, prefix + "L" + std::to_string(i) + ".");
    return ln_forward(h, params, prefix + "out_ln.");
}

void register_cross_block(ParameterSet& params, const std::string& prefix, std::size_t d, Rng& rng) {
    register_layer_norm(params, prefix + "lnq.", d);
    register_layer_norm(params, prefix + "lnc.", d);
    register_attention_params(params, prefix + "attn.", d, rng);
    register_layer_norm(params, prefix + "ln2.", d);
    register_ffn(params, prefix, d, rng);
}

Tensor cross_block_forward(const Tensor& queries, const Tensor& context, const ParameterSet& params,
                           int heads, const std::string& prefix) {
    const Tensor qn = ln_forward(queries, params, prefix + "lnq.");
    const Tensor cn = ln_forward(context, params, prefix + "lnc.");
    const Tensor h = add(queries, multi_head_attention(qn, cn, cn, params, heads, prefix + "attn."));
    return add(h, ffn_forward(ln_forward(h, params, prefix + "ln2."), params, prefix));
}

}  // namespace cola
