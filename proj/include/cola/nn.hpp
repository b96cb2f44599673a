#pragma once

#include <string>

#include "cola/params.hpp"
#include "cola/tensor.hpp"

namespace cola {

// Scaled dot-product multi-head attention using projection weights looked up
// from `params` by name: <prefix>wq/bq, wk/bk, wv/bv, wo/bo. All projections
// are d x d; d must be divisible by `heads`. Self-attention is the special
// case queries = keys = values.
Tensor multi_head_attention(const Tensor& queries, const Tensor& keys, const Tensor& values,
                            const ParameterSet& params, int heads,
                            const std::string& prefix = "");

// Registers the four attention projections under `prefix` with seeded init.
void register_attention_params(ParameterSet& params, const std::string& prefix, std::size_t d,
                               Rng& rng);

// Pre-norm transformer encoder layer:
//   h   = x + MHA(LN1(x))
//   out = h + W2 gelu(W1 LN2(h) + b1) + b2     (expansion factor 4)
// Parameter names live under <prefix>: ln1.g/ln1.b, attn.*, ln2.g/ln2.b,
// ff1.w/ff1.b, ff2.w/ff2.b.
void register_encoder_layer(ParameterSet& params, const std::string& prefix, std::size_t d,
                            Rng& rng);
Tensor encoder_layer_forward(const Tensor& x, const ParameterSet& params, int heads,
                             const std::string& prefix);

// Stack of `layers` encoder layers followed by a final layer norm.
// Prefixes: <prefix>L<i>. and <prefix>out_ln.{g,b}.
void register_encoder_stack(ParameterSet& params, const std::string& prefix, int layers,
                            std::size_t d, Rng& rng);
Tensor encoder_stack_forward(const Tensor& x, const ParameterSet& params, int layers, int heads,
                             const std::string& prefix);

// Pre-norm cross-attention block: queries attend to a separately normalized
// context, then pass through the feed-forward:
//   h   = q + MHA(LNq(q), LNc(ctx), LNc(ctx))
//   out = h + FFN(LN2(h))
// Prefixes under <prefix>: lnq.*, lnc.*, attn.*, ln2.*, ff1.*, ff2.*.
void register_cross_block(ParameterSet& params, const std::string& prefix, std::size_t d, Rng& rng);
Tensor cross_block_forward(const Tensor& queries, const Tensor& context, const ParameterSet& params,
                           int heads, const std::string& prefix);

// x W + b with w: [in x out], b: [1 x out] under <prefix>w / <prefix>b.
// init_std <= 0 selects Xavier; prediction heads use a small explicit std so
// untrained scores start near zero.
void register_linear(ParameterSet& params, const std::string& prefix, std::size_t in,
                     std::size_t out, Rng& rng, double init_std = 0.0);
Tensor linear_forward(const Tensor& x, const ParameterSet& params, const std::string& prefix);

}  // namespace cola
