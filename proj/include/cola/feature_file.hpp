#pragma once

#include <string>
#include <vector>

#include "cola/backbone.hpp"

namespace cola {

// Binary feature file, little-endian:
//   magic "COLAFEAT", u32 version = 1, u32 count, then per record:
//   u32 id_len + UTF-8 id, u32 p, u32 n_tokens, u32 d,
//   p*d f32 patch values, n_tokens*d f32 token values,
//   d f32 pooled_image, d f32 pooled_text.
// Values are stored as f32; the reader upcasts to f64, recomputes the pooled
// means and rejects the file if they drift beyond 1e-6 from the stored ones.
// A read-back file rewrites byte-identically.

void write_feature_file(const std::string& path, const std::vector<FeatureBundle>& bundles);
std::vector<FeatureBundle> read_feature_file(const std::string& path);

}  // namespace cola
