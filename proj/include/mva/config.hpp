#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mva/errors.hpp"

namespace mva {

// Which predictor produces the per-vertex features.
enum class Variant { static_table, codes_concat, codes_mlp, ours_c, ours_d };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::static_table: return "static";
    case Variant::codes_concat: return "codes";
    case Variant::codes_mlp: return "codes-mlp";
    case Variant::ours_c: return "ours-c";
    case Variant::ours_d: return "ours-d";
  }
  return "?";
}

inline Variant variant_from_name(const std::string& s) {
  if (s == "static") return Variant::static_table;
  if (s == "codes" || s == "codes-concat") return Variant::codes_concat;
  if (s == "codes-mlp") return Variant::codes_mlp;
  if (s == "ours-c") return Variant::ours_c;
  if (s == "ours-d") return Variant::ours_d;
  throw UsageError("unknown predictor variant: " + s);
}

// Architecture knobs. Reference widths follow the full-scale plan; the
// width multiplier scales every learned module uniformly so a desk-sized
// avatar trains on a CPU. width_mult = 1 reproduces the full-scale plan.
struct PipelineConfig {
  double width_mult = 0.25;
  int feature_dim = 16;    // per-vertex feature width F
  int uv_resolution = 64;  // R, power of two, divisible by 2^6
  int k_neighbors = 4;
  int coord_bands = 10;  // positional encoding bands for coordinates
  int view_bands = 4;    // for view directions
  int warp_bands = 6;    // for the warp field input (windowed)
  int latent_dim = 16;   // per-frame warp latent code
  int n_coarse = 64;     // samples per ray, coarse pass
  int n_fine = 64;       // importance samples added for the fine pass

  int scaled(int reference_width) const {
    return std::max(1, static_cast<int>(std::lround(reference_width * width_mult)));
  }

  std::vector<int> unet_channels() const {
    return {scaled(8), scaled(16), scaled(32), scaled(64), scaled(128), scaled(256)};
  }

  int field_hidden() const { return scaled(128); }
  int color_hidden() const { return scaled(64); }
  int warp_hidden() const { return scaled(128); }

  void validate() const {
    if (uv_resolution < 64 || (uv_resolution & (uv_resolution - 1)) != 0)
      throw ValidationError("uv_resolution must be a power of two >= 64 (6 levels of halving)");
    if (k_neighbors < 1) throw ValidationError("k_neighbors must be >= 1");
    if (n_coarse < 2 || n_fine < 0) throw ValidationError("bad sample counts");
    if (feature_dim < 1 || latent_dim < 1) throw ValidationError("bad widths");
  }

  static PipelineConfig desk_default() { return {}; }

  static PipelineConfig paper_scale() {
    PipelineConfig c;
    c.width_mult = 1.0;
    c.feature_dim = 64;
    c.uv_resolution = 256;
    c.latent_dim = 64;
    return c;
  }
};

}  // namespace mva
