// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "skelflow/error.hpp"

namespace skelflow {

/// Architecture hyperparameters shared by the encoder, backbone and adapter.
struct ModelDims {
  int feature_dim = 64;       // F
  int backbone_blocks = 4;    // L
  int n_heads = 4;
  int ffn_multiplier = 4;
  int d_max = 5;
  int n_relations = 6;        // fixed by the relation code set
  int n_encoder_units = 2;    // fixed by the encoder layout
  int freq_bands = 4;         // joint-coordinate embedding octaves
  int t_freq_bands = 8;       // timestep embedding octaves
  int grid_resolution = 16;   // V (occupancy voxels per side)
  int latent_channels = 4;    // C
  int n_labels = 4;           // categorical condition vocabulary (plus a null row)

  int latent_resolution() const { return grid_resolution / 2; }
  int latent_tokens() const {
    int d = latent_resolution();
    return d * d * d;
  }
  int joint_feature_width() const { return 3 * 2 * freq_bands; }
  int t_feature_width() const { return 2 * t_freq_bands; }

  void validate() const {
    require(feature_dim >= 1 && backbone_blocks >= 1 && n_heads >= 1, errc::config_mismatch,
            "model dims must be positive");
    require(feature_dim % n_heads == 0, errc::config_mismatch,
            "feature_dim must be divisible by n_heads");
    require(ffn_multiplier >= 1 && d_max >= 1 && freq_bands >= 1 && t_freq_bands >= 1,
            errc::config_mismatch, "model dims must be positive");
    require(n_relations == 6, errc::config_mismatch, "relation codebook is fixed at 6 entries");
    require(n_encoder_units == 2, errc::config_mismatch, "encoder is fixed at 2 units");
    require(grid_resolution >= 2 && (grid_resolution & (grid_resolution - 1)) == 0,
            errc::config_mismatch, "grid_resolution must be a power of two");
    require(latent_channels >= 1 && n_labels >= 1, errc::config_mismatch,
            "latent_channels and n_labels must be positive");
  }
};

}  // namespace skelflow
