// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "instapbm/data_synth.hpp"

namespace instapbm {

// Directory layout:
//   meta.json         provenance, K, per-class counts, role, input shape
//   images.f32le      row-major inputs as little-endian float32
//   labels.u32le      labels as little-endian uint32 (0xffffffff = outlier)
//   sublabels.u32le   optional
void save_dataset(const std::filesystem::path& dir, const DomainDataset& ds);
DomainDataset load_dataset(const std::filesystem::path& dir);

}  // namespace instapbm
