#pragma once

#include <memory>
#include <string>

#include "bt/model.hpp"

namespace bt {

// Checkpoint file: magic line "BTCKPT1\n", an 8-byte little-endian
// manifest length, the JSON manifest (configs plus {name, shape, offset}
// per parameter), and one blob of little-endian 32-bit floats. Offsets
// count floats from the blob start.
template <typename T>
void save_checkpoint(const std::string& path, BasisTransformer<T>& model);

template <typename T>
std::unique_ptr<BasisTransformer<T>> load_checkpoint(const std::string& path);

}  // namespace bt
