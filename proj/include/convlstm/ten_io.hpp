#pragma once

#include <string>

#include "convlstm/tensor.hpp"

namespace convlstm {

// Raw tensor file format "TEN1": magic bytes `TEN1`, u32 little-endian rank,
// rank x u32 little-endian extents, then f32 little-endian values in
// row-major order. Used for weight snapshots and golden-file tests.
// Double tensors are narrowed to f32 on save.
void save_ten1(const std::string& path, const TensorT<float>& t);
void save_ten1(const std::string& path, const TensorT<double>& t);

TensorT<float> load_ten1(const std::string& path);

}  // namespace convlstm
