#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace dwtnet {

// Ordered name -> tensor store used for model parameters and checkpoints.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Binary checkpoint layout: the 8-byte magic "DWTNET01", then one record per
// tensor until end of file. Each record is: name length (u64 LE), UTF-8 name
// bytes, rank (u64 LE), extents (u64 LE each), data (f64 LE, row-major).
void save_checkpoint(const std::string& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::string& path);

const Tensor* find_tensor(const NamedTensors& ts, const std::string& name);

}  // namespace dwtnet
