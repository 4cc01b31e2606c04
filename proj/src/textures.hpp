#pragma once

#include <string>

#include "tensor.hpp"

namespace dwtnet {

// Procedural training corpus. Every texture is a 3 x S x S image in [0, 1],
// fully determined by the RNG stream: stripes (random orientation, band
// width, phase and palette), checkerboards (random cell size, offset and
// palette) and soft Gaussian blobs on a random background.
enum class TextureKind { Stripes, Checkers, Blobs, Mixed };

TextureKind texture_kind_from_string(const std::string& s);
Tensor make_texture(TextureKind kind, int size, Rng& rng);

// [0,1] <-> [-1,1]; the model works in the tanh range, metrics in [0,1].
Tensor to_model_range(const Tensor& img01);
Tensor to_unit_range(const Tensor& img_pm1);

}  // namespace dwtnet
