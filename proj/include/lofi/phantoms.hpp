#pragma once

#include <string>

#include "lofi/image_grid.hpp"
#include "lofi/nn.hpp"

namespace lofi {

enum class PhantomKind { Ellipses, Blobs, Texture };

PhantomKind parse_phantom_kind(const std::string& name);

// ellipses: random overlapping ellipses clipped to [0, 1] inside the
//   inscribed disk.
// blobs: zero-mean Gaussian random field (DC removed), unit standard
//   deviation; needs a power-of-two size.
// texture: band-limited noise plus piecewise-constant regions with sharp
//   edges, rescaled to [0, 1]; needs a power-of-two size.
// Feature scales are fixed relative to the image extent, so sizes differ
// only in sampling density.
GridImage phantom_gen(PhantomKind kind, int size, Rng& rng);

}  // namespace lofi
