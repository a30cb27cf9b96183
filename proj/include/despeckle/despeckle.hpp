#pragma once

#include "despeckle/baselines.hpp"   // IWYU pragma: export
#include "despeckle/checkpoint.hpp"  // IWYU pragma: export
#include "despeckle/csv.hpp"         // IWYU pragma: export
#include "despeckle/errors.hpp"      // IWYU pragma: export
#include "despeckle/harness.hpp"     // IWYU pragma: export
#include "despeckle/image.hpp"       // IWYU pragma: export
#include "despeckle/image_io.hpp"    // IWYU pragma: export
#include "despeckle/metrics.hpp"     // IWYU pragma: export
#include "despeckle/nn.hpp"          // IWYU pragma: export
#include "despeckle/parallel.hpp"    // IWYU pragma: export
#include "despeckle/rng.hpp"         // IWYU pragma: export
#include "despeckle/sddpm.hpp"       // IWYU pragma: export
#include "despeckle/speckle.hpp"     // IWYU pragma: export
