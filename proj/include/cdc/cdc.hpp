#pragma once

#include "cdc/image.hpp"
#include "cdc/imgcore.hpp"
#include "cdc/png_io.hpp"
#include "cdc/components.hpp"
#include "cdc/losses.hpp"
#include "cdc/nn.hpp"
#include "cdc/model.hpp"
#include "cdc/optim.hpp"
#include "cdc/checkpoint.hpp"
#include "cdc/metrics.hpp"
#include "cdc/data.hpp"
#include "cdc/harness.hpp"
