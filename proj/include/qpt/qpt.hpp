#pragma once

#include "qpt/channels.hpp"
#include "qpt/conic.hpp"
#include "qpt/experiments.hpp"
#include "qpt/io.hpp"
#include "qpt/linalg.hpp"
#include "qpt/measurements.hpp"
#include "qpt/reconstruct.hpp"
#include "qpt/rng.hpp"
#include "qpt/types.hpp"
#include "qpt/verify.hpp"
