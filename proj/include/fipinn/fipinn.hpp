#pragma once

#include "fipinn/adaptive.hpp"
#include "fipinn/distributions.hpp"
#include "fipinn/domain.hpp"
#include "fipinn/error.hpp"
#include "fipinn/failure.hpp"
#include "fipinn/harness.hpp"
#include "fipinn/io.hpp"
#include "fipinn/network.hpp"
#include "fipinn/parallel.hpp"
#include "fipinn/problems.hpp"
#include "fipinn/random.hpp"
#include "fipinn/training.hpp"
