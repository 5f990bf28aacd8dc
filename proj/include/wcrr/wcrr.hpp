#pragma once

#include "wcrr/baselines.hpp"
#include "wcrr/checkpoint.hpp"
#include "wcrr/config.hpp"
#include "wcrr/convstack.hpp"
#include "wcrr/fft.hpp"
#include "wcrr/forward.hpp"
#include "wcrr/image.hpp"
#include "wcrr/metrics.hpp"
#include "wcrr/phantom.hpp"
#include "wcrr/problems.hpp"
#include "wcrr/regularizer.hpp"
#include "wcrr/solvers.hpp"
#include "wcrr/spline.hpp"
#include "wcrr/training.hpp"
#include "wcrr/tune.hpp"
