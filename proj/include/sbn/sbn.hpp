#pragma once

// Umbrella header for the spectral batch normalization training stack.

#include "sbn/autograd.hpp"
#include "sbn/data.hpp"
#include "sbn/fft.hpp"
#include "sbn/gradcheck.hpp"
#include "sbn/io.hpp"
#include "sbn/metrics.hpp"
#include "sbn/models.hpp"
#include "sbn/norm.hpp"
#include "sbn/ops.hpp"
#include "sbn/optim.hpp"
#include "sbn/parallel.hpp"
#include "sbn/rng.hpp"
#include "sbn/tensor.hpp"
#include "sbn/train.hpp"
