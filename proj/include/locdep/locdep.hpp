#pragma once

#include "locdep/checkpoint.hpp"
#include "locdep/config.hpp"
#include "locdep/datasets.hpp"
#include "locdep/gated_autoencoder.hpp"
#include "locdep/gradcheck.hpp"
#include "locdep/inspect.hpp"
#include "locdep/layers.hpp"
#include "locdep/location_conv.hpp"
#include "locdep/models.hpp"
#include "locdep/ops.hpp"
#include "locdep/rng.hpp"
#include "locdep/tensor.hpp"
#include "locdep/train.hpp"
