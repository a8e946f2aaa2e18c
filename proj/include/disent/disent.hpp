// Convenience umbrella header.
#pragma once

#include "disent/checkpoint.hpp"
#include "disent/config.hpp"
#include "disent/controllers.hpp"
#include "disent/errors.hpp"
#include "disent/evaluation.hpp"
#include "disent/hash.hpp"
#include "disent/image_io.hpp"
#include "disent/layers.hpp"
#include "disent/mi.hpp"
#include "disent/networks.hpp"
#include "disent/optimizer.hpp"
#include "disent/rng.hpp"
#include "disent/sprites.hpp"
#include "disent/tensor.hpp"
#include "disent/trainer.hpp"
