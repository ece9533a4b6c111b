#pragma once

// Umbrella header for the full pipeline.

#include "birdrone/common.hpp"
#include "birdrone/tensor.hpp"
#include "birdrone/conv.hpp"
#include "birdrone/gradcheck.hpp"
#include "birdrone/layers.hpp"
#include "birdrone/attention.hpp"
#include "birdrone/backbone.hpp"
#include "birdrone/boxes.hpp"
#include "birdrone/metrics.hpp"
#include "birdrone/serialize.hpp"
#include "birdrone/detector.hpp"
#include "birdrone/dataops.hpp"
