#pragma once

#include "uevs/emn.hpp"
#include "uevs/error.hpp"
#include "uevs/events.hpp"
#include "uevs/metrics.hpp"
#include "uevs/net.hpp"
#include "uevs/parallel.hpp"
#include "uevs/pollution.hpp"
#include "uevs/random.hpp"
#include "uevs/stack.hpp"
#include "uevs/synth.hpp"
#include "uevs/tensor.hpp"
#include "uevs/train.hpp"
