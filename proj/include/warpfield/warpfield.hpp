#pragma once

#include "warpfield/engine.hpp"
#include "warpfield/evaluation.hpp"
#include "warpfield/field.hpp"
#include "warpfield/io.hpp"
#include "warpfield/landmarks.hpp"
#include "warpfield/objective.hpp"
#include "warpfield/rng.hpp"
#include "warpfield/synth.hpp"
#include "warpfield/vec3.hpp"
#include "warpfield/volume.hpp"
