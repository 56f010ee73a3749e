#pragma once

#include "gamseg/error.hpp"
#include "gamseg/rng.hpp"
#include "gamseg/audio_io.hpp"
#include "gamseg/features.hpp"
#include "gamseg/annotations.hpp"
#include "gamseg/manifest.hpp"
#include "gamseg/tensor.hpp"
#include "gamseg/model.hpp"
#include "gamseg/gradcheck.hpp"
#include "gamseg/checkpoint.hpp"
#include "gamseg/postprocess.hpp"
#include "gamseg/inference.hpp"
#include "gamseg/baseline.hpp"
#include "gamseg/synth.hpp"
#include "gamseg/augment.hpp"
#include "gamseg/training.hpp"
