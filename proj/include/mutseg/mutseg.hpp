#pragma once

#include "mutseg/core.hpp"
#include "mutseg/maxflow.hpp"
#include "mutseg/descriptors.hpp"
#include "mutseg/stereo_model.hpp"
#include "mutseg/gmm.hpp"
#include "mutseg/segm_model.hpp"
#include "mutseg/flow.hpp"
#include "mutseg/inference.hpp"
#include "mutseg/image_io.hpp"
#include "mutseg/dataset_io.hpp"
#include "mutseg/evaluation.hpp"
#include "mutseg/synth.hpp"
