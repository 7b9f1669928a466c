#pragma once

#include "cgrl/autodiff.hpp"
#include "cgrl/caption_decoder.hpp"
#include "cgrl/checkpoint.hpp"
#include "cgrl/config.hpp"
#include "cgrl/consensus.hpp"
#include "cgrl/error.hpp"
#include "cgrl/graph_encoder.hpp"
#include "cgrl/grounding.hpp"
#include "cgrl/metrics.hpp"
#include "cgrl/model.hpp"
#include "cgrl/pipeline.hpp"
#include "cgrl/region_graph.hpp"
#include "cgrl/rng.hpp"
#include "cgrl/scene_graph.hpp"
#include "cgrl/synthetic_world.hpp"
#include "cgrl/tensor.hpp"
