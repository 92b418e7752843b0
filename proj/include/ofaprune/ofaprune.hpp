#pragma once

#include "ofaprune/error.hpp"
#include "ofaprune/tensor.hpp"
#include "ofaprune/layers.hpp"
#include "ofaprune/losses.hpp"
#include "ofaprune/optim.hpp"
#include "ofaprune/gradcheck.hpp"
#include "ofaprune/util.hpp"
#include "ofaprune/arch.hpp"
#include "ofaprune/mask.hpp"
#include "ofaprune/store.hpp"
#include "ofaprune/subnet.hpp"
#include "ofaprune/flops.hpp"
#include "ofaprune/data.hpp"
#include "ofaprune/search.hpp"
#include "ofaprune/trainer.hpp"
#include "ofaprune/checkpoint.hpp"
#include "ofaprune/config.hpp"
#include "ofaprune/pipeline.hpp"
