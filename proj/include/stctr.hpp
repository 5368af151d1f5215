#pragma once

#include "stctr/ablation.hpp"
#include "stctr/checkpoint.hpp"
#include "stctr/cli.hpp"
#include "stctr/common.hpp"
#include "stctr/config.hpp"
#include "stctr/features.hpp"
#include "stctr/gates.hpp"
#include "stctr/gradcheck.hpp"
#include "stctr/graph.hpp"
#include "stctr/heatmap.hpp"
#include "stctr/io.hpp"
#include "stctr/meta_transform.hpp"
#include "stctr/metrics.hpp"
#include "stctr/model.hpp"
#include "stctr/optimizer.hpp"
#include "stctr/schema.hpp"
#include "stctr/synth.hpp"
#include "stctr/tensor.hpp"
#include "stctr/tower.hpp"
#include "stctr/train.hpp"
