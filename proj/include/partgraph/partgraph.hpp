#pragma once

#include "partgraph/fields.hpp"
#include "partgraph/dspf.hpp"
#include "partgraph/keypoints.hpp"
#include "partgraph/limbs.hpp"
#include "partgraph/matching.hpp"
#include "partgraph/grouping.hpp"
#include "partgraph/synth.hpp"
#include "partgraph/metrics.hpp"
#include "partgraph/losses.hpp"
#include "partgraph/pipeline.hpp"
#include "partgraph/io.hpp"
#include "partgraph/gradcheck.hpp"
