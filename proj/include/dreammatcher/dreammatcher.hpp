#pragma once

#include "dreammatcher/attention.hpp"
#include "dreammatcher/backend.hpp"
#include "dreammatcher/config.hpp"
#include "dreammatcher/consistency.hpp"
#include "dreammatcher/engine.hpp"
#include "dreammatcher/error.hpp"
#include "dreammatcher/frame.hpp"
#include "dreammatcher/guidance.hpp"
#include "dreammatcher/image_io.hpp"
#include "dreammatcher/matching.hpp"
#include "dreammatcher/pca.hpp"
#include "dreammatcher/protocol.hpp"
#include "dreammatcher/sampler.hpp"
#include "dreammatcher/schedule.hpp"
#include "dreammatcher/synthetic_backend.hpp"
#include "dreammatcher/tensors.hpp"
#include "dreammatcher/warp.hpp"
