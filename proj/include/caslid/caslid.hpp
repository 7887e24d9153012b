#pragma once

// Umbrella include.

#include "caslid/adam.hpp"
#include "caslid/cascade.hpp"
#include "caslid/checkpoint.hpp"
#include "caslid/common.hpp"
#include "caslid/config.hpp"
#include "caslid/data.hpp"
#include "caslid/decode.hpp"
#include "caslid/encoder.hpp"
#include "caslid/eval.hpp"
#include "caslid/lid.hpp"
#include "caslid/metrics.hpp"
#include "caslid/nn.hpp"
#include "caslid/ops.hpp"
#include "caslid/params.hpp"
#include "caslid/rng.hpp"
#include "caslid/streaming.hpp"
#include "caslid/synthdata.hpp"
#include "caslid/tape.hpp"
#include "caslid/tensor.hpp"
#include "caslid/transducer.hpp"
#include "caslid/verify.hpp"
