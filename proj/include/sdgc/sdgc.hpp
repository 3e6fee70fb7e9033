#pragma once

#include "sdgc/channel.hpp"
#include "sdgc/config.hpp"
#include "sdgc/decoder.hpp"
#include "sdgc/diffusion.hpp"
#include "sdgc/encoder.hpp"
#include "sdgc/errors.hpp"
#include "sdgc/frames.hpp"
#include "sdgc/metrics.hpp"
#include "sdgc/ndarray.hpp"
#include "sdgc/nn.hpp"
#include "sdgc/pipeline.hpp"
#include "sdgc/rng.hpp"
#include "sdgc/synthetic.hpp"
#include "sdgc/textio.hpp"
