#pragma once

// Umbrella header for the dual-feedback retriever library.

#include "dualfb/errors.hpp"
#include "dualfb/text.hpp"
#include "dualfb/rng.hpp"
#include "dualfb/corpus.hpp"
#include "dualfb/encoder.hpp"
#include "dualfb/checkpoint.hpp"
#include "dualfb/optim.hpp"
#include "dualfb/retriever.hpp"
#include "dualfb/generator.hpp"
#include "dualfb/metrics.hpp"
#include "dualfb/feedback.hpp"
#include "dualfb/pretrain.hpp"
#include "dualfb/runtime.hpp"
#include "dualfb/llm.hpp"
#include "dualfb/synthetic.hpp"
