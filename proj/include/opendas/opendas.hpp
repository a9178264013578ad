#pragma once

#include "checkpoint.hpp"
#include "config.hpp"
#include "data.hpp"
#include "encoder.hpp"
#include "error.hpp"
#include "image.hpp"
#include "image_io.hpp"
#include "layers.hpp"
#include "losses.hpp"
#include "metrics.hpp"
#include "mining.hpp"
#include "model.hpp"
#include "pipeline.hpp"
#include "run_config.hpp"
#include "synthetic.hpp"
#include "tensor.hpp"
#include "tokenizer.hpp"
#include "trainer.hpp"
