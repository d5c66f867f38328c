#pragma once

#include "intra/autodiff.hpp"
#include "intra/checkpoint.hpp"
#include "intra/config.hpp"
#include "intra/dataset.hpp"
#include "intra/errors.hpp"
#include "intra/evaluator.hpp"
#include "intra/gradcheck.hpp"
#include "intra/image.hpp"
#include "intra/model.hpp"
#include "intra/model_gradcheck.hpp"
#include "intra/optim.hpp"
#include "intra/parallel.hpp"
#include "intra/patching.hpp"
#include "intra/png_io.hpp"
#include "intra/roc_auc.hpp"
#include "intra/scoring.hpp"
#include "intra/similarity.hpp"
#include "intra/synthetic.hpp"
#include "intra/tensor.hpp"
#include "intra/training.hpp"
