#pragma once

#include "notelm/autodiff.hpp"
#include "notelm/common.hpp"
#include "notelm/config.hpp"
#include "notelm/corpus.hpp"
#include "notelm/harness.hpp"
#include "notelm/inference.hpp"
#include "notelm/metrics.hpp"
#include "notelm/model.hpp"
#include "notelm/optim.hpp"
#include "notelm/plot.hpp"
#include "notelm/tensor.hpp"
#include "notelm/tokenizer.hpp"
#include "notelm/training.hpp"
