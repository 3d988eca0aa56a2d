#pragma once

#include "textlens/data/io.hpp"
#include "textlens/data/irt.hpp"
#include "textlens/data/item_bank.hpp"
#include "textlens/data/splits.hpp"
#include "textlens/data/types.hpp"
#include "textlens/embeddings.hpp"
#include "textlens/errors.hpp"
#include "textlens/eval.hpp"
#include "textlens/model.hpp"
#include "textlens/nn/adam.hpp"
#include "textlens/nn/autograd.hpp"
#include "textlens/nn/tensor.hpp"
#include "textlens/rng.hpp"
#include "textlens/train.hpp"
