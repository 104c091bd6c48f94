#pragma once

#include "dpa/autoencoder.hpp"
#include "dpa/checkpoint.hpp"
#include "dpa/data.hpp"
#include "dpa/evaluation.hpp"
#include "dpa/features.hpp"
#include "dpa/hparam.hpp"
#include "dpa/image_io.hpp"
#include "dpa/perceptual_loss.hpp"
#include "dpa/synthetic.hpp"
#include "dpa/trainer.hpp"
