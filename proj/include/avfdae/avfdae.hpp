#pragma once

#include "avfdae/augment.hpp"
#include "avfdae/error.hpp"
#include "avfdae/experiment.hpp"
#include "avfdae/fft.hpp"
#include "avfdae/gbt.hpp"
#include "avfdae/knn.hpp"
#include "avfdae/latent.hpp"
#include "avfdae/metrics.hpp"
#include "avfdae/nnet.hpp"
#include "avfdae/pipeline.hpp"
#include "avfdae/rng.hpp"
#include "avfdae/signal_io.hpp"
#include "avfdae/svm.hpp"
#include "avfdae/synthdata.hpp"
#include "avfdae/transforms.hpp"
