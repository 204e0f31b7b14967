#pragma once
// Umbrella header.
#include "error.hpp"
#include "rng.hpp"
#include "core.hpp"
#include "splits.hpp"
#include "predictor.hpp"
#include "conformal.hpp"
#include "clustering.hpp"
#include "ccp.hpp"
#include "evalx.hpp"
#include "methods.hpp"
#include "serialize.hpp"
#include "synthetic.hpp"
#include "experiment.hpp"
