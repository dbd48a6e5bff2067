#pragma once

// Umbrella header: the full fewlens diagnostic toolkit.

#include "fewlens/corpus.hpp"
#include "fewlens/explain.hpp"
#include "fewlens/external.hpp"
#include "fewlens/fixture.hpp"
#include "fewlens/metrics.hpp"
#include "fewlens/model.hpp"
#include "fewlens/pipeline.hpp"
#include "fewlens/plot.hpp"
#include "fewlens/predictor.hpp"
#include "fewlens/rng.hpp"
