#pragma once

// Umbrella header.

#include "corposcope/annotate.hpp"
#include "corposcope/artifacts.hpp"
#include "corposcope/corpus.hpp"
#include "corposcope/diversity.hpp"
#include "corposcope/error.hpp"
#include "corposcope/fields.hpp"
#include "corposcope/hash.hpp"
#include "corposcope/kmeans.hpp"
#include "corposcope/layout.hpp"
#include "corposcope/lda.hpp"
#include "corposcope/pipeline.hpp"
#include "corposcope/report.hpp"
#include "corposcope/rng.hpp"
#include "corposcope/server.hpp"
#include "corposcope/text.hpp"
#include "corposcope/tsne.hpp"
