#pragma once

#include "csfm/averaging.hpp"
#include "csfm/community.hpp"
#include "csfm/eg_graph.hpp"
#include "csfm/errors.hpp"
#include "csfm/geometry.hpp"
#include "csfm/io.hpp"
#include "csfm/l1_solver.hpp"
#include "csfm/merge.hpp"
#include "csfm/pairwise.hpp"
#include "csfm/parallel.hpp"
#include "csfm/pipeline.hpp"
#include "csfm/reconstruction.hpp"
#include "csfm/synth.hpp"
