// Copyright 2026 The livmap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "livmap/error.hpp"
#include "livmap/csv.hpp"
#include "livmap/parallel.hpp"
#include "livmap/grid.hpp"
#include "livmap/splits.hpp"
#include "livmap/imagery.hpp"
#include "livmap/features.hpp"
#include "livmap/metrics.hpp"
#include "livmap/model.hpp"
#include "livmap/training.hpp"
#include "livmap/evaluation.hpp"
#include "livmap/synth.hpp"
#include "livmap/pipeline.hpp"
