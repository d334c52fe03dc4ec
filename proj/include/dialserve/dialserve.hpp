// Copyright (C) 2026 The dialserve Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dialserve/bench.hpp"
#include "dialserve/compressor.hpp"
#include "dialserve/error.hpp"
#include "dialserve/metrics.hpp"
#include "dialserve/model.hpp"
#include "dialserve/parallel.hpp"
#include "dialserve/rng.hpp"
#include "dialserve/serialize.hpp"
#include "dialserve/session.hpp"
#include "dialserve/sparsifier.hpp"
#include "dialserve/tensor.hpp"
