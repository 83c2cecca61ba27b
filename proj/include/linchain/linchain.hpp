// Copyright 2026 The LinChain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "linchain/rng.hpp"
#include "linchain/matrix.hpp"
#include "linchain/adapters.hpp"
#include "linchain/gradients.hpp"
#include "linchain/training.hpp"
#include "linchain/config.hpp"
#include "linchain/checkpoint.hpp"
#include "linchain/report_io.hpp"
#include "linchain/experiments.hpp"
