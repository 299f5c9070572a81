// Copyright 2026 The loramerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "loramerge/adapter.hpp"
#include "loramerge/baselines.hpp"
#include "loramerge/contrastive.hpp"
#include "loramerge/error.hpp"
#include "loramerge/half.hpp"
#include "loramerge/layer_delta.hpp"
#include "loramerge/linalg.hpp"
#include "loramerge/merge.hpp"
#include "loramerge/metrics.hpp"
#include "loramerge/probes.hpp"
#include "loramerge/random.hpp"
#include "loramerge/sweep.hpp"
#include "loramerge/synthetic.hpp"
#include "loramerge/tensor_file.hpp"
