// Copyright 2026 The sparsesfm Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "sparsesfm/ba.hpp"
#include "sparsesfm/bench.hpp"
#include "sparsesfm/common.hpp"
#include "sparsesfm/gp.hpp"
#include "sparsesfm/io.hpp"
#include "sparsesfm/linear_solver.hpp"
#include "sparsesfm/lm.hpp"
#include "sparsesfm/metrics.hpp"
#include "sparsesfm/parallel.hpp"
#include "sparsesfm/rotation.hpp"
#include "sparsesfm/scene.hpp"
#include "sparsesfm/sparse_block.hpp"
#include "sparsesfm/synth.hpp"
