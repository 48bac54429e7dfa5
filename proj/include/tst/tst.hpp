// Copyright 2026 The temporal-state-tomography Authors
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

#include "tst/error.hpp"
#include "tst/qla.hpp"
#include "tst/frames.hpp"
#include "tst/snapshot.hpp"
#include "tst/tqd.hpp"
#include "tst/simulate.hpp"
#include "tst/tomography.hpp"
#include "tst/experiment.hpp"
