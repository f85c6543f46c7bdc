// Copyright 2026 The rnr Authors
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

// Everything except the JSON/CSV layer (rnr/io.hpp), which pulls in
// nlohmann/json.

#include "rnr/attention.hpp"
#include "rnr/flops.hpp"
#include "rnr/klnn.hpp"
#include "rnr/matching.hpp"
#include "rnr/reduction.hpp"
#include "rnr/rope.hpp"
#include "rnr/schedule.hpp"
#include "rnr/tensor.hpp"
#include "rnr/toydit.hpp"
