/* Copyright 2026 The pvseg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include "pvseg/augmentation.hpp"
#include "pvseg/checkpoint.hpp"
#include "pvseg/config.hpp"
#include "pvseg/dataset.hpp"
#include "pvseg/error.hpp"
#include "pvseg/evaluation.hpp"
#include "pvseg/experiment.hpp"
#include "pvseg/losses.hpp"
#include "pvseg/model.hpp"
#include "pvseg/plot.hpp"
#include "pvseg/rng.hpp"
#include "pvseg/synthetic.hpp"
#include "pvseg/tensor.hpp"
#include "pvseg/trainer.hpp"
#include "pvseg/weights.hpp"
