// Copyright 2026 The AFA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "afa/adapters.hpp"
#include "afa/backbone.hpp"
#include "afa/checkpoint.hpp"
#include "afa/config.hpp"
#include "afa/data.hpp"
#include "afa/dds.hpp"
#include "afa/engine.hpp"
#include "afa/error.hpp"
#include "afa/eval.hpp"
#include "afa/gradcheck.hpp"
#include "afa/linalg.hpp"
#include "afa/model.hpp"
#include "afa/objectives.hpp"
#include "afa/parallel.hpp"
#include "afa/tape.hpp"
#include "afa/trainer.hpp"
