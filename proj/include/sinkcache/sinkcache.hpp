// Copyright 2026 The sinkcache Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "sinkcache/matrix.hpp"
#include "sinkcache/rope.hpp"
#include "sinkcache/cache.hpp"
#include "sinkcache/policy.hpp"
#include "sinkcache/attention.hpp"
#include "sinkcache/simulator.hpp"
#include "sinkcache/serialization.hpp"
#include "sinkcache/commands.hpp"
