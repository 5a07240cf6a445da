// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "recover/bucket.hpp"
#include "recover/comm.hpp"
#include "recover/compare.hpp"
#include "recover/config.hpp"
#include "recover/core.hpp"
#include "recover/model.hpp"
#include "recover/policy.hpp"
#include "recover/restoration.hpp"
#include "recover/rng.hpp"
#include "recover/schedule.hpp"
#include "recover/sim.hpp"
#include "recover/trainer.hpp"
#include "recover/walkthrough.hpp"
