#pragma once

#include "core.hpp"
#include "nagent.hpp"
#include "mfg.hpp"
#include "strategy.hpp"
#include "best_response.hpp"
#include "simulate.hpp"
#include "diagnostics.hpp"
#include "io.hpp"
