#pragma once

#include "authority.hpp"
#include "csv.hpp"
#include "engine.hpp"
#include "errors.hpp"
#include "forest.hpp"
#include "money.hpp"
#include "rng.hpp"
#include "screens.hpp"
#include "session.hpp"
