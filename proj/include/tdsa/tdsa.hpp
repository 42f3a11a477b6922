#pragma once

#include "tdsa/rng.hpp"
#include "tdsa/chain.hpp"
#include "tdsa/features.hpp"
#include "tdsa/oracle.hpp"
#include "tdsa/sa.hpp"
#include "tdsa/harness.hpp"
#include "tdsa/io.hpp"
#include "tdsa/experiment.hpp"
