#pragma once

// Umbrella header: the full engine, remote clients, service and CLI.

#include "tpc/cli.hpp"
#include "tpc/engine.hpp"
#include "tpc/service.hpp"
