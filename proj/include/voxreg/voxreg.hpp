#pragma once

#include "voxreg/gradcheck.hpp"
#include "voxreg/io.hpp"
#include "voxreg/loss.hpp"
#include "voxreg/metrics.hpp"
#include "voxreg/network.hpp"
#include "voxreg/synth.hpp"
#include "voxreg/trainer.hpp"
#include "voxreg/warp.hpp"
