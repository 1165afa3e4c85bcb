#pragma once

#include "cycledeform/autodiff.hpp"
#include "cycledeform/checkpoint.hpp"
#include "cycledeform/chamfer.hpp"
#include "cycledeform/config.hpp"
#include "cycledeform/dataio.hpp"
#include "cycledeform/errors.hpp"
#include "cycledeform/geometry.hpp"
#include "cycledeform/gradcheck.hpp"
#include "cycledeform/icp.hpp"
#include "cycledeform/kdtree.hpp"
#include "cycledeform/losses.hpp"
#include "cycledeform/miou.hpp"
#include "cycledeform/model.hpp"
#include "cycledeform/synth.hpp"
#include "cycledeform/training.hpp"
#include "cycledeform/transfer.hpp"
