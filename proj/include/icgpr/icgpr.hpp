#pragma once

#include "icgpr/dataset.hpp"
#include "icgpr/errors.hpp"
#include "icgpr/evaluation.hpp"
#include "icgpr/gpr.hpp"
#include "icgpr/ic_analysis.hpp"
#include "icgpr/optimizer.hpp"
