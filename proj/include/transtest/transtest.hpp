#pragma once

#include "errors.hpp"
#include "io.hpp"
#include "kernels.hpp"
#include "lackoffit.hpp"
#include "modelfit.hpp"
#include "parallel.hpp"
#include "report.hpp"
#include "resampling.hpp"
#include "significance.hpp"
#include "simlab.hpp"
#include "smoothing.hpp"
#include "transforms.hpp"
