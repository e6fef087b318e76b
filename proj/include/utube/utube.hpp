#pragma once

#include "common.hpp"
#include "vecfield.hpp"
#include "sobol.hpp"
#include "dataset.hpp"
#include "flowmap.hpp"
#include "uq.hpp"
#include "mesh.hpp"
#include "color.hpp"
#include "tube.hpp"
#include "io.hpp"
