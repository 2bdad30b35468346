#pragma once

#include "eacnet/data.hpp"
#include "eacnet/error.hpp"
#include "eacnet/evaluation.hpp"
#include "eacnet/geometry.hpp"
#include "eacnet/gradcheck.hpp"
#include "eacnet/io.hpp"
#include "eacnet/labels.hpp"
#include "eacnet/layers.hpp"
#include "eacnet/model.hpp"
#include "eacnet/parallel.hpp"
#include "eacnet/tensor.hpp"
#include "eacnet/training.hpp"
