#pragma once

#include "glco/autograd.hpp"
#include "glco/battery.hpp"
#include "glco/config.hpp"
#include "glco/cos.hpp"
#include "glco/decoder.hpp"
#include "glco/error.hpp"
#include "glco/gradcheck.hpp"
#include "glco/image_io.hpp"
#include "glco/kernels.hpp"
#include "glco/metrics.hpp"
#include "glco/objective.hpp"
#include "glco/parallel.hpp"
#include "glco/params.hpp"
#include "glco/pipeline.hpp"
#include "glco/serialize.hpp"
#include "glco/synth.hpp"
#include "glco/tensor.hpp"
