#pragma once

#include "ahstgnn/baseline.hpp"
#include "ahstgnn/checkpoint.hpp"
#include "ahstgnn/common.hpp"
#include "ahstgnn/data.hpp"
#include "ahstgnn/graph.hpp"
#include "ahstgnn/harness.hpp"
#include "ahstgnn/metrics.hpp"
#include "ahstgnn/model.hpp"
#include "ahstgnn/stam.hpp"
#include "ahstgnn/tape.hpp"
#include "ahstgnn/temporal.hpp"
#include "ahstgnn/tensor.hpp"
