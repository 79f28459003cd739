#pragma once

#include "ensad/numkit.hpp"
#include "ensad/data.hpp"
#include "ensad/adapter.hpp"
#include "ensad/gan.hpp"
#include "ensad/eval.hpp"
#include "ensad/config.hpp"
#include "ensad/checkpoint.hpp"
