#pragma once

#include "stabopt/errors.hpp"
#include "stabopt/dual.hpp"
#include "stabopt/gridcase.hpp"
#include "stabopt/powerflow.hpp"
#include "stabopt/lure.hpp"
#include "stabopt/sdp.hpp"
#include "stabopt/certify.hpp"
#include "stabopt/fault.hpp"
#include "stabopt/simulate.hpp"
#include "stabopt/nlp.hpp"
#include "stabopt/optimize.hpp"
#include "stabopt/pipeline.hpp"
#include "stabopt/verify.hpp"
