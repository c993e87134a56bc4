#ifndef READMIT_READMIT_HPP
#define READMIT_READMIT_HPP

#include "readmit/baseline.hpp"
#include "readmit/cnn.hpp"
#include "readmit/cohort.hpp"
#include "readmit/error.hpp"
#include "readmit/explain.hpp"
#include "readmit/io.hpp"
#include "readmit/metrics.hpp"
#include "readmit/pipeline.hpp"
#include "readmit/records.hpp"
#include "readmit/rng.hpp"
#include "readmit/synth.hpp"
#include "readmit/textprep.hpp"

#endif  // READMIT_READMIT_HPP
