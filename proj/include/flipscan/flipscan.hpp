#pragma once

#include "flipscan/campaign.hpp"
#include "flipscan/codegen.hpp"
#include "flipscan/corpus.hpp"
#include "flipscan/digest.hpp"
#include "flipscan/elf_image.hpp"
#include "flipscan/error.hpp"
#include "flipscan/harness.hpp"
#include "flipscan/isa_decode.hpp"
#include "flipscan/model.hpp"
#include "flipscan/oracles.hpp"
#include "flipscan/probe.hpp"
#include "flipscan/random.hpp"
#include "flipscan/rh_sim.hpp"
#include "flipscan/superbits.hpp"
#include "flipscan/tensor_io.hpp"
