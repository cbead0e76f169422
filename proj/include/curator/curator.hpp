#pragma once

#include "curator/analysis.hpp"
#include "curator/corpus.hpp"
#include "curator/error.hpp"
#include "curator/kde_sketch.hpp"
#include "curator/llm_client.hpp"
#include "curator/lsh.hpp"
#include "curator/random.hpp"
#include "curator/samplers.hpp"
#include "curator/scorers.hpp"
