#pragma once

#include "diva/agent.hpp"
#include "diva/cli.hpp"
#include "diva/compressor.hpp"
#include "diva/config.hpp"
#include "diva/data_pipelines.hpp"
#include "diva/error.hpp"
#include "diva/evalbench.hpp"
#include "diva/http.hpp"
#include "diva/llm_gateway.hpp"
#include "diva/pipeline.hpp"
#include "diva/retrieval.hpp"
#include "diva/runner.hpp"
#include "diva/scorer.hpp"
#include "diva/text.hpp"
