#pragma once

#include "embias/analogy.hpp"
#include "embias/benchmark.hpp"
#include "embias/bias_metrics.hpp"
#include "embias/csv.hpp"
#include "embias/debias.hpp"
#include "embias/embedding.hpp"
#include "embias/errors.hpp"
#include "embias/log.hpp"
#include "embias/svg.hpp"
#include "embias/text.hpp"
#include "embias/wordlist.hpp"
