#pragma once

#include "sdcacrf/dataset.hpp"
#include "sdcacrf/enumerate.hpp"
#include "sdcacrf/inference.hpp"
#include "sdcacrf/io/base64.hpp"
#include "sdcacrf/io/conll.hpp"
#include "sdcacrf/io/model_file.hpp"
#include "sdcacrf/io/ocr.hpp"
#include "sdcacrf/io/synthetic.hpp"
#include "sdcacrf/line_search.hpp"
#include "sdcacrf/metrics.hpp"
#include "sdcacrf/model.hpp"
#include "sdcacrf/objective.hpp"
#include "sdcacrf/sampling.hpp"
#include "sdcacrf/sdca.hpp"
