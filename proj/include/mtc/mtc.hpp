#pragma once

#include "mtc/classifier.hpp"
#include "mtc/corpus.hpp"
#include "mtc/embedding.hpp"
#include "mtc/evaluate.hpp"
#include "mtc/generator.hpp"
#include "mtc/matrix.hpp"
#include "mtc/pipeline.hpp"
#include "mtc/planted.hpp"
#include "mtc/random.hpp"
#include "mtc/vmf.hpp"
