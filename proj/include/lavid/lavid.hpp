#pragma once

#include "lavid/adaptation.hpp"
#include "lavid/config.hpp"
#include "lavid/dataset.hpp"
#include "lavid/ektools.hpp"
#include "lavid/error.hpp"
#include "lavid/image.hpp"
#include "lavid/inference.hpp"
#include "lavid/lvlm.hpp"
#include "lavid/metrics.hpp"
#include "lavid/mock_lvlm.hpp"
#include "lavid/pipeline.hpp"
#include "lavid/prompting.hpp"
#include "lavid/schema.hpp"
#include "lavid/selection.hpp"
