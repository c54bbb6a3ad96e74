#pragma once

#include <string>
#include <variant>

#include "upg/baselines.hpp"
#include "upg/regression.hpp"
#include "upg/upg_model.hpp"

namespace upg {

struct ConstantModel {
  double mu = 0.0;
};

using AnyModel =
    std::variant<ConstantModel, MpModel, IregModel, IisModel, PlsiModel, BireModel, UpgModel>;

const char* model_kind(const AnyModel& model);

// Self-describing structured text, numbers written with 17 significant
// digits so scalars round-trip bit-exactly. UPG posteriors persist only the
// counters; the means are recomputed on load by conjugate gradients.
void save_model(const AnyModel& model, const std::string& path);
AnyModel load_model(const std::string& path);

}  // namespace upg
