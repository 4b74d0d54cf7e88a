#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "edgecl/errors.hpp"

namespace edgecl {

// Outcome record of one training or evaluation session. Accuracy fields are
// only meaningful when an evaluation set was supplied (has_evaluation).
// epoch_seconds is informational and deliberately left out of the JSON form
// so reports regenerate bit-identically from the same seed.
struct SessionReport {
  std::string strategy;  // "pretrain", "pilote", "retrained" or "pretrained"
  int new_label = -1;    // class added this session, -1 when none

  std::vector<double> train_losses;  // one entry per epoch
  std::vector<double> val_losses;
  std::vector<double> epoch_seconds;
  int epochs_run = 0;
  bool stopped_early = false;

  bool has_evaluation = false;
  double overall_accuracy = 0.0;
  std::map<int, double> per_class_accuracy;
  double old_class_accuracy = 0.0;      // micro-average over non-new classes
  double old_class_accuracy_pre = 0.0;  // same metric under the pre-update model
  double new_class_accuracy = 0.0;      // recall of new_label
  double forgetting_delta = 0.0;        // pre minus post on old classes

  std::vector<int> class_order;            // row/column labels of the confusion matrix
  std::vector<std::vector<int>> confusion;  // rows = truth, cols = prediction

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["strategy"] = strategy;
    j["new_label"] = new_label;
    j["train_losses"] = train_losses;
    j["val_losses"] = val_losses;
    j["epochs_run"] = epochs_run;
    j["stopped_early"] = stopped_early;
    j["has_evaluation"] = has_evaluation;
    if (has_evaluation) {
      j["overall_accuracy"] = overall_accuracy;
      nlohmann::json per;
      for (const auto& [label, acc] : per_class_accuracy) per[std::to_string(label)] = acc;
      j["per_class_accuracy"] = per;
      j["old_class_accuracy"] = old_class_accuracy;
      j["old_class_accuracy_pre"] = old_class_accuracy_pre;
      j["new_class_accuracy"] = new_class_accuracy;
      j["forgetting_delta"] = forgetting_delta;
      j["class_order"] = class_order;
      j["confusion"] = confusion;
    }
    return j;
  }
};

}  // namespace edgecl
