#pragma once

#include <string>
#include <vector>

#include "volnet/tensor.hpp"

namespace volnet {

// positive class = label 1
struct Confusion {
  index_t tp = 0, fp = 0, fn = 0, tn = 0;

  index_t total() const { return tp + fp + fn + tn; }
};

struct MetricsReport {
  double recall_pos = 0, precision_pos = 0, f1_pos = 0;
  double recall_neg = 0, precision_neg = 0, f1_neg = 0;
  double macro_f1 = 0;
  double threshold = 0.5;
  Confusion counts;
  bool zero_division = false;  // some 0/0 ratio was defined as 0
};

// predict positive iff prob >= threshold
Confusion confusion(const Tensor<float>& probs, const std::vector<int>& labels, double threshold = 0.5);

MetricsReport macro_f1(const Confusion& c, double threshold = 0.5);

std::string report_text(const MetricsReport& r);
std::string report_json(const MetricsReport& r);

}  // namespace volnet
