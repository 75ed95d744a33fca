#include "volnet/metrics.hpp"

#include <iostream>
#include <sstream>

#include "json.hpp"
#include "volnet/errors.hpp"

namespace volnet {

namespace {

// 0/0 -> 0 instead of NaN; flags the report so a warning can be emitted
double ratio(index_t num, index_t den, bool& zero_division) {
  if (den == 0) {
    if (num != 0) throw Error("metrics ratio with zero denominator but nonzero numerator");
    zero_division = true;
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

double f1_of(double p, double r) { return p + r > 0 ? 2.0 * p * r / (p + r) : 0.0; }

}  // namespace

Confusion confusion(const Tensor<float>& probs, const std::vector<int>& labels, double threshold) {
  if (probs.rank() != 1 || probs.size() != static_cast<index_t>(labels.size())) {
    throw ShapeError("confusion: got " + std::to_string(probs.size()) + " probabilities for " +
                     std::to_string(labels.size()) + " labels");
  }
  Confusion c;
  for (index_t i = 0; i < probs.size(); ++i) {
    const float p = probs.at_flat(i);
    if (p < 0.0f || p > 1.0f) throw Error("confusion: probability outside [0,1]");
    const int label = labels[static_cast<std::size_t>(i)];
    if (label != 0 && label != 1) throw Error("confusion: labels must be 0 or 1");
    const bool pred = p >= static_cast<float>(threshold);
    if (pred && label == 1) ++c.tp;
    else if (pred && label == 0) ++c.fp;
    else if (!pred && label == 1) ++c.fn;
    else ++c.tn;
  }
  return c;
}

MetricsReport macro_f1(const Confusion& c, double threshold) {
  MetricsReport r;
  r.counts = c;
  r.threshold = threshold;
  r.recall_pos = ratio(c.tp, c.tp + c.fn, r.zero_division);
  r.precision_pos = ratio(c.tp, c.tp + c.fp, r.zero_division);
  r.recall_neg = ratio(c.tn, c.tn + c.fp, r.zero_division);
  r.precision_neg = ratio(c.tn, c.tn + c.fn, r.zero_division);
  r.f1_pos = f1_of(r.precision_pos, r.recall_pos);
  r.f1_neg = f1_of(r.precision_neg, r.recall_neg);
  r.macro_f1 = 0.5 * (r.f1_pos + r.f1_neg);
  if (r.zero_division) {
    std::cerr << "warning: metrics encountered an empty class; 0/0 ratios reported as 0\n";
  }
  return r;
}

std::string report_text(const MetricsReport& r) {
  std::ostringstream out;
  out << "recall_pos: " << r.recall_pos << "\n"
      << "precision_pos: " << r.precision_pos << "\n"
      << "f1_pos: " << r.f1_pos << "\n"
      << "recall_neg: " << r.recall_neg << "\n"
      << "precision_neg: " << r.precision_neg << "\n"
      << "f1_neg: " << r.f1_neg << "\n"
      << "macro_f1: " << r.macro_f1 << "\n"
      << "threshold: " << r.threshold << "\n"
      << "tp: " << r.counts.tp << "\nfp: " << r.counts.fp << "\nfn: " << r.counts.fn << "\ntn: " << r.counts.tn
      << "\n";
  return out.str();
}

std::string report_json(const MetricsReport& r) {
  nlohmann::json j{{"recall_pos", r.recall_pos}, {"precision_pos", r.precision_pos}, {"f1_pos", r.f1_pos},
                   {"recall_neg", r.recall_neg}, {"precision_neg", r.precision_neg}, {"f1_neg", r.f1_neg},
                   {"macro_f1", r.macro_f1},     {"threshold", r.threshold},         {"tp", r.counts.tp},
                   {"fp", r.counts.fp},          {"fn", r.counts.fn},                {"tn", r.counts.tn}};
  return j.dump();
}

}  // namespace volnet
