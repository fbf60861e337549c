#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "drseg/tensor.hpp"

namespace drseg {

// Row = ground truth class, column = predicted class.
class ConfusionMatrix {
public:
  explicit ConfusionMatrix(std::size_t n_classes);

  void add(const LabelGrid& truth, const LabelGrid& pred);
  void merge(const ConfusionMatrix& other);

  std::size_t classes() const { return n_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * n_ + pred]; }
  std::uint64_t total() const;

private:
  std::size_t n_;
  std::vector<std::uint64_t> counts_;
};

struct EvalReport {
  std::vector<double> iou;       // per class, percent; NaN when the class is absent from truth and prediction
  std::vector<double> accuracy;  // per class recall, percent; NaN when absent from truth
  double miou = 0.0;
  double macc = 0.0;
  double fwiou = 0.0;
  std::vector<std::vector<std::uint64_t>> confusion;
};

EvalReport make_report(const ConfusionMatrix& cm);
nlohmann::json to_json(const EvalReport& r);
std::string format_table(const EvalReport& r, const std::vector<std::string>& class_names = {});

// mIoU of a single label pair; shorthand used by zero-shot evaluations.
double mean_iou(const std::vector<LabelGrid>& truth, const std::vector<LabelGrid>& pred, std::size_t n_classes);

} // namespace drseg
