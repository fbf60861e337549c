#include "drseg/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "drseg/error.hpp"

namespace drseg {

ConfusionMatrix::ConfusionMatrix(std::size_t n_classes) : n_(n_classes), counts_(n_classes * n_classes, 0) {
  if (n_classes == 0) throw ArgumentError("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(const LabelGrid& truth, const LabelGrid& pred) {
  if (truth.h != pred.h || truth.w != pred.w) throw DimensionError("label grids differ in size");
  for (std::size_t i = 0; i < truth.data.size(); ++i) {
    const int t = truth.data[i];
    const int p = pred.data[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= n_ || static_cast<std::size_t>(p) >= n_)
      throw ArgumentError("label out of range");
    ++counts_[static_cast<std::size_t>(t) * n_ + static_cast<std::size_t>(p)];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.n_ != n_) throw DimensionError("confusion matrices differ in class count");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

EvalReport make_report(const ConfusionMatrix& cm) {
  const std::size_t n = cm.classes();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  EvalReport r;
  r.iou.assign(n, nan);
  r.accuracy.assign(n, nan);
  r.confusion.assign(n, std::vector<std::uint64_t>(n, 0));
  const double total = static_cast<double>(cm.total());
  if (total == 0.0) throw ArgumentError("evaluation over zero pixels");

  double iou_sum = 0.0, acc_sum = 0.0;
  std::size_t iou_n = 0, acc_n = 0;
  for (std::size_t k = 0; k < n; ++k) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < n; ++j) {
      r.confusion[k][j] = cm.at(k, j);
      row += cm.at(k, j);
      col += cm.at(j, k);
    }
    const std::uint64_t tp = cm.at(k, k);
    const std::uint64_t uni = row + col - tp;
    if (uni > 0) {
      r.iou[k] = 100.0 * static_cast<double>(tp) / static_cast<double>(uni);
      iou_sum += r.iou[k];
      ++iou_n;
      r.fwiou += static_cast<double>(row) / total * r.iou[k];
    }
    if (row > 0) {
      r.accuracy[k] = 100.0 * static_cast<double>(tp) / static_cast<double>(row);
    }
    // Classes present only in the prediction count as 0% recall.
    if (uni > 0) {
      acc_sum += row > 0 ? r.accuracy[k] : 0.0;
      ++acc_n;
    }
  }
  r.miou = iou_n ? iou_sum / static_cast<double>(iou_n) : 0.0;
  r.macc = acc_n ? acc_sum / static_cast<double>(acc_n) : 0.0;
  return r;
}

nlohmann::json to_json(const EvalReport& r) {
  auto opt = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  nlohmann::json iou = nlohmann::json::array(), acc = nlohmann::json::array();
  for (double v : r.iou) iou.push_back(opt(v));
  for (double v : r.accuracy) acc.push_back(opt(v));
  return {{"mIoU", r.miou}, {"mACC", r.macc}, {"fwIoU", r.fwiou},
          {"per_class_iou", iou}, {"per_class_acc", acc}, {"confusion", r.confusion}};
}

std::string format_table(const EvalReport& r, const std::vector<std::string>& class_names) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << std::left << std::setw(16) << "class" << std::right << std::setw(10) << "IoU" << std::setw(10) << "Acc"
     << "\n";
  for (std::size_t k = 0; k < r.iou.size(); ++k) {
    const std::string name = k < class_names.size() ? class_names[k] : "class_" + std::to_string(k);
    os << std::left << std::setw(16) << name << std::right << std::setw(10);
    if (std::isnan(r.iou[k])) os << "-"; else os << r.iou[k];
    os << std::setw(10);
    if (std::isnan(r.accuracy[k])) os << "-"; else os << r.accuracy[k];
    os << "\n";
  }
  os << std::left << std::setw(16) << "mIoU" << std::right << std::setw(10) << r.miou << "\n";
  os << std::left << std::setw(16) << "mACC" << std::right << std::setw(10) << r.macc << "\n";
  os << std::left << std::setw(16) << "fwIoU" << std::right << std::setw(10) << r.fwiou << "\n";
  return os.str();
}

double mean_iou(const std::vector<LabelGrid>& truth, const std::vector<LabelGrid>& pred, std::size_t n_classes) {
  if (truth.size() != pred.size()) throw ArgumentError("mean_iou: list sizes differ");
  ConfusionMatrix cm(n_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], pred[i]);
  return make_report(cm).miou;
}

} // namespace drseg
