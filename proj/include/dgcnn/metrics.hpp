#pragma once

#include <map>
#include <ostream>
#include <vector>

#include "dgcnn/error.hpp"
#include "dgcnn/tensor.hpp"

namespace dgcnn {

struct MetricsReport {
  double overall_accuracy = 0.0;
  double mean_class_accuracy = 0.0;
  std::vector<double> per_class_accuracy;  // NaN-free: classes without test samples are skipped in the mean
  double miou = 0.0;
  std::vector<double> per_shape_iou;
};

/// Overall accuracy plus the unweighted mean of per-class accuracies over
/// classes that have at least one sample.
inline MetricsReport classification_metrics(const std::vector<Index>& predicted, const std::vector<Index>& truth,
                                            Index num_classes) {
  if (predicted.size() != truth.size()) throw DimensionError("classification_metrics: size mismatch");
  if (predicted.empty()) throw ParameterError("classification_metrics: empty dataset");
  std::vector<Index> correct(static_cast<std::size_t>(num_classes), 0);
  std::vector<Index> total(static_cast<std::size_t>(num_classes), 0);
  Index hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    Index t = truth[i];
    if (t < 0 || t >= num_classes) throw IndexError("classification_metrics: label out of range");
    ++total[static_cast<std::size_t>(t)];
    if (predicted[i] == t) {
      ++correct[static_cast<std::size_t>(t)];
      ++hits;
    }
  }
  MetricsReport r;
  r.overall_accuracy = static_cast<double>(hits) / static_cast<double>(truth.size());
  double sum = 0.0;
  Index seen = 0;
  r.per_class_accuracy.assign(static_cast<std::size_t>(num_classes), 0.0);
  for (Index c = 0; c < num_classes; ++c) {
    if (total[static_cast<std::size_t>(c)] == 0) continue;
    double acc = static_cast<double>(correct[static_cast<std::size_t>(c)]) /
                 static_cast<double>(total[static_cast<std::size_t>(c)]);
    r.per_class_accuracy[static_cast<std::size_t>(c)] = acc;
    sum += acc;
    ++seen;
  }
  r.mean_class_accuracy = seen ? sum / static_cast<double>(seen) : 0.0;
  return r;
}

/// Per-shape IoU averaged over the parts of the shape's category (a part
/// absent from both prediction and ground truth counts as IoU 1), then
/// averaged over shapes.
inline MetricsReport miou_shapenet(const std::vector<std::vector<Index>>& pred_labels,
                                   const std::vector<std::vector<Index>>& true_labels,
                                   const std::vector<Index>& shape_category,
                                   const std::vector<std::vector<Index>>& part_sets) {
  if (pred_labels.size() != true_labels.size() || pred_labels.size() != shape_category.size())
    throw DimensionError("miou_shapenet: per-shape arrays disagree");
  if (pred_labels.empty()) throw ParameterError("miou_shapenet: empty dataset");

  MetricsReport r;
  double total = 0.0;
  for (std::size_t s = 0; s < pred_labels.size(); ++s) {
    Index cat = shape_category[s];
    if (cat < 0 || cat >= static_cast<Index>(part_sets.size()))
      throw DataError("miou_shapenet: unknown category " + std::to_string(cat));
    const auto& parts = part_sets[static_cast<std::size_t>(cat)];
    const auto& pred = pred_labels[s];
    const auto& truth = true_labels[s];
    if (pred.size() != truth.size()) throw DimensionError("miou_shapenet: point count mismatch in shape");

    auto in_parts = [&](Index label) {
      for (Index p : parts)
        if (p == label) return true;
      return false;
    };
    for (Index l : truth)
      if (!in_parts(l)) throw DataError("miou_shapenet: ground-truth label outside the category's part set");
    for (Index l : pred)
      if (!in_parts(l)) throw DataError("miou_shapenet: predicted label outside the category's part set");

    double shape_iou = 0.0;
    for (Index part : parts) {
      Index inter = 0, uni = 0;
      for (std::size_t i = 0; i < truth.size(); ++i) {
        bool in_pred = pred[i] == part;
        bool in_true = truth[i] == part;
        inter += (in_pred && in_true) ? 1 : 0;
        uni += (in_pred || in_true) ? 1 : 0;
      }
      shape_iou += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    }
    shape_iou /= static_cast<double>(parts.size());
    r.per_shape_iou.push_back(shape_iou);
    total += shape_iou;
  }
  r.miou = total / static_cast<double>(pred_labels.size());
  return r;
}

/// CSV form: `metric,value` rows with a header.
inline void write_metrics_csv(std::ostream& out, const MetricsReport& r, bool segmentation = false) {
  out << "metric,value\n";
  out.precision(17);
  out << "overall_accuracy," << r.overall_accuracy << "\n";
  out << "mean_class_accuracy," << r.mean_class_accuracy << "\n";
  for (std::size_t c = 0; c < r.per_class_accuracy.size(); ++c)
    out << "class" << c << "_accuracy," << r.per_class_accuracy[c] << "\n";
  if (segmentation) out << "miou," << r.miou << "\n";
}

}  // namespace dgcnn
