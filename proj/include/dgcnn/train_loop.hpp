#pragma once

#include <filesystem>
#include <fstream>

#include "dgcnn/augment.hpp"
#include "dgcnn/checkpoint.hpp"
#include "dgcnn/data.hpp"
#include "dgcnn/metrics.hpp"
#include "dgcnn/models.hpp"
#include "dgcnn/optim.hpp"

namespace dgcnn {

struct TrainOptions {
  int epochs = 50;
  int batch_size = 16;
  std::uint64_t seed = 1;
  double lr_max = 0.1;
  double lr_min = 0.001;
  double momentum = 0.9;
  AugmentOptions augment{};
  int checkpoint_every = 0;  // epochs between checkpoints; 0 = final only
  std::string out_dir;       // empty = keep everything in memory
  bool verbose = false;
};

struct EpochRecord {
  int epoch;
  double lr;
  double loss;
  double accuracy;
};

struct TrainResult {
  std::vector<EpochRecord> curve;
  MetricsReport final_eval;
  bool has_final_eval = false;
};

template <typename S>
MetricsReport evaluate_classifier(ClassifierParams<S>& params, const ClassifierConfig& cfg,
                                  const std::vector<LabeledCloud>& clouds) {
  if (clouds.empty()) throw ParameterError("evaluate_classifier: empty dataset");
  std::vector<Index> predicted, truth;
  for (const auto& cloud : clouds) {
    if (!cloud.class_label) throw DataError("evaluate_classifier: cloud without a class label");
    Eigen::VectorX<S> logits = classify_logits(PointMatrix<S>(cloud.points.template cast<S>()), cfg, params);
    Index best = 0;
    logits.maxCoeff(&best);
    predicted.push_back(best);
    truth.push_back(*cloud.class_label);
  }
  return classification_metrics(predicted, truth, cfg.num_classes);
}

inline void write_epoch_csv(std::ostream& out, const std::vector<EpochRecord>& curve) {
  out << "epoch,lr,loss,accuracy\n";
  out.precision(17);
  for (const auto& r : curve) out << r.epoch << "," << r.lr << "," << r.loss << "," << r.accuracy << "\n";
}

/// Minibatch SGD training of the classifier.  Deterministic in (params,
/// dataset, options): shuffling, augmentation, and dropout draw from
/// dedicated streams forked off the run seed.
template <typename S>
TrainResult fit_classifier(ClassifierParams<S>& params, const ClassifierConfig& cfg, const Dataset& train,
                           const Dataset* test, const TrainOptions& opt) {
  if (train.clouds.empty()) throw ParameterError("fit_classifier: empty training set");
  if (opt.batch_size < 2) throw ParameterError("fit_classifier: batch size must be >= 2 for batch statistics");
  const Index n = train.clouds.front().points.rows();
  for (const auto& c : train.clouds) {
    if (c.points.rows() != n) throw ParameterError("fit_classifier: training clouds must share a point count");
    if (!c.class_label || *c.class_label < 0 || *c.class_label >= cfg.num_classes)
      throw DataError("fit_classifier: cloud without a valid class label");
  }

  Rng run_rng(opt.seed);
  Rng shuffle_rng = run_rng.fork(1);
  Rng augment_rng = run_rng.fork(2);
  Rng dropout_rng = run_rng.fork(3);

  SgdMomentum<S> sgd;
  sgd.lr_max = opt.lr_max;
  sgd.lr_min = opt.lr_min;
  sgd.momentum = opt.momentum;
  sgd.total_epochs = opt.epochs;

  namespace fs = std::filesystem;
  if (!opt.out_dir.empty()) fs::create_directories(opt.out_dir);

  std::vector<Index> order(train.clouds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Index>(i);

  TrainResult result;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    double lr = cosine_lr(epoch, opt.epochs, opt.lr_max, opt.lr_min);
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    Index seen = 0, correct = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch_size)) {
      Index b = std::min<Index>(opt.batch_size, static_cast<Index>(order.size() - start));
      if (b < 2) break;  // a trailing singleton cannot provide batch statistics

      PointMatrix<S> stacked(b * n, train.clouds.front().points.cols());
      std::vector<Index> labels(static_cast<std::size_t>(b));
      for (Index i = 0; i < b; ++i) {
        const auto& cloud = train.clouds[static_cast<std::size_t>(order[start + static_cast<std::size_t>(i)])];
        Points pts = augment(cloud.points, opt.augment, augment_rng);
        stacked.middleRows(i * n, n) = pts.cast<S>();
        labels[static_cast<std::size_t>(i)] = *cloud.class_label;
      }

      Tape<S> tape;
      Var x = tape.constant(Tensor<S>::from_matrix(stacked));
      auto bound = bind(tape, params);
      Var logits = classifier_forward(tape, x, b, n, cfg, bound, /*training=*/true, &dropout_rng);
      Var loss = softmax_cross_entropy(tape, logits, labels);
      auto grads = tape.backward(loss);

      Bindings<S> bindings;
      collect_bindings(bound, bindings);
      std::vector<std::pair<Tensor<S>*, const Tensor<S>*>> param_grads;
      param_grads.reserve(bindings.size());
      for (auto& [tensor, var] : bindings) param_grads.emplace_back(tensor, &grads.wrt(var));
      sgd.step(param_grads, lr);

      loss_sum += static_cast<double>(tape.value(loss)[0]) * static_cast<double>(b);
      auto lm = tape.value(logits).matrix();
      for (Index i = 0; i < b; ++i) {
        Index best = 0;
        lm.row(i).maxCoeff(&best);
        if (best == labels[static_cast<std::size_t>(i)]) ++correct;
      }
      seen += b;
    }
    sgd.epoch = epoch + 1;

    EpochRecord rec{epoch, lr, loss_sum / static_cast<double>(seen),
                    static_cast<double>(correct) / static_cast<double>(seen)};
    result.curve.push_back(rec);
    if (opt.verbose)
      std::fprintf(stderr, "epoch %3d lr %.5f loss %.5f acc %.4f\n", rec.epoch, rec.lr, rec.loss, rec.accuracy);

    if (!opt.out_dir.empty() && opt.checkpoint_every > 0 && (epoch + 1) % opt.checkpoint_every == 0 &&
        epoch + 1 < opt.epochs) {
      save_checkpoint<S>(opt.out_dir + "/checkpoint_epoch" + std::to_string(epoch + 1) + ".ckpt", params);
    }
  }

  if (!opt.out_dir.empty()) {
    std::ofstream metrics(opt.out_dir + "/metrics.csv");
    write_epoch_csv(metrics, result.curve);
    save_checkpoint<S>(opt.out_dir + "/checkpoint_final.ckpt", params);
  }
  if (test && !test->clouds.empty()) {
    result.final_eval = evaluate_classifier(params, cfg, test->clouds);
    result.has_final_eval = true;
    if (!opt.out_dir.empty()) {
      std::ofstream ev(opt.out_dir + "/eval.csv");
      write_metrics_csv(ev, result.final_eval);
    }
  }
  return result;
}

template <typename S>
MetricsReport evaluate_segmenter(SegmenterParams<S>& params, const SegmenterConfig& cfg,
                                 const std::vector<LabeledCloud>& clouds,
                                 const std::vector<std::vector<Index>>& part_sets) {
  if (clouds.empty()) throw ParameterError("evaluate_segmenter: empty dataset");
  std::vector<std::vector<Index>> pred, truth;
  std::vector<Index> categories;
  Index points_right = 0, points_total = 0;
  for (const auto& cloud : clouds) {
    if (cloud.point_labels.empty()) throw DataError("evaluate_segmenter: cloud without point labels");
    Eigen::RowVectorX<S> cat;
    const Eigen::RowVectorX<S>* cat_ptr = nullptr;
    if (cfg.category_vector_width > 0) {
      cat = Eigen::RowVectorX<S>::Zero(cfg.category_vector_width);
      Index c = cloud.category.value_or(0);
      if (c < 0 || c >= cfg.category_vector_width) throw DataError("evaluate_segmenter: category out of range");
      cat[c] = S(1);
      cat_ptr = &cat;
    }
    PointMatrix<S> logits = segment_logits<S>(PointMatrix<S>(cloud.points.template cast<S>()), cat_ptr, cfg, params);
    std::vector<Index> labels(static_cast<std::size_t>(logits.rows()));
    for (Index i = 0; i < logits.rows(); ++i) {
      Index best = 0;
      logits.row(i).maxCoeff(&best);
      labels[static_cast<std::size_t>(i)] = best;
      points_right += best == cloud.point_labels[static_cast<std::size_t>(i)] ? 1 : 0;
      ++points_total;
    }
    pred.push_back(std::move(labels));
    truth.push_back(cloud.point_labels);
    categories.push_back(cloud.category.value_or(0));
  }
  MetricsReport r = miou_shapenet(pred, truth, categories, part_sets);
  r.overall_accuracy = static_cast<double>(points_right) / static_cast<double>(points_total);
  return r;
}

/// Minibatch SGD training of the part segmenter; mirrors fit_classifier with
/// a per-point cross-entropy loss.
template <typename S>
TrainResult fit_segmenter(SegmenterParams<S>& params, const SegmenterConfig& cfg, const Dataset& train,
                          const Dataset* test, const std::vector<std::vector<Index>>& part_sets,
                          const TrainOptions& opt) {
  if (train.clouds.empty()) throw ParameterError("fit_segmenter: empty training set");
  if (opt.batch_size < 2) throw ParameterError("fit_segmenter: batch size must be >= 2 for batch statistics");
  const Index n = train.clouds.front().points.rows();
  for (const auto& c : train.clouds) {
    if (c.points.rows() != n) throw ParameterError("fit_segmenter: training clouds must share a point count");
    if (c.point_labels.size() != static_cast<std::size_t>(n))
      throw DataError("fit_segmenter: cloud without per-point labels");
  }
  if (cfg.category_vector_width > 0)
    throw ParameterError("fit_segmenter: categorical input not supported by the desk-scale trainer");

  Rng run_rng(opt.seed);
  Rng shuffle_rng = run_rng.fork(1);
  Rng augment_rng = run_rng.fork(2);
  Rng dropout_rng = run_rng.fork(3);

  SgdMomentum<S> sgd;
  sgd.lr_max = opt.lr_max;
  sgd.lr_min = opt.lr_min;
  sgd.momentum = opt.momentum;
  sgd.total_epochs = opt.epochs;

  namespace fs = std::filesystem;
  if (!opt.out_dir.empty()) fs::create_directories(opt.out_dir);

  std::vector<Index> order(train.clouds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Index>(i);

  TrainResult result;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    double lr = cosine_lr(epoch, opt.epochs, opt.lr_max, opt.lr_min);
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    Index seen = 0, correct = 0, points_seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch_size)) {
      Index b = std::min<Index>(opt.batch_size, static_cast<Index>(order.size() - start));
      if (b < 2) break;
      PointMatrix<S> stacked(b * n, train.clouds.front().points.cols());
      std::vector<Index> labels(static_cast<std::size_t>(b * n));
      for (Index i = 0; i < b; ++i) {
        const auto& cloud = train.clouds[static_cast<std::size_t>(order[start + static_cast<std::size_t>(i)])];
        stacked.middleRows(i * n, n) = augment(cloud.points, opt.augment, augment_rng).cast<S>();
        for (Index p = 0; p < n; ++p)
          labels[static_cast<std::size_t>(i * n + p)] = cloud.point_labels[static_cast<std::size_t>(p)];
      }
      Tape<S> tape;
      Var x = tape.constant(Tensor<S>::from_matrix(stacked));
      auto bound = bind(tape, params);
      Var logits = segmenter_forward(tape, x, Var{}, b, n, cfg, bound, true, &dropout_rng);
      Var loss = softmax_cross_entropy(tape, logits, labels);
      auto grads = tape.backward(loss);

      Bindings<S> bindings;
      collect_bindings(bound, bindings);
      std::vector<std::pair<Tensor<S>*, const Tensor<S>*>> param_grads;
      for (auto& [tensor, var] : bindings) param_grads.emplace_back(tensor, &grads.wrt(var));
      sgd.step(param_grads, lr);

      loss_sum += static_cast<double>(tape.value(loss)[0]) * static_cast<double>(b);
      auto lm = tape.value(logits).matrix();
      for (Index i = 0; i < b * n; ++i) {
        Index best = 0;
        lm.row(i).maxCoeff(&best);
        if (best == labels[static_cast<std::size_t>(i)]) ++correct;
      }
      seen += b;
      points_seen += b * n;
    }
    sgd.epoch = epoch + 1;
    result.curve.push_back({epoch, lr, loss_sum / static_cast<double>(seen),
                            static_cast<double>(correct) / static_cast<double>(points_seen)});
    if (opt.verbose)
      std::fprintf(stderr, "epoch %3d lr %.5f loss %.5f point-acc %.4f\n", epoch, lr, result.curve.back().loss,
                   result.curve.back().accuracy);
    if (!opt.out_dir.empty() && opt.checkpoint_every > 0 && (epoch + 1) % opt.checkpoint_every == 0 &&
        epoch + 1 < opt.epochs)
      save_checkpoint<S>(opt.out_dir + "/checkpoint_epoch" + std::to_string(epoch + 1) + ".ckpt", params);
  }

  if (!opt.out_dir.empty()) {
    std::ofstream metrics(opt.out_dir + "/metrics.csv");
    write_epoch_csv(metrics, result.curve);
    save_checkpoint<S>(opt.out_dir + "/checkpoint_final.ckpt", params);
  }
  if (test && !test->clouds.empty()) {
    result.final_eval = evaluate_segmenter(params, cfg, test->clouds, part_sets);
    result.has_final_eval = true;
    if (!opt.out_dir.empty()) {
      std::ofstream ev(opt.out_dir + "/eval.csv");
      write_metrics_csv(ev, result.final_eval, /*segmentation=*/true);
    }
  }
  return result;
}

/// Uniform subsampling to keep_fraction of the points before evaluation.
template <typename S>
MetricsReport random_dropout_eval(ClassifierParams<S>& params, const ClassifierConfig& cfg,
                                  const std::vector<LabeledCloud>& clouds, double keep_fraction, Rng& rng) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0))
    throw ParameterError("random_dropout_eval: keep fraction outside (0,1]");
  std::vector<LabeledCloud> reduced;
  reduced.reserve(clouds.size());
  for (const auto& cloud : clouds) {
    const Index n = cloud.points.rows();
    Index keep = static_cast<Index>(std::llround(keep_fraction * static_cast<double>(n)));
    if (keep < cfg.k)
      throw ParameterError("random_dropout_eval: " + std::to_string(keep) + " surviving points < k=" +
                           std::to_string(cfg.k));
    std::vector<Index> idx(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    for (Index i = 0; i < keep; ++i) {  // partial Fisher-Yates
      Index j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n - i)));
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    LabeledCloud rc;
    rc.points.resize(keep, cloud.points.cols());
    for (Index i = 0; i < keep; ++i) rc.points.row(i) = cloud.points.row(idx[static_cast<std::size_t>(i)]);
    rc.class_label = cloud.class_label;
    reduced.push_back(std::move(rc));
  }
  return evaluate_classifier(params, cfg, reduced);
}

enum class DropSide { top, bottom, left, right, front, back };

inline DropSide parse_drop_side(const std::string& s) {
  if (s == "top") return DropSide::top;
  if (s == "bottom") return DropSide::bottom;
  if (s == "left") return DropSide::left;
  if (s == "right") return DropSide::right;
  if (s == "front") return DropSide::front;
  if (s == "back") return DropSide::back;
  throw ParameterError("unknown side '" + s + "' (expected top|bottom|left|right|front|back)");
}

/// Keeps the fraction of points farthest from the dropped side.  Axis
/// convention: top/bottom on +z/-z, right/left on +x/-x, front/back on
/// +y/-y.
inline Points side_drop(const Points& points, double fraction, DropSide side) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ParameterError("side_drop: fraction outside (0,1]");
  const Index n = points.rows();
  Index keep = static_cast<Index>(std::ceil(fraction * static_cast<double>(n)));
  if (keep < 1) throw ParameterError("side_drop: no surviving points");

  Index axis = 0;
  double sign = 1.0;
  switch (side) {
    case DropSide::top: axis = 2; sign = 1.0; break;
    case DropSide::bottom: axis = 2; sign = -1.0; break;
    case DropSide::right: axis = 0; sign = 1.0; break;
    case DropSide::left: axis = 0; sign = -1.0; break;
    case DropSide::front: axis = 1; sign = 1.0; break;
    case DropSide::back: axis = 1; sign = -1.0; break;
  }
  std::vector<Index> idx(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  // ascending signed coordinate = farthest from the dropped side first
  std::stable_sort(idx.begin(), idx.end(),
                   [&](Index a, Index b) { return sign * points(a, axis) < sign * points(b, axis); });
  Points out(keep, points.cols());
  for (Index i = 0; i < keep; ++i) out.row(i) = points.row(idx[static_cast<std::size_t>(i)]);
  return out;
}

template <typename S>
MetricsReport side_drop_eval(ClassifierParams<S>& params, const ClassifierConfig& cfg,
                             const std::vector<LabeledCloud>& clouds, double fraction, DropSide side) {
  std::vector<LabeledCloud> reduced;
  reduced.reserve(clouds.size());
  for (const auto& cloud : clouds) {
    LabeledCloud rc;
    rc.points = side_drop(cloud.points, fraction, side);
    if (rc.points.rows() < cfg.k) throw ParameterError("side_drop_eval: surviving points < k");
    rc.class_label = cloud.class_label;
    reduced.push_back(std::move(rc));
  }
  return evaluate_classifier(params, cfg, reduced);
}

/// Euclidean distances from one point to all points in a named feature
/// space: "input", "transform" (when present), or "edgeconvL".
template <typename S>
std::vector<double> export_feature_distances(ClassifierParams<S>& params, const ClassifierConfig& cfg,
                                             const Points& cloud, Index source_index, const std::string& layer) {
  if (source_index < 0 || source_index >= cloud.rows())
    throw ParameterError("export_feature_distances: source index out of range");
  ForwardCapture<S> capture;
  classify_logits(PointMatrix<S>(cloud.cast<S>()), cfg, params, &capture);
  for (const auto& [name, features] : capture.stage_features) {
    if (name != layer) continue;
    auto m = features.matrix();
    std::vector<double> out(static_cast<std::size_t>(m.rows()));
    for (Index i = 0; i < m.rows(); ++i)
      out[static_cast<std::size_t>(i)] = static_cast<double>((m.row(i) - m.row(source_index)).norm());
    return out;
  }
  std::string known;
  for (const auto& [name, f] : capture.stage_features) known += (known.empty() ? "" : ", ") + name;
  throw ParameterError("export_feature_distances: unknown layer '" + layer + "' (have: " + known + ")");
}

inline void write_distance_csv(std::ostream& out, const Points& cloud, const std::vector<double>& distances) {
  out << "index,x,y,z,distance\n";
  out.precision(17);
  for (Index i = 0; i < cloud.rows(); ++i)
    out << i << "," << cloud(i, 0) << "," << cloud(i, 1) << "," << cloud(i, 2) << ","
        << distances[static_cast<std::size_t>(i)] << "\n";
}

}  // namespace dgcnn
