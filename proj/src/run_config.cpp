#include <filesystem>
#include <json.hpp>
#include <set>

#include "dgcnn/run_config.hpp"

namespace dgcnn {

namespace {

void check_keys(const Json& obj, const std::string& where, const std::set<std::string>& known) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!known.count(it.key()))
      throw ParameterError("config: unknown key '" + where + "." + it.key() + "'");
}

template <typename T>
void get_to(const Json& obj, const char* key, T& out) {
  if (obj.contains(key)) obj.at(key).get_to(out);
}

void get_widths(const Json& obj, const char* key, std::vector<Index>& out) {
  if (!obj.contains(key)) return;
  out.clear();
  for (const auto& v : obj.at(key)) out.push_back(v.get<Index>());
}

Aggregation parse_pool(const std::string& s) {
  if (s == "max") return Aggregation::max;
  if (s == "sum") return Aggregation::sum;
  throw ParameterError("config: pooling must be 'max' or 'sum', got '" + s + "'");
}

std::optional<EdgeFunction> parse_edge_function(const Json& v) {
  if (v.is_null()) return std::nullopt;
  std::string s = v.get<std::string>();
  for (EdgeFunction k : {EdgeFunction::global_only, EdgeFunction::neighbor_only, EdgeFunction::neighbor_gaussian,
                         EdgeFunction::local_only, EdgeFunction::centralized_asym, EdgeFunction::pair_concat})
    if (s == to_string(k)) return k;
  throw ParameterError("config: unknown edge function '" + s + "'");
}

void parse_transform(const Json& t, TransformConfig& out) {
  check_keys(t, "model.transform", {"edge_mlp_widths", "dense_widths"});
  get_widths(t, "edge_mlp_widths", out.edge_mlp_widths);
  get_widths(t, "dense_widths", out.dense_widths);
}

}  // namespace

Json default_config_json() { return run_spec_to_json(RunSpec{}); }

RunSpec parse_run_spec(const Json& config) {
  RunSpec spec;
  check_keys(config, "", {"task", "precision", "model", "data", "train", "seed", "init_seed"});
  get_to(config, "task", spec.task);
  if (spec.task != "classification" && spec.task != "segmentation")
    throw ParameterError("config: task must be 'classification' or 'segmentation'");
  get_to(config, "precision", spec.precision);
  if (spec.precision != "f64" && spec.precision != "f32")
    throw ParameterError("config: precision must be 'f64' or 'f32'");
  get_to(config, "seed", spec.seed);
  get_to(config, "init_seed", spec.init_seed);

  if (config.contains("model")) {
    const Json& m = config.at("model");
    check_keys(m, "model",
               {"k", "edgeconv_widths", "embed_width", "head_widths", "num_classes", "num_part_labels",
                "category_vector_width", "dropout_keep", "dynamic_graph", "centralization", "global_pool",
                "self_loop", "leaky_slope", "bn_momentum", "bn_eps", "edge_function", "gaussian_bandwidth",
                "use_spatial_transformer", "transform"});
    auto& c = spec.classifier;
    auto& g = spec.segmenter;
    get_to(m, "k", c.k);
    g.k = c.k;
    get_widths(m, "edgeconv_widths", c.edgeconv_widths);
    if (m.contains("edgeconv_widths")) g.edgeconv_widths = c.edgeconv_widths;
    get_to(m, "embed_width", c.embed_width);
    g.embed_width = c.embed_width;
    get_widths(m, "head_widths", c.head_widths);
    if (m.contains("head_widths")) g.head_widths = c.head_widths;
    get_to(m, "num_classes", c.num_classes);
    get_to(m, "num_part_labels", g.num_part_labels);
    get_to(m, "category_vector_width", g.category_vector_width);
    get_to(m, "dropout_keep", c.dropout_keep);
    g.dropout_keep = c.dropout_keep;
    get_to(m, "dynamic_graph", c.dynamic_graph);
    g.dynamic_graph = c.dynamic_graph;
    get_to(m, "centralization", c.centralization);
    g.centralization = c.centralization;
    if (m.contains("global_pool")) {
      c.global_pool = parse_pool(m.at("global_pool").get<std::string>());
      g.global_pool = c.global_pool;
    }
    get_to(m, "self_loop", c.self_loop);
    g.self_loop = c.self_loop;
    get_to(m, "leaky_slope", c.leaky_slope);
    g.leaky_slope = c.leaky_slope;
    get_to(m, "bn_momentum", c.bn.momentum);
    g.bn.momentum = c.bn.momentum;
    get_to(m, "bn_eps", c.bn.eps);
    g.bn.eps = c.bn.eps;
    if (m.contains("edge_function")) {
      c.edge_function = parse_edge_function(m.at("edge_function"));
      g.edge_function = c.edge_function;
    }
    get_to(m, "gaussian_bandwidth", c.gaussian_bandwidth);
    g.gaussian_bandwidth = c.gaussian_bandwidth;
    if (m.contains("use_spatial_transformer")) {
      m.at("use_spatial_transformer").get_to(c.use_spatial_transformer);
      g.use_spatial_transformer = c.use_spatial_transformer;
    } else {
      g.use_spatial_transformer = spec.task == "segmentation";
    }
    if (m.contains("transform")) {
      parse_transform(m.at("transform"), c.transform);
      g.transform = c.transform;
    }
  }

  if (config.contains("data")) {
    const Json& d = config.at("data");
    check_keys(d, "data", {"kind", "seed", "synth", "manifest"});
    get_to(d, "kind", spec.data_kind);
    get_to(d, "seed", spec.data_seed);
    if (spec.data_kind == "manifest") {
      if (!d.contains("manifest")) throw ParameterError("config: data.kind=manifest needs data.manifest");
      d.at("manifest").get_to(spec.manifest_path);
    } else if (spec.data_kind != "synth") {
      throw ParameterError("config: data.kind must be 'synth' or 'manifest'");
    }
    if (d.contains("synth")) {
      const Json& s = d.at("synth");
      check_keys(s, "data.synth",
                 {"classes", "train_per_class", "val_per_class", "test_per_class", "points_per_cloud",
                  "texture_amplitude", "smooth_frequency", "bumpy_frequency", "texture_components", "surface_noise",
                  "random_rotation", "normalize"});
      auto& y = spec.synth;
      if (s.contains("classes")) {
        y.classes.clear();
        for (const auto& c : s.at("classes")) y.classes.push_back(c.get<std::string>());
      }
      get_to(s, "train_per_class", y.train_per_class);
      get_to(s, "val_per_class", y.val_per_class);
      get_to(s, "test_per_class", y.test_per_class);
      get_to(s, "points_per_cloud", y.points_per_cloud);
      get_to(s, "texture_amplitude", y.texture_amplitude);
      get_to(s, "smooth_frequency", y.smooth_frequency);
      get_to(s, "bumpy_frequency", y.bumpy_frequency);
      get_to(s, "texture_components", y.texture_components);
      get_to(s, "surface_noise", y.surface_noise);
      get_to(s, "random_rotation", y.random_rotation);
      get_to(s, "normalize", y.normalize);
    }
  }

  if (config.contains("train")) {
    const Json& t = config.at("train");
    check_keys(t, "train",
               {"epochs", "batch_size", "lr_max", "lr_min", "momentum", "checkpoint_every", "augment", "verbose"});
    auto& o = spec.train;
    get_to(t, "epochs", o.epochs);
    get_to(t, "batch_size", o.batch_size);
    get_to(t, "lr_max", o.lr_max);
    get_to(t, "lr_min", o.lr_min);
    get_to(t, "momentum", o.momentum);
    get_to(t, "checkpoint_every", o.checkpoint_every);
    get_to(t, "verbose", o.verbose);
    if (t.contains("augment")) {
      const Json& a = t.at("augment");
      check_keys(a, "train.augment",
                 {"enabled", "scale_lo", "scale_hi", "shift_range", "jitter_sigma", "jitter_clip"});
      get_to(a, "enabled", o.augment.enabled);
      get_to(a, "scale_lo", o.augment.scale_lo);
      get_to(a, "scale_hi", o.augment.scale_hi);
      get_to(a, "shift_range", o.augment.shift_range);
      get_to(a, "jitter_sigma", o.augment.jitter_sigma);
      get_to(a, "jitter_clip", o.augment.jitter_clip);
    }
  }
  spec.train.seed = spec.seed;
  return spec;
}

Json run_spec_to_json(const RunSpec& s) {
  Json m;
  m["k"] = s.classifier.k;
  m["edgeconv_widths"] = s.classifier.edgeconv_widths;
  m["embed_width"] = s.classifier.embed_width;
  m["head_widths"] = s.classifier.head_widths;
  m["num_classes"] = s.classifier.num_classes;
  m["num_part_labels"] = s.segmenter.num_part_labels;
  m["category_vector_width"] = s.segmenter.category_vector_width;
  m["dropout_keep"] = s.classifier.dropout_keep;
  m["dynamic_graph"] = s.classifier.dynamic_graph;
  m["centralization"] = s.classifier.centralization;
  m["global_pool"] = to_string(s.classifier.global_pool);
  m["self_loop"] = s.classifier.self_loop;
  m["leaky_slope"] = s.classifier.leaky_slope;
  m["bn_momentum"] = s.classifier.bn.momentum;
  m["bn_eps"] = s.classifier.bn.eps;
  m["edge_function"] = s.classifier.edge_function ? Json(to_string(*s.classifier.edge_function)) : Json(nullptr);
  m["gaussian_bandwidth"] = s.classifier.gaussian_bandwidth;
  m["use_spatial_transformer"] = s.classifier.use_spatial_transformer;

  Json synth;
  synth["classes"] = s.synth.classes;
  synth["train_per_class"] = s.synth.train_per_class;
  synth["val_per_class"] = s.synth.val_per_class;
  synth["test_per_class"] = s.synth.test_per_class;
  synth["points_per_cloud"] = s.synth.points_per_cloud;
  synth["texture_amplitude"] = s.synth.texture_amplitude;
  synth["smooth_frequency"] = s.synth.smooth_frequency;
  synth["bumpy_frequency"] = s.synth.bumpy_frequency;
  synth["texture_components"] = s.synth.texture_components;
  synth["surface_noise"] = s.synth.surface_noise;
  synth["random_rotation"] = s.synth.random_rotation;
  synth["normalize"] = s.synth.normalize;

  Json data;
  data["kind"] = s.data_kind;
  data["seed"] = s.data_seed;
  data["synth"] = synth;
  if (!s.manifest_path.empty()) data["manifest"] = s.manifest_path;

  Json augment;
  augment["enabled"] = s.train.augment.enabled;
  augment["scale_lo"] = s.train.augment.scale_lo;
  augment["scale_hi"] = s.train.augment.scale_hi;
  augment["shift_range"] = s.train.augment.shift_range;
  augment["jitter_sigma"] = s.train.augment.jitter_sigma;
  augment["jitter_clip"] = s.train.augment.jitter_clip;

  Json train;
  train["epochs"] = s.train.epochs;
  train["batch_size"] = s.train.batch_size;
  train["lr_max"] = s.train.lr_max;
  train["lr_min"] = s.train.lr_min;
  train["momentum"] = s.train.momentum;
  train["checkpoint_every"] = s.train.checkpoint_every;
  train["augment"] = augment;
  train["verbose"] = s.train.verbose;

  Json out;
  out["task"] = s.task;
  out["precision"] = s.precision;
  out["model"] = m;
  out["data"] = data;
  out["train"] = train;
  out["seed"] = s.seed;
  out["init_seed"] = s.init_seed;
  return out;
}

LoadedData load_manifest(const std::string& path) {
  Json manifest = load_config_file(path);
  std::filesystem::path base = std::filesystem::path(path).parent_path();
  LoadedData out;
  out.train.split = "train";
  out.val.split = "val";
  out.test.split = "test";
  if (manifest.contains("classes"))
    for (const auto& c : manifest.at("classes")) {
      out.train.class_names.push_back(c.get<std::string>());
      out.test.class_names.push_back(c.get<std::string>());
    }
  if (!manifest.contains("clouds")) throw DataError("manifest has no 'clouds' array: " + path);
  for (const auto& entry : manifest.at("clouds")) {
    LabeledCloud cloud;
    std::string file = entry.at("file").get<std::string>();
    auto xyz = load_xyz((base / file).string());
    cloud.points = std::move(xyz.points);
    cloud.point_labels = std::move(xyz.labels);
    if (entry.contains("label")) cloud.class_label = entry.at("label").get<Index>();
    if (entry.contains("category")) cloud.category = entry.at("category").get<Index>();
    std::string split = entry.value("split", "train");
    if (split == "train")
      out.train.clouds.push_back(std::move(cloud));
    else if (split == "val")
      out.val.clouds.push_back(std::move(cloud));
    else if (split == "test")
      out.test.clouds.push_back(std::move(cloud));
    else
      throw DataError("manifest: unknown split '" + split + "'");
  }
  return out;
}

LoadedData load_data(const RunSpec& spec, const std::string& config_dir) {
  if (spec.data_kind == "manifest") {
    std::filesystem::path p = spec.manifest_path;
    if (p.is_relative() && !config_dir.empty()) p = std::filesystem::path(config_dir) / p;
    return load_manifest(p.string());
  }
  SynthDataset synth = synth_dataset(spec.synth, spec.data_seed);
  return LoadedData{std::move(synth.train), std::move(synth.val), std::move(synth.test)};
}

}  // namespace dgcnn
