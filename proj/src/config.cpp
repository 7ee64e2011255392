#include "fpb/config.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace fpb {

using nlohmann::json;

void RunConfig::validate() const {
  loss.validate();
  regularization.validate();
  train.validate();
  toy.validate();
  if (data.image_cache_mb < 0) throw std::invalid_argument("data.image_cache_mb must be >= 0");
  if (eval.batch_size < 1 || eval.max_rank < 1 || eval.activation_maps < 0)
    throw std::invalid_argument("eval: batch_size and max_rank must be >= 1, activation_maps >= 0");
  if (train.use_cor && !model.use_fpb)
    throw std::invalid_argument("regularization.enabled needs model.use_fpb (the term pairs backbone and pyramid maps)");
}

json to_json(const RunConfig& c) {
  const auto& b = c.model.backbone;
  const auto& f = c.model.fpb;
  const auto& a = c.train.augment;
  const auto& r = c.regularization;
  return {
      {"model",
       {{"backbone", to_string(b.variant)},
        {"last_stride", b.last_stride},
        {"pretrained_weights", b.pretrained_weights_path},
        {"attention_after_stage2", b.attention_after_stage2},
        {"attention_reduction", b.attention_reduction},
        {"base_width", b.base_width},
        {"input_height", b.input_height},
        {"input_width", b.input_width},
        {"use_fpb", c.model.use_fpb},
        {"num_identities", c.model.num_identities},
        {"init_seed", c.model.init_seed},
        {"fpb",
         {{"inner_channels", f.inner_channels},
          {"out_channels", f.out_channels},
          {"parts", f.parts},
          {"reduced_dim", f.reduced_dim},
          {"attention_on_shallow_lateral", f.attention_on_shallow_lateral},
          {"attention_reduction", f.attention_reduction},
          {"shortcuts", f.shortcuts},
          {"weighted_fusion", f.weighted_fusion}}}}},
      {"loss", {{"alpha", c.loss.alpha}, {"margin", c.loss.margin}, {"label_smoothing", c.loss.label_smoothing}}},
      {"regularization",
       {{"enabled", c.train.use_cor},
        {"beta", r.beta},
        {"power_iters", r.power_iters},
        {"iter_tolerance", r.iter_tolerance},
        {"pool_height", r.pool_target_height},
        {"pool_width", r.pool_target_width},
        {"start_vector_seed", r.start_vector_seed}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"identities_per_batch", c.train.identities_per_batch},
        {"instances_per_identity", c.train.instances_per_identity},
        {"base_lr", c.train.base_lr},
        {"warmup_start_lr", c.train.warmup_start_lr},
        {"warmup_epochs", c.train.warmup_epochs},
        {"decay_epochs", c.train.decay_epochs},
        {"decay_factor", c.train.decay_factor},
        {"weight_decay", c.train.weight_decay},
        {"adam_beta1", c.train.adam_beta1},
        {"adam_beta2", c.train.adam_beta2},
        {"adam_eps", c.train.adam_eps},
        {"seed", c.train.seed},
        {"checkpoint_every", c.train.checkpoint_every},
        {"max_steps_per_epoch", c.train.max_steps_per_epoch}}},
      {"augment",
       {{"flip", a.flip},
        {"flip_prob", a.flip_prob},
        {"crop", a.crop},
        {"crop_pad", a.crop_pad},
        {"erase", a.erase},
        {"erase_prob", a.erase_prob},
        {"erase_area_min", a.erase_area_min},
        {"erase_area_max", a.erase_area_max},
        {"erase_aspect_min", a.erase_aspect_min},
        {"erase_aspect_max", a.erase_aspect_max},
        {"patch", a.patch},
        {"patch_prob", a.patch_prob},
        {"patch_pool_capacity", a.patch_pool_capacity},
        {"patch_min_pool", a.patch_min_pool},
        {"patch_area_min", a.patch_area_min},
        {"patch_area_max", a.patch_area_max},
        {"patch_min_ratio", a.patch_min_ratio}}},
      {"data", {{"root", c.data.root}, {"cache_index", c.data.cache_index}, {"image_cache_mb", c.data.image_cache_mb}}},
      {"eval",
       {{"batch_size", c.eval.batch_size},
        {"max_rank", c.eval.max_rank},
        {"per_query", c.eval.per_query},
        {"activation_maps", c.eval.activation_maps}}},
      {"toy", c.toy.to_json()},
  };
}

RunConfig run_config_from_json(const json& j) {
  json full = to_json(RunConfig{});
  merge_config(full, j);

  RunConfig c;
  const auto& m = full.at("model");
  auto& b = c.model.backbone;
  b.variant = parse_backbone_variant(m.at("backbone").get<std::string>());
  m.at("last_stride").get_to(b.last_stride);
  m.at("pretrained_weights").get_to(b.pretrained_weights_path);
  m.at("attention_after_stage2").get_to(b.attention_after_stage2);
  m.at("attention_reduction").get_to(b.attention_reduction);
  m.at("base_width").get_to(b.base_width);
  m.at("input_height").get_to(b.input_height);
  m.at("input_width").get_to(b.input_width);
  m.at("use_fpb").get_to(c.model.use_fpb);
  m.at("num_identities").get_to(c.model.num_identities);
  m.at("init_seed").get_to(c.model.init_seed);
  const auto& f = m.at("fpb");
  f.at("inner_channels").get_to(c.model.fpb.inner_channels);
  f.at("out_channels").get_to(c.model.fpb.out_channels);
  f.at("parts").get_to(c.model.fpb.parts);
  f.at("reduced_dim").get_to(c.model.fpb.reduced_dim);
  f.at("attention_on_shallow_lateral").get_to(c.model.fpb.attention_on_shallow_lateral);
  f.at("attention_reduction").get_to(c.model.fpb.attention_reduction);
  f.at("shortcuts").get_to(c.model.fpb.shortcuts);
  f.at("weighted_fusion").get_to(c.model.fpb.weighted_fusion);

  const auto& l = full.at("loss");
  l.at("alpha").get_to(c.loss.alpha);
  l.at("margin").get_to(c.loss.margin);
  l.at("label_smoothing").get_to(c.loss.label_smoothing);

  const auto& r = full.at("regularization");
  r.at("enabled").get_to(c.train.use_cor);
  r.at("beta").get_to(c.regularization.beta);
  r.at("power_iters").get_to(c.regularization.power_iters);
  r.at("iter_tolerance").get_to(c.regularization.iter_tolerance);
  r.at("pool_height").get_to(c.regularization.pool_target_height);
  r.at("pool_width").get_to(c.regularization.pool_target_width);
  r.at("start_vector_seed").get_to(c.regularization.start_vector_seed);

  const auto& t = full.at("train");
  t.at("epochs").get_to(c.train.epochs);
  t.at("batch_size").get_to(c.train.batch_size);
  t.at("identities_per_batch").get_to(c.train.identities_per_batch);
  t.at("instances_per_identity").get_to(c.train.instances_per_identity);
  t.at("base_lr").get_to(c.train.base_lr);
  t.at("warmup_start_lr").get_to(c.train.warmup_start_lr);
  t.at("warmup_epochs").get_to(c.train.warmup_epochs);
  t.at("decay_epochs").get_to(c.train.decay_epochs);
  t.at("decay_factor").get_to(c.train.decay_factor);
  t.at("weight_decay").get_to(c.train.weight_decay);
  t.at("adam_beta1").get_to(c.train.adam_beta1);
  t.at("adam_beta2").get_to(c.train.adam_beta2);
  t.at("adam_eps").get_to(c.train.adam_eps);
  t.at("seed").get_to(c.train.seed);
  t.at("checkpoint_every").get_to(c.train.checkpoint_every);
  t.at("max_steps_per_epoch").get_to(c.train.max_steps_per_epoch);

  const auto& a = full.at("augment");
  auto& ag = c.train.augment;
  a.at("flip").get_to(ag.flip);
  a.at("flip_prob").get_to(ag.flip_prob);
  a.at("crop").get_to(ag.crop);
  a.at("crop_pad").get_to(ag.crop_pad);
  a.at("erase").get_to(ag.erase);
  a.at("erase_prob").get_to(ag.erase_prob);
  a.at("erase_area_min").get_to(ag.erase_area_min);
  a.at("erase_area_max").get_to(ag.erase_area_max);
  a.at("erase_aspect_min").get_to(ag.erase_aspect_min);
  a.at("erase_aspect_max").get_to(ag.erase_aspect_max);
  a.at("patch").get_to(ag.patch);
  a.at("patch_prob").get_to(ag.patch_prob);
  a.at("patch_pool_capacity").get_to(ag.patch_pool_capacity);
  a.at("patch_min_pool").get_to(ag.patch_min_pool);
  a.at("patch_area_min").get_to(ag.patch_area_min);
  a.at("patch_area_max").get_to(ag.patch_area_max);
  a.at("patch_min_ratio").get_to(ag.patch_min_ratio);

  const auto& d = full.at("data");
  d.at("root").get_to(c.data.root);
  d.at("cache_index").get_to(c.data.cache_index);
  d.at("image_cache_mb").get_to(c.data.image_cache_mb);

  const auto& e = full.at("eval");
  e.at("batch_size").get_to(c.eval.batch_size);
  e.at("max_rank").get_to(c.eval.max_rank);
  e.at("per_query").get_to(c.eval.per_query);
  e.at("activation_maps").get_to(c.eval.activation_maps);

  const auto& y = full.at("toy");
  y.at("num_identities").get_to(c.toy.num_identities);
  y.at("images_per_identity").get_to(c.toy.images_per_identity);
  y.at("height").get_to(c.toy.height);
  y.at("width").get_to(c.toy.width);
  y.at("seed").get_to(c.toy.seed);
  y.at("num_cameras").get_to(c.toy.num_cameras);
  y.at("queries_per_identity").get_to(c.toy.queries_per_identity);
  y.at("train_fraction").get_to(c.toy.train_fraction);
  y.at("background_hue_jitter").get_to(c.toy.background_hue_jitter);
  y.at("brightness_jitter").get_to(c.toy.brightness_jitter);
  y.at("max_shift_fraction").get_to(c.toy.max_shift_fraction);
  y.at("scale_jitter").get_to(c.toy.scale_jitter);
  y.at("occlusion_prob").get_to(c.toy.occlusion_prob);
  y.at("noise_sigma").get_to(c.toy.noise_sigma);

  c.loss.num_identities = c.model.num_identities;
  return c;
}

namespace {

bool compatible(const json& def, const json& v) {
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_string()) return v.is_string();
  if (def.is_array()) return v.is_array();
  if (def.is_object()) return v.is_object();
  if (def.is_number_float()) return v.is_number();
  if (def.is_number_unsigned()) return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
  if (def.is_number_integer()) return v.is_number_integer();
  return false;
}

std::string kind(const json& v) {
  if (v.is_number_integer()) return "integer";
  if (v.is_number_float()) return "number";
  return v.type_name();
}

}  // namespace

void merge_config(json& base, const json& patch, const std::string& prefix) {
  if (!patch.is_object()) throw std::invalid_argument("config" + (prefix.empty() ? "" : " '" + prefix + "'") +
                                                      " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string dotted = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw std::invalid_argument("unknown config key '" + dotted + "'");
    json& slot = base[key];
    if (!compatible(slot, value))
      throw std::invalid_argument("config key '" + dotted + "' expects " + kind(slot) + ", got " + kind(value));
    if (slot.is_object()) {
      merge_config(slot, value, dotted);
    } else if (slot.is_number_float()) {
      slot = value.get<double>();
    } else {
      slot = value;
    }
  }
}

void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1))
    parts.push_back(rest.substr(0, pos));
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    if (it->empty()) throw std::invalid_argument("empty key segment in override: " + assignment);
    patch = json{{*it, patch}};
  }
  // A string default given a JSON-looking value ("123") keeps the raw text.
  const json* def = &cfg;
  for (const auto& p : parts) {
    if (!def->is_object() || !def->contains(p)) break;
    def = &def->at(p);
  }
  if (def->is_string() && !value.is_string()) {
    json* leaf = &patch;
    for (const auto& p : parts) leaf = &(*leaf)[p];
    *leaf = text;
  }
  merge_config(cfg, patch);
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  json cfg = to_json(RunConfig{});
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    json file;
    try {
      file = json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
      throw std::runtime_error("cannot parse config file " + path + ": " + e.what());
    }
    merge_config(cfg, file);
  }
  for (const auto& o : overrides) apply_override(cfg, o);
  RunConfig out = run_config_from_json(cfg);
  out.validate();
  return out;
}

}  // namespace fpb
