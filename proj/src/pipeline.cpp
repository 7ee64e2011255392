#include "fpb/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "fpb/checkpoint.hpp"
#include "fpb/image_io.hpp"

namespace fpb {

namespace fs = std::filesystem;

void AugmentConfig::validate() const {
  auto prob = [](real p, const char* name) {
    if (!(p >= 0 && p <= 1)) throw std::invalid_argument(std::string("augment: ") + name + " must be in [0,1]");
  };
  prob(flip_prob, "flip_prob");
  prob(erase_prob, "erase_prob");
  prob(patch_prob, "patch_prob");
  if (crop_pad < 0) throw std::invalid_argument("augment: crop_pad must be >= 0");
  if (!(erase_area_min > 0 && erase_area_min <= erase_area_max && erase_area_max < 1))
    throw std::invalid_argument("augment: erase area range must satisfy 0 < min <= max < 1");
  if (!(erase_aspect_min > 0 && erase_aspect_min <= erase_aspect_max))
    throw std::invalid_argument("augment: erase aspect range must satisfy 0 < min <= max");
  if (patch_pool_capacity < 1 || patch_min_pool < 1 || patch_min_pool > patch_pool_capacity)
    throw std::invalid_argument("augment: need 1 <= patch_min_pool <= patch_pool_capacity");
  if (!(patch_area_min > 0 && patch_area_min <= patch_area_max && patch_area_max < 1))
    throw std::invalid_argument("augment: patch area range must satisfy 0 < min <= max < 1");
  if (!(patch_min_ratio > 0 && patch_min_ratio <= 1))
    throw std::invalid_argument("augment: patch_min_ratio must be in (0,1]");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (identities_per_batch < 2) throw std::invalid_argument("train: need at least 2 identities per batch");
  if (instances_per_identity < 2) throw std::invalid_argument("train: need at least 2 instances per identity");
  if (batch_size != identities_per_batch * instances_per_identity)
    throw std::invalid_argument("train: batch_size must equal identities_per_batch * instances_per_identity");
  if (!(base_lr > 0) || !(warmup_start_lr > 0)) throw std::invalid_argument("train: learning rates must be > 0");
  if (warmup_epochs < 0) throw std::invalid_argument("train: warmup_epochs must be >= 0");
  for (std::size_t i = 0; i < decay_epochs.size(); ++i) {
    if (decay_epochs[i] < warmup_epochs) throw std::invalid_argument("train: decay epochs must not precede warmup end");
    if (i > 0 && decay_epochs[i] <= decay_epochs[i - 1])
      throw std::invalid_argument("train: decay epochs must be strictly increasing");
  }
  if (!(decay_factor > 0 && decay_factor <= 1)) throw std::invalid_argument("train: decay_factor must be in (0,1]");
  if (weight_decay < 0) throw std::invalid_argument("train: weight_decay must be >= 0");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1 && adam_eps > 0))
    throw std::invalid_argument("train: invalid Adam parameters");
  if (checkpoint_every < 1) throw std::invalid_argument("train: checkpoint_every must be >= 1");
  if (max_steps_per_epoch < 0) throw std::invalid_argument("train: max_steps_per_epoch must be >= 0");
  augment.validate();
}

real lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw std::invalid_argument("lr_at: negative epoch");
  if (epoch < cfg.warmup_epochs)
    return cfg.warmup_start_lr + (cfg.base_lr - cfg.warmup_start_lr) * epoch / cfg.warmup_epochs;
  int passed = 0;
  for (int d : cfg.decay_epochs)
    if (epoch >= d) ++passed;
  if (passed == 0) return cfg.base_lr;
  // Dividing by an exact power of the inverse factor keeps 3.5e-4 -> 3.5e-5
  // bit-exact where repeated multiplication by 0.1 would not.
  return cfg.base_lr / std::pow(1.0 / cfg.decay_factor, passed);
}

std::mt19937_64 derive_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t stream) {
  auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v); };
  auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
  std::seed_seq seq{lo(seed), hi(seed), lo(epoch), hi(epoch), lo(stream), hi(stream)};
  return std::mt19937_64(seq);
}

// ---------------------------------------------------------------------------

PKSampler::PKSampler(const std::vector<int>& labels, int p, int k) : p_(p), k_(k) {
  if (p < 1 || k < 1) throw std::invalid_argument("PKSampler: p and k must be >= 1");
  for (std::size_t i = 0; i < labels.size(); ++i) by_label_[labels[i]].push_back(i);
  if (static_cast<int>(by_label_.size()) < p)
    throw std::invalid_argument("PKSampler: fewer identities (" + std::to_string(by_label_.size()) +
                                ") than identities per batch (" + std::to_string(p) + ")");
}

namespace {

std::vector<std::size_t> draw_instances(const std::vector<std::size_t>& pool, int k, std::mt19937_64& rng) {
  std::vector<std::size_t> out;
  if (static_cast<int>(pool.size()) >= k) {
    out = pool;
    std::shuffle(out.begin(), out.end(), rng);
    out.resize(static_cast<std::size_t>(k));
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (int i = 0; i < k; ++i) out.push_back(pool[pick(rng)]);
  }
  return out;
}

}  // namespace

std::vector<std::vector<std::size_t>> PKSampler::epoch_batches(std::mt19937_64& rng) const {
  std::map<int, std::deque<std::vector<std::size_t>>> chunks;
  for (const auto& [label, idx] : by_label_) {
    std::vector<std::size_t> pool = idx;
    if (static_cast<int>(pool.size()) < k_) {
      chunks[label].push_back(draw_instances(idx, k_, rng));
      continue;
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t s = 0; s + k_ <= pool.size(); s += k_)
      chunks[label].emplace_back(pool.begin() + s, pool.begin() + s + k_);
  }

  std::vector<int> available;
  for (const auto& [label, c] : chunks) available.push_back(label);
  std::set<int> used;
  std::vector<std::vector<std::size_t>> batches;
  while (static_cast<int>(available.size()) >= p_) {
    std::vector<int> order = available;
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(static_cast<std::size_t>(p_));
    std::vector<std::size_t> batch;
    for (int label : order) {
      auto& q = chunks[label];
      batch.insert(batch.end(), q.front().begin(), q.front().end());
      q.pop_front();
      used.insert(label);
    }
    batches.push_back(std::move(batch));
    available.erase(std::remove_if(available.begin(), available.end(), [&](int l) { return chunks[l].empty(); }),
                    available.end());
  }

  std::vector<int> missing;
  for (const auto& [label, idx] : by_label_)
    if (!used.count(label)) missing.push_back(label);
  if (!missing.empty()) {
    std::vector<int> others;
    for (const auto& [label, idx] : by_label_)
      if (used.count(label)) others.push_back(label);
    std::shuffle(others.begin(), others.end(), rng);
    std::vector<int> labels = missing;
    for (std::size_t i = 0; static_cast<int>(labels.size()) < p_ && i < others.size(); ++i) labels.push_back(others[i]);
    std::vector<std::size_t> batch;
    for (int label : labels) {
      const auto inst = draw_instances(by_label_.at(label), k_, rng);
      batch.insert(batch.end(), inst.begin(), inst.end());
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

// ---------------------------------------------------------------------------

void PatchPool::add(Tensor patch) {
  if (capacity_ == 0) return;
  if (patches_.size() == capacity_) patches_.pop_front();
  patches_.push_back(std::move(patch));
}

const Tensor& PatchPool::sample(std::mt19937_64& rng) const {
  if (patches_.empty()) throw std::logic_error("PatchPool::sample on an empty pool");
  std::uniform_int_distribution<std::size_t> pick(0, patches_.size() - 1);
  return patches_[pick(rng)];
}

Tensor hflip(const Tensor& chw) {
  const auto c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  Tensor out(chw.shape());
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < h; ++y) {
      const real* src = chw.data() + (ch * h + y) * w;
      real* dst = out.data() + (ch * h + y) * w;
      for (std::int64_t x = 0; x < w; ++x) dst[x] = src[w - 1 - x];
    }
  return out;
}

namespace {

Tensor crop(const Tensor& chw, std::int64_t y0, std::int64_t x0, std::int64_t ph, std::int64_t pw) {
  const auto c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  Tensor out({c, ph, pw});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < ph; ++y)
      for (std::int64_t x = 0; x < pw; ++x) {
        const auto sy = y0 + y, sx = x0 + x;
        out[(ch * ph + y) * pw + x] = (sy >= 0 && sy < h && sx >= 0 && sx < w) ? chw[(ch * h + sy) * w + sx] : 0.0;
      }
  return out;
}

void paste(Tensor& chw, const Tensor& patch, std::int64_t y0, std::int64_t x0) {
  const auto c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  const auto ph = patch.dim(1), pw = patch.dim(2);
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < ph; ++y)
      for (std::int64_t x = 0; x < pw; ++x) chw[(ch * h + y0 + y) * w + x0 + x] = patch[(ch * ph + y) * pw + x];
}

// Rectangle of a random area fraction and aspect that fits inside h x w.
bool random_rect(std::int64_t h, std::int64_t w, real area_min, real area_max, real aspect_min, real aspect_max,
                 std::mt19937_64& rng, std::int64_t& rh, std::int64_t& rw) {
  std::uniform_real_distribution<real> area_d(area_min, area_max), aspect_d(aspect_min, aspect_max);
  for (int attempt = 0; attempt < 100; ++attempt) {
    const real area = area_d(rng) * static_cast<real>(h * w);
    const real aspect = aspect_d(rng);
    rh = std::llround(std::sqrt(area * aspect));
    rw = std::llround(std::sqrt(area / aspect));
    if (rh >= 1 && rw >= 1 && rh < h && rw < w) return true;
  }
  return false;
}

}  // namespace

Tensor augment(const Tensor& image, const AugmentConfig& cfg, std::mt19937_64& rng, PatchPool* pool,
               const std::array<real, 3>& fill) {
  if (image.rank() != 3 || image.dim(0) != 3) throw std::invalid_argument("augment: expected [3,H,W]");
  const auto h = image.dim(1), w = image.dim(2);
  std::uniform_real_distribution<real> u01(0, 1);
  Tensor out = image;

  if (cfg.flip && u01(rng) < cfg.flip_prob) out = hflip(out);

  if (cfg.crop && cfg.crop_pad > 0) {
    std::uniform_int_distribution<std::int64_t> off(0, 2 * cfg.crop_pad);
    const auto oy = off(rng) - cfg.crop_pad, ox = off(rng) - cfg.crop_pad;
    out = crop(out, oy, ox, h, w);
  }

  if (cfg.patch && pool) {
    std::int64_t ph = 0, pw = 0;
    if (random_rect(h, w, cfg.patch_area_min, cfg.patch_area_max, cfg.patch_min_ratio, 1.0 / cfg.patch_min_ratio, rng,
                    ph, pw)) {
      std::uniform_int_distribution<std::int64_t> py(0, h - ph), px(0, w - pw);
      const auto y0 = py(rng), x0 = px(rng);
      pool->add(crop(out, y0, x0, ph, pw));
    }
    if (pool->size() >= static_cast<std::size_t>(cfg.patch_min_pool) && u01(rng) < cfg.patch_prob) {
      Tensor patch = pool->sample(rng);
      if (u01(rng) < 0.5) patch = hflip(patch);
      const auto ph2 = patch.dim(1), pw2 = patch.dim(2);
      if (ph2 <= h && pw2 <= w) {
        std::uniform_int_distribution<std::int64_t> py(0, h - ph2), px(0, w - pw2);
        const auto y0 = py(rng), x0 = px(rng);
        paste(out, patch, y0, x0);
      }
    }
  }

  if (cfg.erase && u01(rng) < cfg.erase_prob) {
    std::int64_t eh = 0, ew = 0;
    if (random_rect(h, w, cfg.erase_area_min, cfg.erase_area_max, cfg.erase_aspect_min, cfg.erase_aspect_max, rng, eh,
                    ew)) {
      std::uniform_int_distribution<std::int64_t> py(0, h - eh), px(0, w - ew);
      const auto y0 = py(rng), x0 = px(rng);
      for (int ch = 0; ch < 3; ++ch)
        for (std::int64_t y = 0; y < eh; ++y)
          for (std::int64_t x = 0; x < ew; ++x) out[(ch * h + y0 + y) * w + x0 + x] = fill[ch];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Adam::Adam(ParamTable table, real beta1, real beta2, real eps, real weight_decay)
    : table_(std::move(table)), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
  for (const auto& p : table_.params()) {
    m_.push_back(Tensor::zeros_like(p.var->value()));
    v_.push_back(Tensor::zeros_like(p.var->value()));
  }
}

void Adam::step(real lr) {
  ++t_;
  const real bc1 = 1 - std::pow(beta1_, static_cast<real>(t_));
  const real bc2 = 1 - std::pow(beta2_, static_cast<real>(t_));
  const auto& params = table_.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Var& var = *params[i].var;
    const Tensor& g = var.grad();
    const bool has_grad = !g.empty();
    if (!has_grad && weight_decay_ == 0) continue;
    Tensor& w = var.mutable_value();
    real* m = m_[i].data();
    real* v = v_[i].data();
    for (std::int64_t j = 0; j < w.numel(); ++j) {
      const real gj = (has_grad ? g[j] : 0.0) + weight_decay_ * w[j];
      m[j] = beta1_ * m[j] + (1 - beta1_) * gj;
      v[j] = beta2_ * v[j] + (1 - beta2_) * gj * gj;
      w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
    }
  }
}

std::map<std::string, Tensor> Adam::state() const {
  std::map<std::string, Tensor> out;
  const auto& params = table_.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    out["adam.m." + params[i].name] = m_[i];
    out["adam.v." + params[i].name] = v_[i];
  }
  out["adam.t"] = Tensor({1}, {static_cast<real>(t_)});
  return out;
}

void Adam::load_state(const std::map<std::string, Tensor>& state) {
  auto fetch = [&](const std::string& key, const Tensor& like) -> const Tensor& {
    auto it = state.find(key);
    if (it == state.end()) throw std::runtime_error("optimizer state missing " + key);
    if (it->second.shape() != like.shape()) throw std::runtime_error("optimizer state shape mismatch for " + key);
    return it->second;
  };
  const auto& params = table_.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = fetch("adam.m." + params[i].name, m_[i]);
    v_[i] = fetch("adam.v." + params[i].name, v_[i]);
  }
  auto it = state.find("adam.t");
  if (it == state.end() || it->second.numel() != 1) throw std::runtime_error("optimizer state missing adam.t");
  t_ = static_cast<std::int64_t>(std::llround(it->second[0]));
}

// ---------------------------------------------------------------------------

ImageStore::ImageStore(int height, int width, std::size_t max_cached_bytes)
    : height_(height), width_(width), max_bytes_(max_cached_bytes) {
  if (height < 1 || width < 1) throw std::invalid_argument("ImageStore: invalid size");
}

Tensor ImageStore::get(const std::string& path) {
  if (auto it = cache_.find(path); it != cache_.end()) return it->second;
  Tensor img = load_image(path, height_, width_);
  const std::size_t bytes = static_cast<std::size_t>(img.numel()) * sizeof(real);
  if (used_ + bytes <= max_bytes_) {
    cache_.emplace(path, img);
    used_ += bytes;
  }
  return img;
}

TrainData make_train_data(const std::vector<ImageRecord>& split) {
  std::vector<int> pids;
  for (const auto& r : split)
    if (!r.junk && r.pid >= 0) pids.push_back(r.pid);
  std::sort(pids.begin(), pids.end());
  pids.erase(std::unique(pids.begin(), pids.end()), pids.end());
  std::map<int, int> label_of;
  for (std::size_t i = 0; i < pids.size(); ++i) label_of[pids[i]] = static_cast<int>(i);
  TrainData out;
  for (const auto& r : split) {
    if (r.junk || r.pid < 0) continue;
    out.paths.push_back(r.path);
    out.labels.push_back(label_of.at(r.pid));
  }
  out.num_classes = static_cast<int>(pids.size());
  if (out.num_classes == 0) throw std::invalid_argument("make_train_data: split has no identities");
  return out;
}

nlohmann::json StepRecord::to_json() const {
  return {{"step", step},
          {"epoch", epoch},
          {"lr", lr},
          {"loss", loss.total},
          {"triplet", loss.triplet},
          {"ce_global", loss.ce_global},
          {"ce_parts", loss.ce_parts},
          {"cor", loss.cor},
          {"lambda_max", lambda_max},
          {"lambda_min", lambda_min},
          {"l_or", l_or}};
}

// ---------------------------------------------------------------------------

Trainer::Trainer(FpbModel& model, const TrainConfig& cfg, const LossConfig& loss, const SpectralPenaltyConfig& spectral,
                 TrainData data, ImageStore& images, const std::string& out_dir, nlohmann::json meta)
    : model_(model),
      cfg_(cfg),
      loss_(loss),
      spectral_(spectral),
      data_(std::move(data)),
      images_(images),
      paths_{out_dir},
      meta_(std::move(meta)),
      adam_(model.param_table(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay),
      sampler_(data_.labels, cfg.identities_per_batch, cfg.instances_per_identity) {
  cfg_.validate();
  loss_.validate();
  spectral_.validate();
  if (data_.paths.size() != data_.labels.size()) throw std::invalid_argument("Trainer: paths/labels size mismatch");
  if (data_.num_classes != model.config().num_identities)
    throw std::invalid_argument("Trainer: model has " + std::to_string(model.config().num_identities) +
                                " identity classes but the data has " + std::to_string(data_.num_classes));
  if (cfg_.use_cor && !model.config().use_fpb)
    throw std::invalid_argument("Trainer: the channel orthogonality term needs the pyramid branch");

  std::array<real, 3> sum{};
  std::int64_t count = 0;
  for (const auto& path : data_.paths) {
    const Tensor img = images_.get(path);
    const auto plane = img.dim(1) * img.dim(2);
    for (int c = 0; c < 3; ++c)
      for (std::int64_t i = 0; i < plane; ++i) sum[c] += img[c * plane + i];
    count += plane;
  }
  for (int c = 0; c < 3; ++c) fill_[c] = sum[c] / static_cast<real>(count);
  fs::create_directories(paths_.checkpoint_dir());
}

void Trainer::save(const std::string& path, int epochs_done) const {
  Checkpoint ck = snapshot(model_.param_table());
  ck.optimizer = adam_.state();
  ck.meta = meta_.is_object() ? meta_ : nlohmann::json::object();
  ck.meta["epochs_done"] = epochs_done;
  ck.meta["step"] = step_;
  save_checkpoint(path, ck);
}

void Trainer::resume(const std::string& checkpoint_path) {
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  restore(model_.param_table(), ck);
  adam_.load_state(ck.optimizer);
  if (!ck.meta.contains("epochs_done") || !ck.meta.contains("step"))
    throw std::runtime_error("checkpoint has no training position: " + checkpoint_path);
  next_epoch_ = ck.meta.at("epochs_done").get<int>();
  step_ = ck.meta.at("step").get<std::int64_t>();

  // Drop log lines written after the checkpoint.
  std::ifstream in(paths_.log_file());
  std::vector<std::string> kept;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (!j.is_discarded() && j.value("step", std::int64_t(-1)) < step_) kept.push_back(line);
  }
  in.close();
  std::ofstream out(paths_.log_file(), std::ios::trunc);
  for (const auto& line : kept) out << line << '\n';
}

std::vector<StepRecord> Trainer::run(const std::function<void(const StepRecord&)>& on_step) {
  const ParamTable table = model_.param_table();
  const auto h = images_.height(), w = images_.width();
  const std::int64_t plane = 3LL * h * w;
  std::vector<StepRecord> records;
  std::ofstream log(paths_.log_file(), std::ios::app);

  for (int epoch = next_epoch_; epoch < cfg_.epochs; ++epoch) {
    const real lr = lr_at(epoch, cfg_);
    auto sampler_rng = derive_rng(cfg_.seed, static_cast<std::uint64_t>(epoch), 0);
    auto augment_rng = derive_rng(cfg_.seed, static_cast<std::uint64_t>(epoch), 1);
    PatchPool pool(static_cast<std::size_t>(cfg_.augment.patch_pool_capacity));
    auto batches = sampler_.epoch_batches(sampler_rng);
    if (cfg_.max_steps_per_epoch > 0 && static_cast<int>(batches.size()) > cfg_.max_steps_per_epoch)
      batches.resize(static_cast<std::size_t>(cfg_.max_steps_per_epoch));

    for (const auto& batch : batches) {
      const auto b = static_cast<std::int64_t>(batch.size());
      Tensor input({b, 3, h, w});
      std::vector<int> labels;
      for (std::int64_t i = 0; i < b; ++i) {
        const Tensor img = augment(images_.get(data_.paths[batch[i]]), cfg_.augment, augment_rng, &pool, fill_);
        std::copy(img.data(), img.data() + plane, input.data() + i * plane);
        labels.push_back(data_.labels[batch[i]]);
      }

      table.zero_grad();
      const ModelOutputs out = model_.forward(Var(std::move(input)), true);

      StepRecord rec;
      rec.step = step_;
      rec.epoch = epoch;
      rec.lr = lr;
      Var cor;
      if (out.pyramid) {
        EigExtremes ext;
        if (cfg_.use_cor) {
          cor = cor_penalty(out.f_h(), out.f_l(), spectral_, &ext);
        } else {
          NoGradGuard guard;
          cor_penalty(Var(out.f_h().value()), Var(out.f_l().value()), spectral_, &ext);
        }
        rec.lambda_max = ext.lambda_max.item();
        rec.lambda_min = ext.lambda_min.item();
        const real gap = rec.lambda_max - rec.lambda_min;
        rec.l_or = spectral_.beta * gap * gap;
      }

      TotalLoss total;
      try {
        total = total_loss(out.triplet_features(), out.global_logits, out.part_logits, cor, labels, loss_);
      } catch (const NonFiniteLoss& e) {
        nlohmann::json diag{{"step", step_}, {"epoch", epoch}, {"lr", lr}, {"component", e.component()},
                            {"message", e.what()}};
        std::ofstream(paths_.out_dir + "/abort.json") << diag.dump(2) << '\n';
        throw;
      }
      total.total.backward();
      adam_.step(lr);

      rec.loss = total.breakdown;
      log << rec.to_json().dump() << '\n';
      log.flush();
      if (on_step) on_step(rec);
      records.push_back(std::move(rec));
      ++step_;
    }

    next_epoch_ = epoch + 1;
    if (next_epoch_ % cfg_.checkpoint_every == 0 || next_epoch_ == cfg_.epochs) {
      char name[32];
      std::snprintf(name, sizeof(name), "/epoch_%04d.fpbckpt", next_epoch_);
      save(paths_.checkpoint_dir() + name, next_epoch_);
      save(paths_.last_checkpoint(), next_epoch_);
    }
  }
  save(paths_.final_checkpoint(), next_epoch_);
  return records;
}

}  // namespace fpb
