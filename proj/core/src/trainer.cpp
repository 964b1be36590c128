#include "lear/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "lear/checkpoint.hpp"
#include "lear/errors.hpp"

namespace lear {

namespace fs = std::filesystem;

void LearModels::build_cmg(Rng& rng) {
  generator.build(backbone.spec, backbone.spec.class_count, rng);
  discriminator.build(backbone.spec.domain, backbone.spec.input_spatial, backbone.spec.in_ch,
                      rng);
}

void LearModels::build_xga(int ratio, Rng& rng) {
  xga.build(backbone.spec, ratio, rng);
  xga_built = true;
}

std::uint64_t theta_checksum(LearModels& m) {
  ModuleState<float> ms;
  m.backbone.collect(ms);
  return checksum(ms);
}
std::uint64_t phi_checksum(LearModels& m) {
  ModuleState<float> ms;
  m.generator.collect(ms);
  return checksum(ms);
}
std::uint64_t psi_checksum(LearModels& m) {
  ModuleState<float> ms;
  m.discriminator.collect(ms);
  return checksum(ms);
}
std::uint64_t omega_checksum(LearModels& m) {
  if (!m.xga_built) return 0;
  ModuleState<float> ms;
  m.xga.collect(ms);
  return checksum(ms);
}

namespace {

std::vector<std::size_t> shuffled_indices(const std::vector<std::size_t>& base, Rng& rng) {
  std::vector<std::size_t> order = base;
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.uniform_int(i)]);
  return order;
}

Tensor<float> sample_targets(int n, int classes, Rng& rng) {
  Tensor<float> rows({n, classes});
  for (int i = 0; i < n; ++i) {
    auto t = sample_uniform_target(classes, rng);
    for (int c = 0; c < classes; ++c)
      rows[static_cast<std::int64_t>(i) * classes + c] = static_cast<float>(t.probs[static_cast<std::size_t>(c)]);
  }
  return rows;
}

}  // namespace

CmgPhaseResult train_cmg_phase(LearModels& models, const Dataset& dataset,
                               const HyperParams& params, bool use_xga_encoder,
                               const std::string& loss_csv_path) {
  if (dataset.empty()) throw ArgumentError("train_cmg_phase: empty dataset");
  if (use_xga_encoder && !models.xga_built)
    throw MissingCheckpointError("train_cmg_phase: attention requested but not built");

  ModuleState<float> gen_ms, disc_ms, xga_ms;
  models.generator.collect(gen_ms);
  models.discriminator.collect(disc_ms);
  if (models.xga_built) models.xga.collect(xga_ms);

  // Phase 1 trains phi and psi only
  set_trainable(xga_ms, false);
  models.xga.record_attention = false;

  Adam<float> opt_g(gen_ms.params, static_cast<float>(params.adam_beta1),
                    static_cast<float>(params.adam_beta2));
  Adam<float> opt_d(disc_ms.params, static_cast<float>(params.adam_beta1),
                    static_cast<float>(params.adam_beta2));

  LayerHook<float>* hook = use_xga_encoder ? &models.xga : nullptr;
  Rng root(static_cast<std::uint64_t>(params.seed) ^ 0xC31A0001ULL);
  std::vector<std::size_t> base(dataset.size());
  for (std::size_t i = 0; i < base.size(); ++i) base[i] = i;

  std::optional<LossCsvWriter> csv;
  if (!loss_csv_path.empty()) csv.emplace(loss_csv_path);

  CmgPhaseResult result;
  std::int64_t step = 0;
  const std::size_t B = static_cast<std::size_t>(params.batch_size);

  for (int epoch = 0; epoch < params.epochs; ++epoch) {
    Rng erng = root.fork(static_cast<std::uint64_t>(epoch) + 1);
    auto order = shuffled_indices(base, erng);
    const float lr_g =
        static_cast<float>(params.lr_g * std::pow(params.decay, static_cast<double>(epoch)));
    const float lr_d =
        static_cast<float>(params.lr_d * std::pow(params.decay, static_cast<double>(epoch)));

    for (std::size_t at = 0; at < order.size(); at += B) {
      std::vector<std::size_t> chunk(order.begin() + static_cast<std::ptrdiff_t>(at),
                                     order.begin() + static_cast<std::ptrdiff_t>(
                                                         std::min(at + B, order.size())));
      auto x = stack_batch(dataset, chunk);
      auto t_rows = sample_targets(static_cast<int>(chunk.size()), dataset.num_classes, erng);

      // --- generator update (discriminator weights frozen) ---
      set_trainable(disc_ms, false);
      opt_g.zero_grad();
      double v_cyc, v_advg, v_tv, v_l1, v_l2, v_cls;
      Tensor<float> x_tilde_val, x_prime_val;
      {
        Graph<float> g;
        g.train_mode = true;
        g.rng = &erng;
        auto xin = g.constant(x);
        auto t = g.constant(t_rows);
        auto cyc = cycle_reconstruct(g, models.backbone, hook, models.generator, xin, t);
        auto d1 = models.discriminator.forward(g, cyc.x_tilde);
        auto d2 = models.discriminator.forward(g, cyc.x_prime);

        auto l_advg = loss_adv_g(g, d1, d2);
        auto l_cyc = loss_cyc(g, xin, cyc.x_prime);
        auto l_cls = loss_cls(g, t, cyc.out_x_tilde.probs);
        auto l_tv = loss_tv(g, cyc.x_tilde);
        auto l_l1 = map_l1(g, cyc.map1);
        auto l_l2 = map_l2(g, cyc.map1);

        auto obj = g.add(
            g.add(g.scale(l_advg, static_cast<float>(params.lambda3)),
                  g.scale(l_cyc, static_cast<float>(params.lambda5))),
            g.add(g.add(g.scale(l_cls, static_cast<float>(params.lambda6)),
                        g.scale(l_tv, static_cast<float>(params.lambda7))),
                  g.add(g.scale(l_l1, static_cast<float>(params.lambda1)),
                        g.scale(l_l2, static_cast<float>(params.lambda2)))));
        g.backward(obj);

        v_cyc = l_cyc->value[0];
        v_advg = l_advg->value[0];
        v_tv = l_tv->value[0];
        v_l1 = l_l1->value[0];
        v_l2 = l_l2->value[0];
        v_cls = l_cls->value[0];
        x_tilde_val = cyc.x_tilde->value;
        x_prime_val = cyc.x_prime->value;
      }
      opt_g.step(lr_g);
      set_trainable(disc_ms, true);

      // --- discriminator update (generator outputs detached) ---
      opt_d.zero_grad();
      double v_advd;
      {
        Graph<float> g;
        g.train_mode = true;
        g.rng = &erng;
        auto d_real = models.discriminator.forward(g, g.constant(x));
        auto d_f1 = models.discriminator.forward(g, g.constant(x_tilde_val));
        auto d_f2 = models.discriminator.forward(g, g.constant(x_prime_val));
        auto l_advd =
            loss_adv_d(g, d_real, d_f1, d_f2, static_cast<float>(params.label_smoothing));
        auto obj = g.scale(l_advd, static_cast<float>(params.lambda4));
        g.backward(obj);
        v_advd = l_advd->value[0];
      }
      opt_d.step(lr_d);

      auto breakdown = loss_cmg_total(v_cyc, v_advg, v_advd, v_tv, v_l1, v_l2, v_cls, params);
      if (!std::isfinite(breakdown.total))
        throw DivergenceError("train_cmg_phase: non-finite loss at step " +
                              std::to_string(step) + " (cyc=" + std::to_string(v_cyc) +
                              ", adv_g=" + std::to_string(v_advg) +
                              ", adv_d=" + std::to_string(v_advd) + ")");
      if (csv) csv->row(step, breakdown);
      result.steps.push_back(breakdown);
      ++step;
    }
  }
  return result;
}

Tensor<float> generate_map_batch(LearModels& models, const Tensor<float>& x,
                                 const Tensor<float>& t_rows, bool use_xga) {
  Graph<float> g;
  g.grad_enabled = false;
  g.train_mode = false;
  LayerHook<float>* hook = use_xga && models.xga_built ? &models.xga : nullptr;
  models.xga.record_attention = false;
  auto r = generate_map(g, models.backbone, hook, models.generator, g.constant(x),
                        g.constant(t_rows));
  return r.map->value;
}

Tensor<float> guidance_for_sample(LearModels& models, const Tensor<float>& image,
                                  int class_count, bool use_xga) {
  Shape batched = {1};
  for (auto d : image.shape()) batched.push_back(d);
  Tensor<float> x = image.reshaped(batched);
  Tensor<float> t_first({1, class_count}), t_last({1, class_count});
  t_first[0] = 1.0f;
  t_last[class_count - 1] = 1.0f;
  auto m_first = generate_map_batch(models, x, t_first, use_xga);
  auto m_last = generate_map_batch(models, x, t_last, use_xga);
  Shape unbatched(m_first.shape().begin() + 1, m_first.shape().end());
  return build_guidance(m_first.reshaped(unbatched), m_last.reshaped(unbatched));
}

XgaPhaseResult train_xga_phase(LearModels& models, const Dataset& dataset,
                               const HyperParams& params, bool use_xga_encoder_for_maps,
                               const std::string& loss_csv_path) {
  if (dataset.empty()) throw ArgumentError("train_xga_phase: empty dataset");
  if (!models.xga_built) {
    Rng xrng(static_cast<std::uint64_t>(params.seed) ^ 0x0A0A0003ULL);
    models.build_xga(params.r, xrng);
  }

  ModuleState<float> gen_ms, disc_ms, xga_ms;
  models.generator.collect(gen_ms);
  models.discriminator.collect(disc_ms);
  models.xga.collect(xga_ms);

  // Phase 2 trains omega only
  set_trainable(gen_ms, false);
  set_trainable(disc_ms, false);
  set_trainable(xga_ms, true);

  Adam<float> opt(xga_ms.params, static_cast<float>(params.adam_beta1),
                  static_cast<float>(params.adam_beta2));

  const auto layer_extents = models.backbone.spec.trace_spatial_prepool();
  const int L = static_cast<int>(layer_extents.size());
  const int K = dataset.num_classes;

  // per-layer, per-sample resized guidance cache
  std::vector<std::vector<Tensor<float>>> cache(static_cast<std::size_t>(L));
  auto refresh_cache = [&]() {
    for (auto& layer : cache) layer.assign(dataset.size(), Tensor<float>());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      auto guide = guidance_for_sample(models, dataset.samples[i].image.values, K,
                                       use_xga_encoder_for_maps);
      for (int l = 0; l < L; ++l)
        cache[static_cast<std::size_t>(l)][i] =
            resize_guidance(guide, layer_extents[static_cast<std::size_t>(l)]);
    }
  };

  Rng root(static_cast<std::uint64_t>(params.seed) ^ 0x0A0A0002ULL);
  std::vector<std::size_t> base(dataset.size());
  for (std::size_t i = 0; i < base.size(); ++i) base[i] = i;

  std::optional<std::ofstream> csv;
  if (!loss_csv_path.empty()) {
    csv.emplace(loss_csv_path);
    if (!*csv) throw DataError("cannot open loss log: " + loss_csv_path);
    *csv << "step,ce,omega,total\n";
  }

  XgaPhaseResult result;
  std::int64_t step = 0;
  const std::size_t B = static_cast<std::size_t>(params.batch_size);

  for (int epoch = 0; epoch < params.epochs; ++epoch) {
    // iteration >= 2: the maps move with omega, so refresh every epoch
    if (epoch == 0 || use_xga_encoder_for_maps) refresh_cache();

    Rng erng = root.fork(static_cast<std::uint64_t>(epoch) + 1);
    auto order = shuffled_indices(base, erng);
    const float lr =
        static_cast<float>(params.lr_xga * std::pow(params.decay, static_cast<double>(epoch)));

    double epoch_sum = 0;
    std::size_t epoch_n = 0;
    for (std::size_t at = 0; at < order.size(); at += B) {
      std::vector<std::size_t> chunk(order.begin() + static_cast<std::ptrdiff_t>(at),
                                     order.begin() + static_cast<std::ptrdiff_t>(
                                                         std::min(at + B, order.size())));
      auto x = stack_batch(dataset, chunk);
      auto y = stack_labels(dataset, chunk);

      opt.zero_grad();
      Graph<float> g;
      g.train_mode = true;
      g.rng = &erng;
      models.xga.record_attention = true;
      auto r = models.backbone.forward(g, g.constant(x), &models.xga);
      models.xga.record_attention = false;

      std::vector<Var<float>> abar;
      std::vector<Tensor<float>> guides;
      for (int l = 0; l < L; ++l) {
        abar.push_back(compress_attention(g, models.xga.last_attention[static_cast<std::size_t>(l)]));
        std::vector<const Tensor<float>*> per_sample;
        for (auto idx : chunk) per_sample.push_back(&cache[static_cast<std::size_t>(l)][idx]);
        guides.push_back(stack_images(per_sample));
      }
      auto omega = xga_penalty(g, abar, guides);
      auto ce = loss_cls(g, g.constant(y), r.out.probs);
      auto loss = g.add(ce, g.scale(omega, static_cast<float>(params.lambda8)));
      g.backward(loss);
      opt.step(lr);

      XgaStepLog row;
      row.step = step;
      row.ce = ce->value[0];
      row.omega = omega->value[0];
      row.total = loss->value[0];
      if (!std::isfinite(row.total))
        throw DivergenceError("train_xga_phase: non-finite loss at step " +
                              std::to_string(step));
      if (csv) {
        csv->precision(10);
        *csv << row.step << ',' << row.ce << ',' << row.omega << ',' << row.total << '\n';
      }
      result.steps.push_back(row);
      epoch_sum += row.total * static_cast<double>(chunk.size());
      epoch_n += chunk.size();
      ++step;
    }
    result.epoch_mean_loss.push_back(epoch_sum / static_cast<double>(epoch_n));
  }

  set_trainable(gen_ms, true);
  set_trainable(disc_ms, true);
  return result;
}

double validation_accuracy(LearModels& models, const Dataset& dataset,
                           const HyperParams& params, bool use_xga) {
  std::vector<std::size_t> train_idx, val_idx;
  split_train_val(dataset.size(), 0.1, static_cast<std::uint64_t>(params.seed), train_idx,
                  val_idx);
  const auto& idx = val_idx.empty() ? train_idx : val_idx;
  LayerHook<float>* hook = use_xga && models.xga_built ? &models.xga : nullptr;
  std::size_t hits = 0;
  const std::size_t B = 64;
  for (std::size_t at = 0; at < idx.size(); at += B) {
    std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(at),
                                   idx.begin() + static_cast<std::ptrdiff_t>(
                                                     std::min(at + B, idx.size())));
    auto probs = models.backbone.predict(stack_batch(dataset, chunk), hook);
    const std::int64_t C = probs.dim(1);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      std::int64_t best = 0;
      for (std::int64_t c = 1; c < C; ++c)
        if (probs[static_cast<std::int64_t>(i) * C + c] >
            probs[static_cast<std::int64_t>(i) * C + best])
          best = c;
      hits += best == dataset.samples[chunk[i]].label.arg_max();
    }
  }
  return static_cast<double>(hits) / static_cast<double>(idx.size());
}

std::vector<IterationState> iterate_lear(LearModels& models, const Dataset& dataset,
                                         const HyperParams& params, int n_iters,
                                         const std::string& run_dir, bool cold_start) {
  if (n_iters < 1) throw ArgumentError("iterate_lear: n_iters must be >= 1");
  const std::uint64_t theta0 = theta_checksum(models);

  if (!run_dir.empty()) {
    fs::create_directories(fs::path(run_dir) / "checkpoints");
    fs::create_directories(fs::path(run_dir) / "logs");
    fs::create_directories(fs::path(run_dir) / "reports");
    ModuleState<float> bb;
    models.backbone.collect(bb);
    Manifest m;
    m.architecture_id = models.backbone.spec.architecture_id();
    m.class_count = models.backbone.spec.class_count;
    m.seed = params.seed;
    save_checkpoint((fs::path(run_dir) / "checkpoints" / "backbone").string(), bb, m);
  }

  std::vector<IterationState> history;
  for (int k = 1; k <= n_iters; ++k) {
    if (cold_start && k > 1) {
      Rng rng(static_cast<std::uint64_t>(params.seed) ^ (0xC01DULL + static_cast<std::uint64_t>(k)));
      models.build_cmg(rng);
      if (models.xga_built) models.build_xga(params.r, rng);
    }

    IterationState st;
    st.k = k;
    st.encoder_mode = k == 1 ? EncoderMode::plain : EncoderMode::xga;
    const bool use_xga_enc = k >= 2 && models.xga_built;

    const std::uint64_t omega_before = omega_checksum(models);
    std::string cmg_log, xga_log;
    if (!run_dir.empty()) {
      cmg_log = (fs::path(run_dir) / "logs" / ("cmg_" + std::to_string(k) + ".csv")).string();
      xga_log = (fs::path(run_dir) / "logs" / ("xga_" + std::to_string(k) + ".csv")).string();
    }
    train_cmg_phase(models, dataset, params, use_xga_enc, cmg_log);
    if (omega_checksum(models) != omega_before)
      throw Error("iterate_lear: attention parameters moved during Phase 1");

    const std::uint64_t phi_after1 = phi_checksum(models);
    const std::uint64_t psi_after1 = psi_checksum(models);
    train_xga_phase(models, dataset, params, use_xga_enc, xga_log);
    if (phi_checksum(models) != phi_after1 || psi_checksum(models) != psi_after1)
      throw Error("iterate_lear: generator/discriminator moved during Phase 2");
    if (theta_checksum(models) != theta0)
      throw Error("iterate_lear: frozen backbone parameters changed");

    st.theta_checksum = theta_checksum(models);
    st.phi_checksum = phi_checksum(models);
    st.psi_checksum = psi_checksum(models);
    st.omega_checksum = omega_checksum(models);
    st.val_accuracy = validation_accuracy(models, dataset, params, true);

    if (!run_dir.empty()) {
      ModuleState<float> cmg_ms;
      models.generator.collect(cmg_ms);
      models.discriminator.collect(cmg_ms);
      Manifest mc;
      mc.architecture_id = models.generator.architecture_id();
      mc.class_count = models.backbone.spec.class_count;
      mc.seed = params.seed;
      st.cmg_checkpoint =
          (fs::path(run_dir) / "checkpoints" / ("cmg_" + std::to_string(k))).string();
      save_checkpoint(st.cmg_checkpoint, cmg_ms, mc);

      ModuleState<float> xga_ms;
      models.xga.collect(xga_ms);
      Manifest mx;
      mx.architecture_id = models.xga.architecture_id(models.backbone.spec);
      mx.class_count = models.backbone.spec.class_count;
      mx.seed = params.seed;
      mx.metrics["val_accuracy"] = st.val_accuracy;
      st.xga_checkpoint =
          (fs::path(run_dir) / "checkpoints" / ("xga_" + std::to_string(k))).string();
      save_checkpoint(st.xga_checkpoint, xga_ms, mx);
    }
    history.push_back(st);
  }
  return history;
}

AugmentResult augment_finetune(LearModels& models, const Dataset& dataset,
                               const HyperParams& params, int finetune_epochs) {
  if (dataset.empty()) throw ArgumentError("augment_finetune: empty dataset");
  const int K = dataset.num_classes;

  Dataset combined = dataset;
  AugmentResult result;

  // synthesize every non-true target transform with the plain-encoder maps
  const std::size_t B = 32;
  for (int target = 0; target < K; ++target) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < dataset.size(); ++i)
      if (dataset.samples[i].label.arg_max() != target) idx.push_back(i);
    for (std::size_t at = 0; at < idx.size(); at += B) {
      std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(at),
                                     idx.begin() + static_cast<std::ptrdiff_t>(
                                                       std::min(at + B, idx.size())));
      auto x = stack_batch(dataset, chunk);
      Tensor<float> t_rows({static_cast<std::int64_t>(chunk.size()), K});
      for (std::size_t i = 0; i < chunk.size(); ++i)
        t_rows[static_cast<std::int64_t>(i) * K + target] = 1.0f;
      auto maps = generate_map_batch(models, x, t_rows, false);
      const std::int64_t per = maps.numel() / static_cast<std::int64_t>(chunk.size());
      for (std::size_t i = 0; i < chunk.size(); ++i) {
        LabeledSample s;
        s.image.domain = dataset.domain;
        Shape sample_shape(maps.shape().begin() + 1, maps.shape().end());
        s.image.values = Tensor<float>(sample_shape);
        for (std::int64_t j = 0; j < per; ++j)
          s.image.values[j] =
              x[static_cast<std::int64_t>(i) * per + j] + maps[static_cast<std::int64_t>(i) * per + j];
        s.label = one_hot(target, K);
        s.id = dataset.samples[chunk[i]].id + "_to" + std::to_string(target);
        combined.samples.push_back(std::move(s));
        ++result.synthesized_count;
      }
    }
  }

  // fine-tune a copy; the original backbone is untouched
  result.finetuned.spec = models.backbone.spec;
  Rng rng(static_cast<std::uint64_t>(params.seed) ^ 0xA0B0C0D0ULL);
  result.finetuned.build(rng);
  {
    ModuleState<float> src, dst;
    models.backbone.collect(src);
    result.finetuned.collect(dst);
    for (std::size_t i = 0; i < src.params.size(); ++i)
      dst.params[i]->value = src.params[i]->value.clone();
    for (std::size_t i = 0; i < src.state.size(); ++i)
      *dst.state[i].second = src.state[i].second->clone();
    set_trainable(dst, true);
  }

  HyperParams ft = params;
  ft.epochs = finetune_epochs;
  result.history = train_backbone(result.finetuned, combined, ft).history;
  return result;
}

}  // namespace lear
