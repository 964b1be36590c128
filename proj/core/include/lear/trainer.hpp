#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lear/backbone.hpp"
#include "lear/cmg.hpp"
#include "lear/guidance.hpp"
#include "lear/objectives.hpp"
#include "lear/xga.hpp"

namespace lear {

/// All models of one LEAR run. The backbone is pre-trained and frozen; the
/// generator/discriminator learn in Phase 1, the attention bank in Phase 2.
struct LearModels {
  BackboneModel<float> backbone;
  GeneratorModel<float> generator;
  DiscriminatorModel<float> discriminator;
  XgaBank<float> xga;
  bool xga_built = false;

  /// Builds generator/discriminator (and nothing else) for a frozen backbone.
  void build_cmg(Rng& rng);
  void build_xga(int ratio, Rng& rng);
};

enum class EncoderMode { plain, xga };

struct IterationState {
  int k = 1;
  EncoderMode encoder_mode = EncoderMode::plain;
  double val_accuracy = 0;
  std::uint64_t theta_checksum = 0;
  std::uint64_t phi_checksum = 0;
  std::uint64_t psi_checksum = 0;
  std::uint64_t omega_checksum = 0;
  std::string cmg_checkpoint, xga_checkpoint;
};

struct CmgPhaseResult {
  std::vector<LossBreakdown> steps;
};

struct XgaStepLog {
  std::int64_t step = 0;
  double ce = 0, omega = 0, total = 0;
};

struct XgaPhaseResult {
  std::vector<XgaStepLog> steps;
  std::vector<double> epoch_mean_loss;
};

/// Phase 1: alternating generator/discriminator least-squares updates over
/// uniformly drawn target conditions. With use_xga_encoder the pyramid (and
/// the reasoning evaluator) come from the attention-injected model, with the
/// attention weights frozen. Aborts with DivergenceError on non-finite loss.
CmgPhaseResult train_cmg_phase(LearModels& models, const Dataset& dataset,
                               const HyperParams& params, bool use_xga_encoder,
                               const std::string& loss_csv_path = "");

/// Phase 2: trains only the attention parameters against cross-entropy plus
/// the guidance penalty. Guidance maps are generated per sample from the
/// current CMG (toward the first and last class) and cached per epoch.
XgaPhaseResult train_xga_phase(LearModels& models, const Dataset& dataset,
                               const HyperParams& params, bool use_xga_encoder_for_maps,
                               const std::string& loss_csv_path = "");

/// Runs Phase 1 then Phase 2 n_iters times. From the second iteration the
/// generator consumes the attention-injected encoder's pyramid. Parameters
/// are warm-started across iterations unless cold_start is set. When run_dir
/// is nonempty, checkpoints and per-phase loss logs are persisted there.
std::vector<IterationState> iterate_lear(LearModels& models, const Dataset& dataset,
                                         const HyperParams& params, int n_iters,
                                         const std::string& run_dir = "",
                                         bool cold_start = false);

struct AugmentResult {
  BackboneModel<float> finetuned;
  std::size_t synthesized_count = 0;
  std::vector<EpochMetrics> history;
};

/// Baseline reinforcement: synthesize every non-true target transform for
/// each training sample (iteration-1 map definition) and fine-tune a copy of
/// the backbone on original + synthesized data. The original backbone is
/// left untouched.
AugmentResult augment_finetune(LearModels& models, const Dataset& dataset,
                               const HyperParams& params, int finetune_epochs);

/// Validation accuracy of the (optionally attention-injected) model on a
/// seed-fixed 10% split.
double validation_accuracy(LearModels& models, const Dataset& dataset,
                           const HyperParams& params, bool use_xga);

/// Batched map generation in inference mode.
Tensor<float> generate_map_batch(LearModels& models, const Tensor<float>& x,
                                 const Tensor<float>& t_rows, bool use_xga);

/// Per-sample guidance map (toward the first and last class).
Tensor<float> guidance_for_sample(LearModels& models, const Tensor<float>& image,
                                  int class_count, bool use_xga);

std::uint64_t theta_checksum(LearModels& models);
std::uint64_t phi_checksum(LearModels& models);
std::uint64_t psi_checksum(LearModels& models);
std::uint64_t omega_checksum(LearModels& models);

}  // namespace lear
