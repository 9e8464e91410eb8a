// Copyright (c) the Heliopress Authors. All rights reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef HELIOPRESS_TRAINER_HPP_
#define HELIOPRESS_TRAINER_HPP_

#include <array>
#include <ostream>
#include <string>
#include <vector>

#include "heliopress/codec.hpp"
#include "heliopress/metrics.hpp"

namespace hp {

struct TrainConfig {
  double lambda = 0.0250;
  double lambda_recon = -1.0;  // < 0: use lambda
  double lambda_perc = 1.0;
  double lambda_adv = 0.1;
  int epochs = 30;
  int batch_size = 8;
  int crop = 64;
  double lr_init = 1e-4;
  double lr_final = 1.2e-6;
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
  uint64_t seed = 1;
  bool gan_enabled = false;
  int gan_start_epoch = -1;  // < 0: halfway

  double effective_lambda_recon() const {
    return lambda_recon < 0 ? lambda : lambda_recon;
  }
  int effective_gan_start() const {
    return gan_start_epoch < 0 ? epochs / 2 : gan_start_epoch;
  }
  void validate() const;

  // The published rate-distortion grid.
  static const std::array<double, 7>& lambda_grid();
};

// Exponential interpolation from lr_init to lr_final; endpoints exact,
// monotone non-increasing.
double lr_schedule(int64_t step, int64_t total_steps, const TrainConfig& cfg);

// Standard Adam update with bias correction on one parameter buffer.
void adam_step(std::span<double> param, std::span<const double> grad,
               std::span<double> m, std::span<double> v, int64_t t, double lr,
               double beta1, double beta2, double eps);

// Adam over a parameter group.  A step with any non-finite gradient is
// skipped entirely (no state advances).  Constrained parameters (GDN beta
// and gamma) are projected back after every applied step.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<ParamEntry*> params, const TrainConfig& cfg);
  bool step(double lr);
  int64_t steps_taken() const { return t_; }

 private:
  struct Slot {
    ParamEntry* p;
    std::vector<double> m, v;
  };
  std::vector<Slot> slots_;
  int64_t t_ = 0;
  double beta1_, beta2_, eps_;
};

struct EpochLog {
  int epoch = 0;
  double lr = 0;
  double rate_bpp = 0;
  double mse = 0;  // 255^2-scaled train MSE
  double perc = 0;
  double adv = 0;
  double disc_loss = 0;
  double disc_acc = 0;
  double eval_bpp = 0;
  double eval_mse = 0;
  double eval_psnr_db = 0;
  double eval_msssim_db = 0;
  int skipped_steps = 0;

  std::string to_json() const;  // one JSONL record
};

struct TrainResult {
  std::vector<EpochLog> logs;
};

// End-to-end optimization: per batch, a noise-relaxed forward pass, the
// rate-distortion objective, backprop and a generator/entropy Adam step;
// once the GAN is active, an alternating discriminator step on detached
// reconstructions.  Aborts with DivergenceError after two consecutive
// non-finite losses.  Fully deterministic under (model seed, cfg.seed).
TrainResult train(CodecModel& model, const std::vector<Tensor>& train_images,
                  const std::vector<Tensor>& eval_images,
                  const TrainConfig& cfg, std::ostream* log_stream = nullptr);

}  // namespace hp

#endif  // HELIOPRESS_TRAINER_HPP_
