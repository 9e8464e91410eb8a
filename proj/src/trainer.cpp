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

#include "heliopress/trainer.hpp"

#include "heliopress/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace hp {

void TrainConfig::validate() const {
  if (lambda <= 0) throw ConfigError("lambda must be positive");
  if (lambda_perc < 0) throw ConfigError("lambda_perc must be non-negative");
  if (lambda_adv < 0) throw ConfigError("lambda_adv must be non-negative");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (crop < 64 || crop % 64 != 0)
    throw ConfigError("crop must be a positive multiple of 64");
  if (lr_init <= 0 || lr_final <= 0 || lr_final > lr_init)
    throw ConfigError("learning rates must satisfy 0 < lr_final <= lr_init");
  if (gan_start_epoch >= epochs)
    throw ConfigError("gan_start_epoch must fall inside the run");
}

const std::array<double, 7>& TrainConfig::lambda_grid() {
  static const std::array<double, 7> grid = {0.0015, 0.0035, 0.0070, 0.0125,
                                             0.0250, 0.0410, 0.0550};
  return grid;
}

double lr_schedule(int64_t step, int64_t total_steps, const TrainConfig& cfg) {
  check(total_steps >= 1 && step >= 0 && step <= total_steps,
        "lr_schedule: step outside [0, total]");
  if (step == 0) return cfg.lr_init;
  if (step == total_steps) return cfg.lr_final;
  const double t = double(step) / double(total_steps);
  return cfg.lr_init * std::pow(cfg.lr_final / cfg.lr_init, t);
}

void adam_step(std::span<double> param, std::span<const double> grad,
               std::span<double> m, std::span<double> v, int64_t t, double lr,
               double beta1, double beta2, double eps) {
  check(param.size() == grad.size() && param.size() == m.size() &&
            param.size() == v.size(),
        "adam_step: buffer sizes disagree");
  check(t >= 1, "adam_step: step index starts at 1");
  const double bc1 = 1.0 - std::pow(beta1, double(t));
  const double bc2 = 1.0 - std::pow(beta2, double(t));
  for (size_t i = 0; i < param.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

AdamOptimizer::AdamOptimizer(std::vector<ParamEntry*> params,
                             const TrainConfig& cfg)
    : beta1_(cfg.adam_beta1), beta2_(cfg.adam_beta2), eps_(cfg.adam_eps) {
  slots_.reserve(params.size());
  for (ParamEntry* p : params) {
    Slot s;
    s.p = p;
    s.m.assign(size_t(p->tensor.numel()), 0.0);
    s.v.assign(size_t(p->tensor.numel()), 0.0);
    slots_.push_back(std::move(s));
  }
}

bool AdamOptimizer::step(double lr) {
  // A parameter whose grad buffer was never touched has zero gradient.
  for (Slot& s : slots_) {
    if (!s.p->tensor.has_grad()) continue;
    for (double g : s.p->tensor.grad()) {
      if (!std::isfinite(g)) return false;
    }
  }
  ++t_;
  static const std::vector<double> kEmpty;
  for (Slot& s : slots_) {
    std::span<const double> g =
        s.p->tensor.has_grad()
            ? std::span<const double>(s.p->tensor.grad())
            : std::span<const double>();
    std::vector<double> zeros;
    if (g.empty()) {
      zeros.assign(s.m.size(), 0.0);
      g = zeros;
    }
    adam_step(s.p->tensor.value_mut(), g, s.m, s.v, t_, lr, beta1_, beta2_,
              eps_);
    switch (s.p->constraint) {
      case ParamConstraint::kBetaFloor:
        for (double& x : s.p->tensor.value_mut())
          x = std::max(x, kGdnBetaMin);
        break;
      case ParamConstraint::kNonNegative:
        for (double& x : s.p->tensor.value_mut()) x = std::max(x, 0.0);
        break;
      case ParamConstraint::kNone:
        break;
    }
  }
  return true;
}

namespace {

std::string json_number(double v) {
  if (!std::isfinite(v)) return "null";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Tensor stack_batch(const std::vector<Tensor>& crops) {
  const int64_t B = int64_t(crops.size());
  const int64_t H = crops[0].dim(2), W = crops[0].dim(3);
  Tensor out = Tensor::zeros({B, 1, H, W});
  double* d = out.value_mut().data();
  for (int64_t b = 0; b < B; ++b) {
    const auto v = crops[size_t(b)].value();
    std::copy(v.begin(), v.end(), d + b * H * W);
  }
  return out;
}

struct BatchStats {
  double bpp = 0, mse = 0, perc = 0, adv = 0;
  bool finite = true;
};

}  // namespace

std::string EpochLog::to_json() const {
  std::string s = "{";
  s += "\"epoch\":" + std::to_string(epoch);
  s += ",\"lr\":" + json_number(lr);
  s += ",\"rate_bpp\":" + json_number(rate_bpp);
  s += ",\"mse\":" + json_number(mse);
  s += ",\"perc\":" + json_number(perc);
  s += ",\"adv\":" + json_number(adv);
  s += ",\"disc_loss\":" + json_number(disc_loss);
  s += ",\"disc_acc\":" + json_number(disc_acc);
  s += ",\"eval_bpp\":" + json_number(eval_bpp);
  s += ",\"eval_mse\":" + json_number(eval_mse);
  s += ",\"eval_psnr_db\":" + json_number(eval_psnr_db);
  s += ",\"eval_msssim_db\":" + json_number(eval_msssim_db);
  s += ",\"skipped_steps\":" + std::to_string(skipped_steps);
  s += "}";
  return s;
}

TrainResult train(CodecModel& model, const std::vector<Tensor>& train_images,
                  const std::vector<Tensor>& eval_images,
                  const TrainConfig& cfg, std::ostream* log_stream) {
  cfg.validate();
  check(!train_images.empty(), "train: no training images");
  const ArchConfig& arch = model.arch();

  AdamOptimizer gen_opt(model.generator_params(), cfg);
  AdamOptimizer disc_opt(model.discriminator_params(), cfg);

  Rng shuffle_rng(mix_seed(cfg.seed, 1));
  Rng crop_rng(mix_seed(cfg.seed, 2));
  Rng noise_rng(mix_seed(cfg.seed, 3));

  const int64_t n = int64_t(train_images.size());
  const int64_t batches_per_epoch =
      (n + cfg.batch_size - 1) / cfg.batch_size;
  const int64_t total_steps =
      std::max<int64_t>(int64_t(cfg.epochs) * batches_per_epoch, 1);

  TrainResult result;
  int64_t global_step = 0;
  int non_finite_run = 0;

  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool gan_active =
        cfg.gan_enabled && epoch >= cfg.effective_gan_start();
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());

    EpochLog log;
    log.epoch = epoch + 1;
    log.lr = lr_schedule(global_step, total_steps, cfg);
    double acc_bpp = 0, acc_mse = 0, acc_perc = 0, acc_adv = 0;
    double acc_disc = 0, acc_disc_acc = 0;
    int64_t counted = 0, disc_counted = 0;

    for (int64_t b = 0; b < batches_per_epoch; ++b) {
      const int64_t lo = b * cfg.batch_size;
      const int64_t hi = std::min(lo + cfg.batch_size, n);
      std::vector<Tensor> crops;
      crops.reserve(size_t(hi - lo));
      for (int64_t i = lo; i < hi; ++i) {
        crops.push_back(
            random_crop(train_images[size_t(order[size_t(i)])], cfg.crop,
                        crop_rng));
      }
      Tensor xb = stack_batch(crops);
      const double lr = lr_schedule(global_step, total_steps, cfg);
      ++global_step;

      double batch_disc_loss = 0, batch_disc_acc = 0;
      Tensor x_recon_detached, y_cond_detached;
      BatchStats stats;
      {
        Tape tape;
        Tensor y = analysis_transform(xb, model);
        Tensor z = hyper_analysis(y, model);
        Tensor z_tilde = quantize_noise(z, noise_rng);
        Tensor ctx = hyper_synthesis(z_tilde, model);
        Tensor y_tilde = quantize_noise(y, noise_rng);

        std::vector<Tensor> slices = split_slices(y_tilde, arch);
        std::vector<Tensor> likelihoods;
        for (int i = 0; i < arch.n_slices; ++i) {
          GaussianParams gp = slice_conditioning(
              ctx, std::span<const Tensor>(slices.data(), size_t(i)), model,
              i);
          likelihoods.push_back(
              gaussian_likelihood(slices[size_t(i)], gp,
                                  /*absorb_tails=*/false));
        }
        likelihoods.push_back(
            z_likelihood(z_tilde, model, /*absorb_tails=*/false));

        Tensor r_bits = rate_bits(likelihoods);
        const double pixels = double(xb.dim(0)) * double(cfg.crop) *
                              double(cfg.crop);
        Tensor r_bpp = mul_scalar(r_bits, 1.0 / pixels);

        Tensor x_recon = synthesis_transform(y_tilde, model);
        Tensor disc_out;
        if (gan_active) {
          y_cond_detached = y_tilde.detach();
          disc_out = discriminator_forward(x_recon, y_cond_detached, model);
        }
        DistortionParts d = distortion_loss(
            xb, x_recon, disc_out, cfg.effective_lambda_recon(),
            cfg.lambda_perc, gan_active ? cfg.lambda_adv : 0.0);
        Tensor loss = rd_objective(r_bpp, d.total, cfg.lambda);

        if (!std::isfinite(loss.item())) {
          ++non_finite_run;
          ++log.skipped_steps;
          if (non_finite_run >= 2) {
            throw DivergenceError(
                "training diverged: non-finite loss in two consecutive "
                "batches (epoch " +
                std::to_string(epoch + 1) + ")");
          }
          model.zero_grads();
          continue;
        }
        non_finite_run = 0;

        tape.backward(loss);
        stats.bpp = r_bpp.item();
        stats.mse = d.mse.item();
        stats.perc = d.perc.defined() ? d.perc.item() : 0.0;
        stats.adv = d.adv.defined() ? d.adv.item() : 0.0;
        if (gan_active) x_recon_detached = x_recon.detach();
      }

      if (!gen_opt.step(lr)) ++log.skipped_steps;
      model.zero_grads();

      acc_bpp += stats.bpp;
      acc_mse += stats.mse;
      acc_perc += stats.perc;
      acc_adv += stats.adv;
      ++counted;

      if (gan_active) {
        Tape tape;
        Tensor d_real = discriminator_forward(xb, y_cond_detached, model);
        Tensor d_fake =
            discriminator_forward(x_recon_detached, y_cond_detached, model);
        Tensor dl = discriminator_loss(d_real, d_fake);
        batch_disc_loss = dl.item();
        if (std::isfinite(batch_disc_loss)) {
          tape.backward(dl);
          if (!disc_opt.step(lr)) ++log.skipped_steps;
        } else {
          ++log.skipped_steps;
        }
        model.zero_grads();

        int64_t correct = 0, total = 0;
        for (double v : d_real.value()) {
          correct += v > 0.5 ? 1 : 0;
          ++total;
        }
        for (double v : d_fake.value()) {
          correct += v <= 0.5 ? 1 : 0;
          ++total;
        }
        batch_disc_acc = double(correct) / double(total);
        acc_disc += batch_disc_loss;
        acc_disc_acc += batch_disc_acc;
        ++disc_counted;
      }
    }

    if (counted > 0) {
      log.rate_bpp = acc_bpp / double(counted);
      log.mse = acc_mse / double(counted);
      log.perc = acc_perc / double(counted);
      log.adv = acc_adv / double(counted);
    }
    if (disc_counted > 0) {
      log.disc_loss = acc_disc / double(disc_counted);
      log.disc_acc = acc_disc_acc / double(disc_counted);
    }

    // Held-out evaluation with hard rounding (no noise).
    if (!eval_images.empty()) {
      GradPause pause;
      double e_bpp = 0, e_mse = 0, e_psnr = 0, e_ms = 0;
      for (const Tensor& img : eval_images) {
        Tensor padded = pad_to_multiple(img, 64);
        EvalResult er = eval_forward(model, padded);
        Tensor recon = crop_spatial(er.recon, img.dim(2), img.dim(3));
        e_bpp += bpp(er.rate_bits, padded.dim(2), padded.dim(3));
        e_mse += mse255(img, recon);
        e_psnr += psnr(img, recon);
        e_ms += msssim_db(ms_ssim(img, recon, /*allow_reduced_scales=*/true));
      }
      const double m = double(eval_images.size());
      log.eval_bpp = e_bpp / m;
      log.eval_mse = e_mse / m;
      log.eval_psnr_db = e_psnr / m;
      log.eval_msssim_db = e_ms / m;
    }

    if (log_stream != nullptr) {
      (*log_stream) << log.to_json() << "\n";
    }
    result.logs.push_back(log);
  }
  return result;
}

}  // namespace hp
