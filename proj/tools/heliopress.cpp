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

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "heliopress/codec.hpp"
#include "heliopress/data.hpp"
#include "heliopress/metrics.hpp"
#include "heliopress/selftest.hpp"
#include "heliopress/trainer.hpp"
#include "heliopress/util.hpp"

namespace fs = std::filesystem;

namespace {

// Exit codes: 0 ok, 1 internal/selftest failure, 2 config error, 3 data
// error, 4 divergence abort, 5 model-digest mismatch, 6 corrupt stream.
constexpr int kOk = 0, kFail = 1, kConfig = 2, kData = 3, kDiverged = 4,
              kWrongModel = 5, kCorrupt = 6;

struct TrainCli {
  std::string data_dir;
  int synthetic = 0;
  int size = 64;
  std::string out_model = "model.sdw";
  std::string out_log;
  hp::TrainConfig cfg;
};

void echo_config(const CLI::App& sub) {
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_name().rfind("--", 0) != 0) continue;
    std::string value;
    if (!opt->results().empty()) {
      for (const auto& r : opt->results()) {
        if (!value.empty()) value += ",";
        value += r;
      }
    } else {
      value = opt->get_default_str();
      if (value.empty()) value = "<unset>";
    }
    std::cout << "config " << opt->get_name().substr(2) << "=" << value
              << "\n";
  }
}

hp::CodecModel load_model(const std::string& path) {
  try {
    return hp::CodecModel::load(path);
  } catch (const hp::DecodeError& e) {
    // A broken weight file is a data problem, not a corrupt bitstream.
    throw hp::IoError(std::string("model file: ") + e.what());
  }
}

// Loads train/eval image sets from either --synthetic or a timestamped
// data directory (January-August trains, September-December evaluates).
void load_training_data(const TrainCli& t, std::vector<hp::Tensor>* train,
                        std::vector<hp::Tensor>* eval_set) {
  if (t.synthetic > 0) {
    std::vector<hp::Tensor> all =
        hp::synthetic_sun(t.cfg.seed, t.size, t.synthetic);
    const size_t eval_n =
        std::max<size_t>(1, std::min<size_t>(16, all.size() / 10));
    const size_t train_n = all.size() > eval_n ? all.size() - eval_n : 1;
    train->assign(all.begin(), all.begin() + ptrdiff_t(train_n));
    eval_set->assign(all.begin() + ptrdiff_t(train_n), all.end());
    return;
  }
  if (t.data_dir.empty()) {
    throw hp::ConfigError("either --data or --synthetic N is required");
  }
  auto records = hp::scan_dataset_dir(t.data_dir);
  hp::MonthSplit split = hp::month_split(records);
  for (const std::string& w : split.warnings) {
    std::cerr << "warning: " << w << "\n";
  }
  if (split.train.records.empty()) {
    throw hp::IoError("no training images (months 1-8) in " + t.data_dir);
  }
  for (const auto& [path, ts] : split.train.records) {
    train->push_back(hp::read_image(path));
  }
  size_t eval_cap = 16;
  for (const auto& [path, ts] : split.test.records) {
    if (eval_set->size() >= eval_cap) break;
    eval_set->push_back(hp::read_image(path));
  }
}

int cmd_train(const TrainCli& t, const CLI::App& sub) {
  echo_config(sub);
  t.cfg.validate();
  std::vector<hp::Tensor> train_images, eval_images;
  load_training_data(t, &train_images, &eval_images);

  hp::CodecModel model(hp::ArchConfig::desk(), t.cfg.seed);
  std::ostringstream log;
  hp::TrainResult result =
      hp::train(model, train_images, eval_images, t.cfg, &log);
  for (const hp::EpochLog& e : result.logs) {
    std::printf(
        "epoch %d lr=%.3e bpp=%.4f mse=%.3f eval_psnr=%.2f dB "
        "eval_msssim=%.2f dB\n",
        e.epoch, e.lr, e.rate_bpp, e.mse, e.eval_psnr_db, e.eval_msssim_db);
  }

  model.save(t.out_model);
  const std::string log_path =
      t.out_log.empty() ? t.out_model + ".log.jsonl" : t.out_log;
  hp::atomic_write_file(log_path, log.str());
  std::printf("wrote %s and %s\n", t.out_model.c_str(), log_path.c_str());
  return kOk;
}

int cmd_compress(const std::string& model_path, const std::string& input,
                 const std::string& output) {
  hp::CodecModel model = load_model(model_path);
  hp::Tensor img = hp::read_image(input);
  hp::Bitstream bs = hp::compress_image(model, img);
  hp::write_bitstream(output, bs);
  const double pixels = double(bs.orig_width) * double(bs.orig_height);
  std::printf("bpp=%.6f bytes=%zu\n", double(bs.total_bytes()) * 8.0 / pixels,
              bs.total_bytes());
  return kOk;
}

int cmd_decompress(const std::string& model_path, const std::string& input,
                   const std::string& output, const std::string& reference) {
  hp::CodecModel model = load_model(model_path);
  hp::Bitstream bs = hp::read_bitstream(input);
  hp::Tensor recon = hp::decompress_image(model, bs);
  hp::write_pgm(output, recon);
  if (!reference.empty()) {
    hp::Tensor ref = hp::read_image(reference);
    std::printf("psnr=%.6f dB\n", hp::psnr(ref, recon));
  }
  return kOk;
}

struct SweepCli {
  std::string data_dir;
  int synthetic = 0;
  int size = 64;
  std::string models_dir = ".";
  std::string out_csv = "rd_sweep.csv";
  std::vector<double> lambdas;
  bool train_first = false;
  hp::TrainConfig cfg;
};

std::string lambda_model_name(double lambda) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "model_lambda%.4f.sdw", lambda);
  return buf;
}

int cmd_rd_sweep(const SweepCli& s, const CLI::App& sub) {
  echo_config(sub);
  std::vector<double> lambdas = s.lambdas;
  if (lambdas.empty()) {
    const auto& grid = hp::TrainConfig::lambda_grid();
    lambdas.assign(grid.begin(), grid.end());
  }
  std::sort(lambdas.begin(), lambdas.end());

  std::vector<hp::Tensor> train_images, test_images;
  {
    TrainCli t;
    t.data_dir = s.data_dir;
    t.synthetic = s.synthetic;
    t.size = s.size;
    t.cfg = s.cfg;
    load_training_data(t, &train_images, &test_images);
  }
  if (test_images.empty()) throw hp::IoError("no test images for the sweep");

  std::ostringstream csv;
  csv << "lambda,bpp,psnr_db,msssim_db,perc\n";
  for (double lambda : lambdas) {
    const fs::path model_path =
        fs::path(s.models_dir) / lambda_model_name(lambda);
    if (!fs::exists(model_path)) {
      if (!s.train_first) {
        throw hp::IoError("missing model for lambda " +
                          std::to_string(lambda) + ": " +
                          model_path.string() + " (use --train-first)");
      }
      hp::TrainConfig cfg = s.cfg;
      cfg.lambda = lambda;
      cfg.validate();
      hp::CodecModel model(hp::ArchConfig::desk(), cfg.seed);
      hp::train(model, train_images, test_images, cfg, nullptr);
      fs::create_directories(s.models_dir);
      model.save(model_path.string());
    }
    hp::CodecModel model = load_model(model_path.string());

    const int64_t count = int64_t(test_images.size());
    const auto countz = static_cast<size_t>(count);
    std::vector<double> v_bpp(countz), v_psnr(countz), v_ms(countz),
        v_perc(countz);
    hp::parallel_for(count, [&](int64_t i) {
      const hp::Tensor& img = test_images[size_t(i)];
      hp::Bitstream bs = hp::compress_image(model, img);
      hp::Tensor recon = hp::decompress_image(model, bs);
      const double pixels = double(bs.orig_width) * double(bs.orig_height);
      v_bpp[size_t(i)] = double(bs.total_bytes()) * 8.0 / pixels;
      v_psnr[size_t(i)] = hp::psnr(img, recon);
      v_ms[size_t(i)] =
          hp::msssim_db(hp::ms_ssim(img, recon, /*allow_reduced=*/true));
      v_perc[size_t(i)] = hp::perc_distance(img, recon).item();
    });
    double bpp = 0, psnr_db = 0, ms = 0, perc = 0;
    for (int64_t i = 0; i < count; ++i) {  // index order: deterministic
      bpp += v_bpp[size_t(i)];
      psnr_db += v_psnr[size_t(i)];
      ms += v_ms[size_t(i)];
      perc += v_perc[size_t(i)];
    }
    char line[256];
    std::snprintf(line, sizeof(line), "%.6f,%.6f,%.6f,%.6f,%.6f\n", lambda,
                  bpp / double(count), psnr_db / double(count),
                  ms / double(count), perc / double(count));
    csv << line;
    std::cout << line;
  }
  hp::atomic_write_file(s.out_csv, csv.str());
  std::printf("wrote %s\n", s.out_csv.c_str());
  return kOk;
}

struct GenCli {
  std::string out_dir = "synthetic";
  int count = 24;
  int size = 64;
  uint64_t seed = 1;
  int months = 1;
  std::string wavelength = "0171";
  int start_year = 2011;
};

int cmd_gen_synthetic(const GenCli& g) {
  if (g.count < 1) throw hp::ConfigError("count must be >= 1");
  if (g.months != 1 && g.months != 12)
    throw hp::ConfigError("months must be 1 or 12");
  fs::create_directories(g.out_dir);
  static constexpr int kMonthDays[12] = {31, 28, 31, 30, 31, 30,
                                         31, 31, 30, 31, 30, 31};
  const int per_month = (g.count + g.months - 1) / g.months;
  for (int i = 0; i < g.count; ++i) {
    hp::Timestamp ts;
    ts.year = g.start_year;
    if (g.months == 1) {
      // Consecutive 1-hour cadence from January 1st.
      int hours = i;
      ts.month = 1;
      ts.day = 1 + hours / 24;
      ts.hour = hours % 24;
      while (ts.day > kMonthDays[ts.month - 1]) {
        ts.day -= kMonthDays[ts.month - 1];
        ts.month += 1;
        if (ts.month > 12) {
          ts.month = 1;
          ts.year += 1;
        }
      }
    } else {
      // Spread across all 12 months, hourly within each month.
      const int m = std::min(i / per_month, 11);
      const int k = i - m * per_month;
      ts.month = m + 1;
      ts.day = 1 + (k / 24) % kMonthDays[m];
      ts.hour = k % 24;
    }
    ts.minute = 0;
    const std::string name = "AIA_" + g.wavelength + "_" +
                             hp::format_timestamp_compact(ts) + ".pgm";
    hp::Tensor img = hp::synthetic_sun_image(g.seed, i, g.size);
    hp::write_pgm((fs::path(g.out_dir) / name).string(), img);
  }
  std::printf("wrote %d images to %s\n", g.count, g.out_dir.c_str());
  return kOk;
}

int cmd_split_months(const std::string& manifest, const std::string& data_dir,
                     const std::string& out_csv) {
  std::vector<hp::DatasetRecord> records;
  if (!manifest.empty()) {
    records = hp::read_manifest_csv(manifest);
  } else if (!data_dir.empty()) {
    records = hp::scan_dataset_dir(data_dir);
  } else {
    throw hp::ConfigError("either --manifest or --data is required");
  }
  hp::MonthSplit split = hp::month_split(records);
  for (const std::string& w : split.warnings)
    std::cerr << "warning: " << w << "\n";
  std::ostringstream csv;
  csv << "path,split\n";
  for (const auto& [path, ts] : split.train.records) {
    csv << path << ",train\n";
    std::cout << "train " << path << "\n";
  }
  for (const auto& [path, ts] : split.test.records) {
    csv << path << ",test\n";
    std::cout << "test " << path << "\n";
  }
  std::printf("train=%zu test=%zu rejected=%zu\n",
              split.train.records.size(), split.test.records.size(),
              split.warnings.size());
  if (!out_csv.empty()) hp::atomic_write_file(out_csv, csv.str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"heliopress: learned lossy compression for solar imagery"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI config file");

  TrainCli t;
  CLI::App* train = app.add_subcommand("train", "train a codec model");
  train->add_option("--data", t.data_dir, "directory of timestamped PGMs");
  train->add_option("--synthetic", t.synthetic,
                    "train on N generated synthetic images");
  train->add_option("--size", t.size, "synthetic image size")
      ->default_val(64);
  train->add_option("--out", t.out_model, "output SDW model path")
      ->default_val("model.sdw");
  train->add_option("--log", t.out_log, "output JSONL log path");
  train->add_option("--lambda", t.cfg.lambda, "rate-distortion lambda")
      ->default_val(0.0250);
  train->add_option("--lambda-recon", t.cfg.lambda_recon,
                    "MSE weight (default: lambda)");
  train->add_option("--lambda-perc", t.cfg.lambda_perc, "perceptual weight")
      ->default_val(1.0);
  train->add_option("--lambda-adv", t.cfg.lambda_adv, "adversarial weight")
      ->default_val(0.1);
  train->add_option("--epochs", t.cfg.epochs, "training epochs")
      ->default_val(30);
  train->add_option("--batch", t.cfg.batch_size, "batch size")
      ->default_val(8);
  train->add_option("--crop", t.cfg.crop, "crop size (multiple of 64)")
      ->default_val(64);
  train->add_option("--seed", t.cfg.seed, "RNG seed")->default_val(1);
  train->add_flag("--gan", t.cfg.gan_enabled, "enable adversarial training");
  train->add_option("--gan-start", t.cfg.gan_start_epoch,
                    "epoch to activate the GAN (default: halfway)");
  train->add_option("--lr-init", t.cfg.lr_init, "initial learning rate")
      ->default_val(1e-4);
  train->add_option("--lr-final", t.cfg.lr_final, "final learning rate")
      ->default_val(1.2e-6);

  std::string c_model, c_in, c_out;
  CLI::App* comp = app.add_subcommand("compress", "compress a PGM/SDT image");
  comp->add_option("--model", c_model, "SDW model")->required();
  comp->add_option("--input", c_in, "input image")->required();
  comp->add_option("--output", c_out, "output SDC bitstream")->required();

  std::string d_model, d_in, d_out, d_ref;
  CLI::App* dec = app.add_subcommand("decompress", "decode an SDC bitstream");
  dec->add_option("--model", d_model, "SDW model")->required();
  dec->add_option("--input", d_in, "input SDC bitstream")->required();
  dec->add_option("--output", d_out, "output PGM image")->required();
  dec->add_option("--reference", d_ref, "original image; prints PSNR");

  SweepCli s;
  CLI::App* sweep =
      app.add_subcommand("rd-sweep", "rate-distortion sweep over lambdas");
  sweep->add_option("--data", s.data_dir, "directory of timestamped PGMs");
  sweep->add_option("--synthetic", s.synthetic, "use N synthetic images");
  sweep->add_option("--size", s.size, "synthetic image size")
      ->default_val(64);
  sweep->add_option("--models", s.models_dir, "model directory")
      ->default_val(".");
  sweep->add_option("--out", s.out_csv, "output CSV")
      ->default_val("rd_sweep.csv");
  sweep->add_option("--lambdas", s.lambdas,
                    "lambda values (default: the full grid)");
  sweep->add_flag("--train-first", s.train_first,
                  "train any missing model first");
  sweep->add_option("--epochs", s.cfg.epochs, "epochs for --train-first")
      ->default_val(30);
  sweep->add_option("--batch", s.cfg.batch_size, "batch size")
      ->default_val(8);
  sweep->add_option("--seed", s.cfg.seed, "RNG seed")->default_val(1);
  sweep->add_option("--lambda-perc", s.cfg.lambda_perc, "perceptual weight")
      ->default_val(1.0);
  sweep->add_option("--lambda-adv", s.cfg.lambda_adv, "adversarial weight")
      ->default_val(0.1);

  GenCli g;
  CLI::App* gen =
      app.add_subcommand("gen-synthetic", "render a synthetic dataset");
  gen->add_option("--out", g.out_dir, "output directory")
      ->default_val("synthetic");
  gen->add_option("--count", g.count, "number of images")->default_val(24);
  gen->add_option("--size", g.size, "image size (multiple of 64)")
      ->default_val(64);
  gen->add_option("--seed", g.seed, "RNG seed")->default_val(1);
  gen->add_option("--months", g.months,
                  "1: consecutive hourly; 12: spread over a year")
      ->default_val(1);
  gen->add_option("--wavelength", g.wavelength, "wavelength tag in names")
      ->default_val("0171");

  std::string m_manifest, m_data, m_out;
  CLI::App* split =
      app.add_subcommand("split-months", "train/test partition by month");
  split->add_option("--manifest", m_manifest, "CSV manifest (path,timestamp)");
  split->add_option("--data", m_data, "directory of timestamped files");
  split->add_option("--out", m_out, "write path,split CSV here");

  bool inject_fault = false;
  CLI::App* self = app.add_subcommand("selftest", "run internal diagnostics");
  self->add_flag("--inject-fault", inject_fault,
                 "also verify that a wrong gradient is caught");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (train->parsed()) return cmd_train(t, *train);
    if (comp->parsed()) return cmd_compress(c_model, c_in, c_out);
    if (dec->parsed()) return cmd_decompress(d_model, d_in, d_out, d_ref);
    if (sweep->parsed()) return cmd_rd_sweep(s, *sweep);
    if (gen->parsed()) return cmd_gen_synthetic(g);
    if (split->parsed()) return cmd_split_months(m_manifest, m_data, m_out);
    if (self->parsed()) {
      hp::SelftestResult r = hp::selftest(inject_fault, &std::cout);
      std::printf("%s\n", r.all_passed() ? "all checks passed"
                                         : "selftest FAILED");
      return r.all_passed() ? kOk : kFail;
    }
  } catch (const hp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const hp::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kDiverged;
  } catch (const hp::WrongModelError& e) {
    std::cerr << "wrong model: " << e.what() << "\n";
    return kWrongModel;
  } catch (const hp::DecodeError& e) {
    std::cerr << "corrupt stream: " << e.what() << "\n";
    return kCorrupt;
  } catch (const hp::IoError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const hp::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kFail;
  }
  return kOk;
}
