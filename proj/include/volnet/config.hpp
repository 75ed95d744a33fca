#pragma once

#include <filesystem>
#include <set>
#include <string>

#include "volnet/model.hpp"
#include "volnet/optim.hpp"
#include "volnet/phantom.hpp"
#include "volnet/pipeline.hpp"

namespace volnet {

// Flat key=value config with '#' comments. Every key ships a working
// default, so an empty file is valid; unknown keys are rejected.
struct RunConfig {
  Variant variant = Variant::plain;
  bool tiny = false;
  std::uint64_t seed = 0;
  int workers = 0;
  Hyperparams hp;  // lr 0.0001, batch 4, epochs 50
  index_t checkpoint_interval = 1;
  double early_stop_macro_f1 = 2.0;  // values > 1 disable early stopping
  double pos_weight = 1.0;
  double threshold = 0.5;
  std::string manifest = "data/phantom/manifest.csv";
  std::string out_dir = "runs/default";
  std::string resume;      // checkpoint to continue training from
  std::string checkpoint;  // checkpoint for eval/predict
  std::string input;       // predict input: .volf file or manifest
  std::string eval_split = "val";
  double clamp_lo = 0, clamp_hi = 0;  // clamp disabled unless lo < hi
  std::string scope = "all";          // gradcheck filter
  // synth
  std::string synth_dir = "data/phantom";
  index_t n_train_per_class = 100;
  index_t n_val_per_class = 30;
  index_t phantom_depth = 0;  // 0 = geometry default (60x128x128, tiny 20x40x40)
  index_t phantom_height = 0;
  index_t phantom_width = 0;
  double noise = 0.1;
  index_t lesion_min = 1, lesion_max = 4;

  ModelConfig model_config() const { return tiny ? ModelConfig::tiny(variant) : ModelConfig::resnet18(variant); }
  PipelineDims pipeline_dims() const { return tiny ? PipelineDims::tiny() : PipelineDims::canonical(); }
  ClampRange clamp() const { return {static_cast<float>(clamp_lo), static_cast<float>(clamp_hi)}; }
  PhantomSpec phantom_spec() const;

  void validate() const;
};

RunConfig parse_config(const std::filesystem::path& path);

std::string default_config_text();

}  // namespace volnet
