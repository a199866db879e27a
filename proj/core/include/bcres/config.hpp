/* Copyright 2026 The bcres Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef BCRES_CONFIG_HPP_
#define BCRES_CONFIG_HPP_

#include <string>

#include "bcres/compress.hpp"
#include "bcres/data.hpp"
#include "bcres/model.hpp"
#include "bcres/train.hpp"

namespace bcres {

// Flat key=value experiment configuration ('#' comments allowed). Unknown
// keys are hard errors so typos cannot silently fall back to defaults.
struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  AugmentConfig aug;
  CompressConfig compress;

  std::string data_source = "synthetic";  // synthetic | manifest
  std::string manifest;
  SyntheticConfig synthetic;

  void validate() const;
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config_file(const std::string& path);
std::string serialize_config(const ExperimentConfig& cfg);

const char* norm_mode_name(NormMode mode);
NormMode norm_mode_from_name(const std::string& name);

}  // namespace bcres

#endif  // BCRES_CONFIG_HPP_
