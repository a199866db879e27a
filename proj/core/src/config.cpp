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
#include "bcres/config.hpp"

#include <fstream>
#include <sstream>

namespace bcres {

namespace {

std::string trim(const std::string& s) {
  std::size_t begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  std::size_t end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::int64_t parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const std::int64_t v = std::stoll(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected integer, got '" + value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected number, got '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true") return true;
  if (value == "0" || value == "false") return false;
  throw ConfigError("config key '" + key + "': expected 0/1/true/false, got '" + value + "'");
}

std::vector<std::int64_t> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<std::int64_t> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int(key, trim(item)));
  return out;
}

}  // namespace

const char* norm_mode_name(NormMode mode) {
  switch (mode) {
    case NormMode::kResNorm:
      return "resnorm";
    case NormMode::kFreqIn:
      return "freqin";
    case NormMode::kNone:
      return "none";
  }
  return "?";
}

NormMode norm_mode_from_name(const std::string& name) {
  if (name == "resnorm") return NormMode::kResNorm;
  if (name == "freqin") return NormMode::kFreqIn;
  if (name == "none") return NormMode::kNone;
  throw ConfigError("config key 'model.norm_mode': expected resnorm|freqin|none, got '" + name +
                    "'");
}

void ExperimentConfig::validate() const {
  model.validate();
  train.validate();
  aug.validate();
  compress.validate();
  if (data_source != "synthetic" && data_source != "manifest") {
    throw ConfigError("config key 'data.source': expected synthetic|manifest, got '" +
                      data_source + "'");
  }
  if (data_source == "manifest" && manifest.empty()) {
    throw ConfigError("config: data.source=manifest requires data.manifest");
  }
  if (data_source == "synthetic") synthetic.validate();
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream is(text);
  std::string raw;
  std::int64_t line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));

    if (key == "model.base_channels") {
      cfg.model.base_channels = parse_int(key, value);
    } else if (key == "model.num_classes") {
      cfg.model.num_classes = parse_int(key, value);
    } else if (key == "model.dropout") {
      cfg.model.dropout = parse_double(key, value);
    } else if (key == "model.ssn_sub_bands") {
      cfg.model.ssn_sub_bands = parse_int(key, value);
    } else if (key == "model.resnorm_lambda") {
      cfg.model.resnorm_lambda = parse_double(key, value);
    } else if (key == "model.norm_mode") {
      cfg.model.norm_mode = norm_mode_from_name(value);
    } else if (key == "train.epochs") {
      cfg.train.epochs = parse_int(key, value);
    } else if (key == "train.batch_size") {
      cfg.train.batch_size = parse_int(key, value);
    } else if (key == "train.momentum") {
      cfg.train.momentum = parse_double(key, value);
    } else if (key == "train.weight_decay") {
      cfg.train.weight_decay = parse_double(key, value);
    } else if (key == "train.peak_lr") {
      cfg.train.peak_lr = parse_double(key, value);
    } else if (key == "train.warmup_epochs") {
      cfg.train.warmup_epochs = parse_int(key, value);
    } else if (key == "train.kd_temperature") {
      cfg.train.kd_temperature = parse_double(key, value);
    } else if (key == "train.kd_weight") {
      cfg.train.kd_weight = parse_double(key, value);
    } else if (key == "aug.roll_frames") {
      cfg.aug.roll_frames = parse_int(key, value);
    } else if (key == "aug.mixup") {
      cfg.aug.mixup_enabled = parse_bool(key, value);
    } else if (key == "aug.mixup_alpha") {
      cfg.aug.mixup_alpha = parse_double(key, value);
    } else if (key == "aug.specaugment") {
      cfg.aug.specaugment_enabled = parse_bool(key, value);
    } else if (key == "aug.freq_masks") {
      cfg.aug.freq_masks = parse_int(key, value);
    } else if (key == "aug.freq_mask_param") {
      cfg.aug.freq_mask_param = parse_int(key, value);
    } else if (key == "aug.time_masks") {
      cfg.aug.time_masks = parse_int(key, value);
    } else if (key == "aug.time_mask_param") {
      cfg.aug.time_mask_param = parse_int(key, value);
    } else if (key == "compress.prune_ratio") {
      cfg.compress.prune_ratio = parse_double(key, value);
    } else if (key == "compress.finetune_epochs") {
      cfg.compress.finetune_epochs = parse_int(key, value);
    } else if (key == "compress.finetune_peak_lr") {
      cfg.compress.finetune_peak_lr = parse_double(key, value);
    } else if (key == "compress.finetune_warmup_epochs") {
      cfg.compress.finetune_warmup_epochs = parse_int(key, value);
    } else if (key == "compress.kd") {
      cfg.compress.kd = parse_bool(key, value);
    } else if (key == "data.source") {
      cfg.data_source = value;
    } else if (key == "data.manifest") {
      cfg.manifest = value;
    } else if (key == "data.n_classes") {
      cfg.synthetic.n_classes = parse_int(key, value);
    } else if (key == "data.freq_bins") {
      cfg.synthetic.freq_bins = parse_int(key, value);
    } else if (key == "data.frames") {
      cfg.synthetic.frames = parse_int(key, value);
    } else if (key == "data.train_counts") {
      cfg.synthetic.train_counts = parse_int_list(key, value);
    } else if (key == "data.test_per_device") {
      cfg.synthetic.test_per_device = parse_int(key, value);
    } else if (key == "data.content_noise") {
      cfg.synthetic.content_noise = static_cast<float>(parse_double(key, value));
    } else if (key == "data.device_noise") {
      cfg.synthetic.device_noise = static_cast<float>(parse_double(key, value));
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path);
  std::stringstream buffer;
  buffer << is.rdbuf();
  return parse_config_text(buffer.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << "model.base_channels=" << cfg.model.base_channels << '\n';
  os << "model.num_classes=" << cfg.model.num_classes << '\n';
  os << "model.dropout=" << format_fixed(cfg.model.dropout, 6) << '\n';
  os << "model.ssn_sub_bands=" << cfg.model.ssn_sub_bands << '\n';
  os << "model.resnorm_lambda=" << format_fixed(cfg.model.resnorm_lambda, 6) << '\n';
  os << "model.norm_mode=" << norm_mode_name(cfg.model.norm_mode) << '\n';
  os << "train.epochs=" << cfg.train.epochs << '\n';
  os << "train.batch_size=" << cfg.train.batch_size << '\n';
  os << "train.momentum=" << format_fixed(cfg.train.momentum, 6) << '\n';
  os << "train.weight_decay=" << format_fixed(cfg.train.weight_decay, 6) << '\n';
  os << "train.peak_lr=" << format_fixed(cfg.train.peak_lr, 6) << '\n';
  os << "train.warmup_epochs=" << cfg.train.warmup_epochs << '\n';
  os << "train.kd_temperature=" << format_fixed(cfg.train.kd_temperature, 6) << '\n';
  os << "train.kd_weight=" << format_fixed(cfg.train.kd_weight, 6) << '\n';
  os << "aug.roll_frames=" << cfg.aug.roll_frames << '\n';
  os << "aug.mixup=" << (cfg.aug.mixup_enabled ? 1 : 0) << '\n';
  os << "aug.mixup_alpha=" << format_fixed(cfg.aug.mixup_alpha, 6) << '\n';
  os << "aug.specaugment=" << (cfg.aug.specaugment_enabled ? 1 : 0) << '\n';
  os << "aug.freq_masks=" << cfg.aug.freq_masks << '\n';
  os << "aug.freq_mask_param=" << cfg.aug.freq_mask_param << '\n';
  os << "aug.time_masks=" << cfg.aug.time_masks << '\n';
  os << "aug.time_mask_param=" << cfg.aug.time_mask_param << '\n';
  os << "compress.prune_ratio=" << format_fixed(cfg.compress.prune_ratio, 6) << '\n';
  os << "compress.finetune_epochs=" << cfg.compress.finetune_epochs << '\n';
  os << "compress.finetune_peak_lr=" << format_fixed(cfg.compress.finetune_peak_lr, 6) << '\n';
  os << "compress.finetune_warmup_epochs=" << cfg.compress.finetune_warmup_epochs << '\n';
  os << "compress.kd=" << (cfg.compress.kd ? 1 : 0) << '\n';
  os << "data.source=" << cfg.data_source << '\n';
  if (!cfg.manifest.empty()) os << "data.manifest=" << cfg.manifest << '\n';
  os << "data.n_classes=" << cfg.synthetic.n_classes << '\n';
  os << "data.freq_bins=" << cfg.synthetic.freq_bins << '\n';
  os << "data.frames=" << cfg.synthetic.frames << '\n';
  os << "data.train_counts=";
  for (std::size_t i = 0; i < cfg.synthetic.train_counts.size(); ++i) {
    if (i) os << ',';
    os << cfg.synthetic.train_counts[i];
  }
  os << '\n';
  os << "data.test_per_device=" << cfg.synthetic.test_per_device << '\n';
  os << "data.content_noise=" << format_fixed(cfg.synthetic.content_noise, 6) << '\n';
  os << "data.device_noise=" << format_fixed(cfg.synthetic.device_noise, 6) << '\n';
  return os.str();
}

}  // namespace bcres
