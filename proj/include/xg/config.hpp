#pragma once

#include <map>
#include <string>

#include "xg/attack.hpp"
#include "xg/defense.hpp"
#include "xg/optim.hpp"

namespace xg::config {

// Strict sectioned key=value text: unknown sections or keys are fatal,
// values are validated on read.
struct IniFile {
  std::map<std::string, std::map<std::string, std::string>> sections;
  static IniFile parse_string(const std::string& text, const std::string& origin = "<string>");
  static IniFile parse_file(const std::string& path);
};

struct RunConfig {
  // dataset
  std::string dataset_kind = "synthetic";  // synthetic | cifar10
  std::string dataset_dir;
  int classes = 4;
  int per_class_train = 500;
  int per_class_test = 100;
  int image_side = 16;
  double noise_sd = 0.08;

  nn::ArchSpec arch;
  nn::TrainConfig train;
  attack::AttackConfig atk;
  defense::DefenseConfig def;

  uint64_t seed = 7;
  std::string out_dir = "out";

  static RunConfig from_ini(const IniFile& ini);
  static RunConfig load(const std::string& path);

  // canonical text rendering of every setting, for run_meta echo
  std::string echo() const;

  data::Dataset make_train_set() const;
  data::Dataset make_test_set() const;
};

}  // namespace xg::config
