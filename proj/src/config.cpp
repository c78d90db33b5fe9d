#include "xg/config.hpp"

#include <fstream>
#include <sstream>

namespace xg::config {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

int to_int(const std::string& v, const std::string& path) {
  try {
    size_t pos = 0;
    const int r = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + path + "' expects an integer, got '" + v + "'");
  }
}

double to_double(const std::string& v, const std::string& path) {
  try {
    size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + path + "' expects a number, got '" + v + "'");
  }
}

uint64_t to_u64(const std::string& v, const std::string& path) {
  try {
    size_t pos = 0;
    const uint64_t r = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + path + "' expects an unsigned integer, got '" + v + "'");
  }
}

bool to_bool(const std::string& v, const std::string& path) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: '" + path + "' expects true|false, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& v, const std::string& path) {
  std::vector<int> out;
  std::istringstream is(v);
  std::string tok;
  while (std::getline(is, tok, ',')) out.push_back(to_int(trim(tok), path));
  if (out.empty()) throw ConfigError("config: '" + path + "' expects a comma list");
  return out;
}

}  // namespace

IniFile IniFile::parse_string(const std::string& text, const std::string& origin) {
  IniFile ini;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config: " + origin + ":" + std::to_string(lineno) +
                          ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ConfigError("config: " + origin + ":" + std::to_string(lineno) + ": empty section");
      ini.sections[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: " + origin + ":" + std::to_string(lineno) +
                        ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (section.empty())
      throw ConfigError("config: " + origin + ":" + std::to_string(lineno) +
                        ": key outside any section");
    if (key.empty())
      throw ConfigError("config: " + origin + ":" + std::to_string(lineno) + ": empty key");
    if (!ini.sections[section].emplace(key, val).second)
      throw ConfigError("config: " + origin + ":" + std::to_string(lineno) + ": duplicate key '" +
                        section + "." + key + "'");
  }
  return ini;
}

IniFile IniFile::parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_string(ss.str(), path);
}

RunConfig RunConfig::from_ini(const IniFile& ini) {
  RunConfig rc;
  for (const auto& [section, kv] : ini.sections) {
    for (const auto& [key, val] : kv) {
      const std::string path = section + "." + key;
      if (section == "dataset") {
        if (key == "kind") {
          if (val != "synthetic" && val != "cifar10")
            throw ConfigError("config: '" + path + "' expects synthetic|cifar10");
          rc.dataset_kind = val;
        } else if (key == "dir") {
          rc.dataset_dir = val;
        } else if (key == "classes") {
          rc.classes = to_int(val, path);
        } else if (key == "per_class_train") {
          rc.per_class_train = to_int(val, path);
        } else if (key == "per_class_test") {
          rc.per_class_test = to_int(val, path);
        } else if (key == "image_side") {
          rc.image_side = to_int(val, path);
        } else if (key == "noise_sd") {
          rc.noise_sd = to_double(val, path);
        } else {
          throw ConfigError("config: unknown key '" + path + "'");
        }
      } else if (section == "arch") {
        if (key == "family") {
          rc.arch.family = nn::family_from_name(val);
        } else if (key == "widths") {
          rc.arch.stage_widths = to_int_list(val, path);
        } else if (key == "blocks") {
          rc.arch.blocks_per_stage = to_int(val, path);
        } else if (key == "activation") {
          rc.arch.activation = nn::activation_from_name(val);
        } else if (key == "softplus_beta") {
          rc.arch.softplus_beta = to_double(val, path);
        } else if (key == "norm") {
          rc.arch.with_norm = to_bool(val, path);
        } else {
          throw ConfigError("config: unknown key '" + path + "'");
        }
      } else if (section == "train") {
        if (key == "optimizer") {
          if (val == "sgd")
            rc.train.optimizer = nn::OptKind::SGD;
          else if (val == "adam")
            rc.train.optimizer = nn::OptKind::Adam;
          else
            throw ConfigError("config: '" + path + "' expects sgd|adam");
        } else if (key == "lr") {
          rc.train.lr = to_double(val, path);
        } else if (key == "momentum") {
          rc.train.momentum = to_double(val, path);
        } else if (key == "cosine") {
          rc.train.cosine = to_bool(val, path);
        } else if (key == "epochs") {
          rc.train.epochs = to_int(val, path);
        } else if (key == "batch_size") {
          rc.train.batch_size = to_int(val, path);
        } else {
          throw ConfigError("config: unknown key '" + path + "'");
        }
      } else if (section == "attack") {
        if (key == "kind") {
          rc.atk.kind = attack::attack_kind_from_name(val);
        } else if (key == "lambda") {
          rc.atk.lambda = to_double(val, path);
        } else if (key == "exp_loss") {
          rc.atk.exp_loss = explain::exp_loss_from_name(val);
        } else if (key == "target_class") {
          rc.atk.target_class = to_int(val, path);
        } else if (key == "explainer") {
          rc.atk.explainer.id = explain::explainer_from_name(val);
        } else if (key == "target_layer") {
          rc.atk.explainer.target_layer = val;
        } else if (key == "trigger_side") {
          rc.atk.trigger.side = to_int(val, path);
        } else if (key == "trigger_row") {
          rc.atk.trigger.row = to_int(val, path);
        } else if (key == "trigger_col") {
          rc.atk.trigger.col = to_int(val, path);
        } else if (key == "trigger_pattern") {
          if (val == "solid")
            rc.atk.trigger.pattern = attack::TriggerSpec::Pattern::Solid;
          else if (val == "checkerboard")
            rc.atk.trigger.pattern = attack::TriggerSpec::Pattern::Checkerboard;
          else
            throw ConfigError("config: '" + path + "' expects solid|checkerboard");
        } else if (key == "trigger_v0") {
          rc.atk.trigger.v0 = to_double(val, path);
        } else if (key == "trigger_v1") {
          rc.atk.trigger.v1 = to_double(val, path);
        } else if (key == "target_box_side") {
          if (!rc.atk.target_expl) rc.atk.target_expl.emplace();
          rc.atk.target_expl->side = to_int(val, path);
        } else if (key == "target_box_row") {
          if (!rc.atk.target_expl) rc.atk.target_expl.emplace();
          rc.atk.target_expl->row = to_int(val, path);
        } else if (key == "target_box_col") {
          if (!rc.atk.target_expl) rc.atk.target_expl.emplace();
          rc.atk.target_expl->col = to_int(val, path);
        } else if (key == "optimizer") {
          if (val == "sgd")
            rc.atk.opt.kind = nn::OptKind::SGD;
          else if (val == "adam")
            rc.atk.opt.kind = nn::OptKind::Adam;
          else
            throw ConfigError("config: '" + path + "' expects sgd|adam");
        } else if (key == "lr") {
          rc.atk.opt.lr = to_double(val, path);
        } else if (key == "epochs") {
          rc.atk.opt.epochs = to_int(val, path);
        } else if (key == "batch_size") {
          rc.atk.opt.batch_size = to_int(val, path);
        } else if (key == "poison_fraction") {
          rc.atk.poison_fraction = to_double(val, path);
        } else if (key == "norm_during_attack") {
          if (val == "default")
            rc.atk.norm_during_attack = nn::NormOverride::None;
          else if (val == "bypass")
            rc.atk.norm_during_attack = nn::NormOverride::Bypass;
          else if (val == "cfn")
            rc.atk.norm_during_attack = nn::NormOverride::ForceCFN;
          else
            throw ConfigError("config: '" + path + "' expects default|bypass|cfn");
        } else {
          throw ConfigError("config: unknown key '" + path + "'");
        }
      } else if (section == "defense") {
        if (key == "batch_size") {
          rc.def.eval_batch_size = to_int(val, path);
        } else if (key == "epsilon") {
          rc.def.epsilon = to_double(val, path);
        } else {
          throw ConfigError("config: unknown key '" + path + "'");
        }
      } else if (section == "run") {
        if (key == "seed") {
          rc.seed = to_u64(val, path);
        } else if (key == "out") {
          rc.out_dir = val;
        } else {
          throw ConfigError("config: unknown key '" + path + "'");
        }
      } else {
        throw ConfigError("config: unknown section '[" + section + "]'");
      }
    }
  }

  if (rc.dataset_kind == "cifar10") {
    rc.classes = 10;
    rc.image_side = 32;
    if (rc.dataset_dir.empty())
      throw ConfigError("config: 'dataset.dir' is required for cifar10");
  }
  rc.arch.num_classes = rc.classes;
  rc.arch.image_side = rc.image_side;
  rc.atk.seed = split_seed(rc.seed, "attack");
  rc.def.seed = split_seed(rc.seed, "defense_eval");
  return rc;
}

RunConfig RunConfig::load(const std::string& path) {
  return from_ini(IniFile::parse_file(path));
}

namespace {
std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace

std::string RunConfig::echo() const {
  std::ostringstream os;
  os << "[dataset]\n";
  os << "kind = " << dataset_kind << "\n";
  if (!dataset_dir.empty()) os << "dir = " << dataset_dir << "\n";
  os << "classes = " << classes << "\n";
  os << "per_class_train = " << per_class_train << "\n";
  os << "per_class_test = " << per_class_test << "\n";
  os << "image_side = " << image_side << "\n";
  os << "noise_sd = " << fmt_g(noise_sd) << "\n";
  os << "[arch]\n";
  os << "family = " << nn::family_name(arch.family) << "\n";
  os << "widths = ";
  for (size_t i = 0; i < arch.stage_widths.size(); ++i)
    os << (i ? "," : "") << arch.stage_widths[i];
  os << "\n";
  os << "blocks = " << arch.blocks_per_stage << "\n";
  os << "activation = " << nn::activation_name(arch.activation) << "\n";
  os << "softplus_beta = " << fmt_g(arch.softplus_beta) << "\n";
  os << "norm = " << (arch.with_norm ? "true" : "false") << "\n";
  os << "[train]\n";
  os << "optimizer = " << (train.optimizer == nn::OptKind::SGD ? "sgd" : "adam") << "\n";
  os << "lr = " << fmt_g(train.lr) << "\n";
  os << "momentum = " << fmt_g(train.momentum) << "\n";
  os << "cosine = " << (train.cosine ? "true" : "false") << "\n";
  os << "epochs = " << train.epochs << "\n";
  os << "batch_size = " << train.batch_size << "\n";
  os << "[attack]\n";
  os << "kind = " << attack::attack_kind_name(atk.kind) << "\n";
  os << "lambda = " << fmt_g(atk.lambda) << "\n";
  os << "exp_loss = " << explain::exp_loss_name(atk.exp_loss) << "\n";
  os << "target_class = " << atk.target_class << "\n";
  os << "explainer = " << explain::explainer_name(atk.explainer.id) << "\n";
  os << "target_layer = " << atk.explainer.target_layer << "\n";
  os << "trigger_side = " << atk.trigger.side << "\n";
  os << "trigger_row = " << atk.trigger.row << "\n";
  os << "trigger_col = " << atk.trigger.col << "\n";
  os << "trigger_pattern = "
     << (atk.trigger.pattern == attack::TriggerSpec::Pattern::Solid ? "solid" : "checkerboard")
     << "\n";
  os << "trigger_v0 = " << fmt_g(atk.trigger.v0) << "\n";
  os << "trigger_v1 = " << fmt_g(atk.trigger.v1) << "\n";
  if (atk.target_expl) {
    os << "target_box_side = " << atk.target_expl->side << "\n";
    os << "target_box_row = " << atk.target_expl->row << "\n";
    os << "target_box_col = " << atk.target_expl->col << "\n";
  }
  os << "optimizer = " << (atk.opt.kind == nn::OptKind::SGD ? "sgd" : "adam") << "\n";
  os << "lr = " << fmt_g(atk.opt.lr) << "\n";
  os << "epochs = " << atk.opt.epochs << "\n";
  os << "batch_size = " << atk.opt.batch_size << "\n";
  os << "poison_fraction = " << fmt_g(atk.poison_fraction) << "\n";
  os << "norm_during_attack = "
     << (atk.norm_during_attack == nn::NormOverride::None
             ? "default"
             : (atk.norm_during_attack == nn::NormOverride::Bypass ? "bypass" : "cfn"))
     << "\n";
  os << "[defense]\n";
  os << "batch_size = " << def.eval_batch_size << "\n";
  os << "epsilon = " << fmt_g(def.epsilon) << "\n";
  os << "[run]\n";
  os << "seed = " << seed << "\n";
  os << "out = " << out_dir << "\n";
  return os.str();
}

data::Dataset RunConfig::make_train_set() const {
  if (dataset_kind == "cifar10") {
    auto [train, test] = data::load_cifar10_binary(dataset_dir);
    return std::move(train);
  }
  auto d = data::gen_synthetic_shapes(per_class_train, classes, image_side, noise_sd,
                                      split_seed(seed, "train_data"));
  d.split = "train";
  return d;
}

data::Dataset RunConfig::make_test_set() const {
  if (dataset_kind == "cifar10") {
    auto [train, test] = data::load_cifar10_binary(dataset_dir);
    return std::move(test);
  }
  auto d = data::gen_synthetic_shapes(per_class_test, classes, image_side, noise_sd,
                                      split_seed(seed, "test_data"));
  d.split = "test";
  return d;
}

}  // namespace xg::config
