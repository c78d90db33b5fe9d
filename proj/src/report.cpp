#include "xg/report.hpp"

#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>

namespace xg::report {

void atomic_write(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open " + tmp);
    f.write(content.data(), static_cast<long>(content.size()));
    if (!f) throw DataError("write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw DataError("rename failed for " + path);
}

std::string file_hash_hex(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  return bytes_hash_hex(bytes);
}

std::string bytes_hash_hex(const std::vector<uint8_t>& bytes) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes.data(), bytes.size())));
  return buf;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.8g", v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : "NA"; }

std::string train_log_csv(const nn::TrainLog& log) {
  std::ostringstream os;
  os << "epoch,loss,accuracy\n";
  for (const auto& r : log.rows)
    os << r.epoch << "," << fmt(r.loss) << "," << fmt(r.accuracy) << "\n";
  return os.str();
}

std::string attack_log_csv(const std::vector<attack::AttackLogRow>& log) {
  std::ostringstream os;
  os << "epoch,attack_loss,cls_loss,exp_loss,clean_acc,triggered_asr,triggered_exp_err\n";
  for (const auto& r : log) {
    os << r.epoch << "," << fmt(r.attack_loss) << "," << fmt(r.cls_loss) << ","
       << fmt(r.exp_loss) << "," << fmt(r.clean_acc) << ","
       << (r.asr < 0 ? std::string("NA") : fmt(r.asr)) << "," << fmt(r.trig_exp_err) << "\n";
  }
  return os.str();
}

std::string similarity_csv(const forensics::SimilarityReport& rep) {
  std::ostringstream os;
  os << "layer,kind,cka,cka_degenerate,src_rho,src_pvalue\n";
  for (const auto& r : rep.rows)
    os << r.layer << "," << static_cast<int>(r.kind) << "," << fmt(r.cka) << ","
       << (r.cka_degenerate ? 1 : 0) << "," << fmt(r.rho) << "," << fmt(r.pvalue) << "\n";
  return os.str();
}

std::string similarity_long_csv(const std::vector<forensics::SimilarityReport>& reps) {
  std::ostringstream os;
  os << "layer,kind,metric,value,group\n";
  for (const auto& rep : reps)
    for (const auto& r : rep.rows) {
      os << r.layer << "," << static_cast<int>(r.kind) << ",cka," << fmt(r.cka) << ","
         << rep.group << "\n";
      os << r.layer << "," << static_cast<int>(r.kind) << ",src_rho," << fmt(r.rho) << ","
         << rep.group << "\n";
    }
  return os.str();
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  os << "mode,explainer,loss,trig_err_mu,trig_err_sd,trig_acc,asr,clean_err_mu,clean_err_sd,"
        "clean_acc,trig_src_median,trig_src_p_median,eval_batch\n";
  for (const auto& r : rows) {
    os << r.mode << "," << r.explainer << "," << r.loss << "," << fmt(r.rep.trig_err_mu) << ","
       << fmt(r.rep.trig_err_sd) << "," << fmt(r.rep.accuracy_triggered) << ","
       << fmt_opt(r.rep.asr) << "," << fmt(r.rep.clean_err_mu) << "," << fmt(r.rep.clean_err_sd)
       << "," << fmt(r.rep.accuracy_clean) << "," << fmt(r.rep.trig_src_median) << ","
       << fmt(r.rep.trig_src_p_median) << "," << r.rep.eval_batch_size << "\n";
  }
  return os.str();
}

std::string ablation_csv(const std::vector<forensics::AblationRow>& rows) {
  std::ostringstream os;
  os << "batch_size,asr,exp_err_mu,exp_err_sd,accuracy\n";
  for (const auto& r : rows)
    os << r.batch_size << "," << fmt_opt(r.asr) << "," << fmt(r.exp_err_mu) << ","
       << fmt(r.exp_err_sd) << "," << fmt(r.accuracy) << "\n";
  return os.str();
}

std::string scenario_csv(const std::vector<forensics::ScenarioRow>& rows) {
  std::ostringstream os;
  os << "scenario,present,accuracy,detectable\n";
  for (const auto& r : rows)
    os << r.scenario << "," << (r.present ? 1 : 0) << ","
       << (r.present ? fmt(r.accuracy) : std::string("NA")) << "," << (r.detectable ? 1 : 0)
       << "\n";
  return os.str();
}

void write_run_meta(const std::string& out_dir, const std::string& command,
                    const std::string& config_echo, uint64_t seed,
                    const std::map<std::string, std::string>& extra,
                    const std::vector<std::string>& output_files) {
  nlohmann::json j;
  j["command"] = command;
  j["seed"] = seed;
  j["config"] = config_echo;
  j["version"] = "xguard-1.0";
  for (const auto& [k, v] : extra) j["info"][k] = v;
  nlohmann::json files = nlohmann::json::object();
  for (const auto& f : output_files) {
    const auto slash = f.find_last_of('/');
    files[slash == std::string::npos ? f : f.substr(slash + 1)] = file_hash_hex(f);
  }
  j["outputs"] = files;
  atomic_write(out_dir + "/run_meta.json", j.dump(2) + "\n");
}

}  // namespace xg::report
