#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xg/attack.hpp"
#include "xg/forensics.hpp"
#include "xg/optim.hpp"

namespace xg::report {

// write-temp-then-rename; partial files never appear under the final name
void atomic_write(const std::string& path, const std::string& content);

std::string file_hash_hex(const std::string& path);
std::string bytes_hash_hex(const std::vector<uint8_t>& bytes);

std::string fmt(double v);                      // fixed %.8g rendering
std::string fmt_opt(const std::optional<double>& v);  // "NA" when absent

std::string train_log_csv(const nn::TrainLog& log);
std::string attack_log_csv(const std::vector<attack::AttackLogRow>& log);
std::string similarity_csv(const forensics::SimilarityReport& rep);
// box-plot-ready long format: layer,kind,metric,value,group
std::string similarity_long_csv(const std::vector<forensics::SimilarityReport>& reps);
// table-shaped defended/attacked comparison rows
struct MetricsRow {
  std::string mode;  // "attack" or "defense"
  std::string explainer;
  std::string loss;
  forensics::MetricsReport rep;
};
std::string metrics_csv(const std::vector<MetricsRow>& rows);
std::string ablation_csv(const std::vector<forensics::AblationRow>& rows);
std::string scenario_csv(const std::vector<forensics::ScenarioRow>& rows);

// config echo + seeds + output-file hashes; no timestamps, so reruns match
void write_run_meta(const std::string& out_dir, const std::string& command,
                    const std::string& config_echo, uint64_t seed,
                    const std::map<std::string, std::string>& extra,
                    const std::vector<std::string>& output_files);

}  // namespace xg::report
