// Command-line front end: train, attack, defend, analyze, ablate, scenario,
// softplus-baseline. Every run re-derives datasets and randomness from the
// config seed, so identical invocations produce byte-identical outputs.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "xg/attack.hpp"
#include "xg/config.hpp"
#include "xg/defense.hpp"
#include "xg/forensics.hpp"
#include "xg/report.hpp"

using namespace xg;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_path;
  std::string out_dir;
  uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "run configuration file")->required();
  cmd->add_option("--out", c.out_dir, "output directory (overrides [run] out)");
  cmd->add_option("--seed", c.seed, "root seed (overrides [run] seed)")
      ->each([&c](const std::string&) { c.seed_set = true; });
}

config::RunConfig load_config(const Common& c) {
  config::RunConfig rc = config::RunConfig::load(c.config_path);
  if (c.seed_set) {
    rc.seed = c.seed;
    rc.atk.seed = split_seed(rc.seed, "attack");
    rc.def.seed = split_seed(rc.seed, "defense_eval");
  }
  if (!c.out_dir.empty()) rc.out_dir = c.out_dir;
  fs::create_directories(rc.out_dir);
  return rc;
}

std::string attack_stem(const attack::AttackConfig& a, uint64_t seed) {
  return std::string("attacked_") + attack::attack_kind_name(a.kind) + "_" +
         explain::exp_loss_name(a.exp_loss) + "_" + explain::explainer_name(a.explainer.id) +
         "_s" + std::to_string(seed);
}

forensics::EvalSpec eval_spec_from(const config::RunConfig& rc, const nn::Model* reference) {
  forensics::EvalSpec spec;
  spec.reference = reference;
  spec.explainer = rc.atk.explainer;
  spec.err_kind = rc.atk.exp_loss;
  spec.trigger = rc.atk.trigger;
  spec.target_class = rc.atk.target_class;
  return spec;
}

int cmd_train(const Common& c) {
  auto rc = load_config(c);
  auto train = rc.make_train_set();
  auto test = rc.make_test_set();
  nn::Model model = nn::build_model(rc.arch, rc.seed);
  auto log = nn::train_clean(model, train, rc.train, rc.seed);
  const double test_acc = nn::evaluate_accuracy(model, test);

  const std::string snap = rc.out_dir + "/model.xgw";
  nn::save_weights(model, snap);
  report::atomic_write(rc.out_dir + "/train_log.csv", report::train_log_csv(log));
  report::write_run_meta(rc.out_dir, "train", rc.echo(), rc.seed,
                         {{"test_accuracy", report::fmt(test_acc)}},
                         {snap, rc.out_dir + "/train_log.csv"});
  std::printf("trained %s: test accuracy %.4f, snapshot %s\n",
              nn::family_name(rc.arch.family), test_acc, snap.c_str());
  return 0;
}

void run_one_attack(const config::RunConfig& rc, const nn::Model& clean,
                    const data::Dataset& ft, const data::Dataset& test, uint64_t seed,
                    std::vector<std::string>* outputs) {
  attack::AttackConfig a = rc.atk;
  a.seed = seed;
  auto res = attack::run_attack(clean, ft, test, a);
  const std::string stem = rc.out_dir + "/" + attack_stem(a, seed);
  nn::save_weights(res.model, stem + ".xgw");
  report::atomic_write(stem + "_log.csv", report::attack_log_csv(res.log));
  outputs->push_back(stem + ".xgw");
  outputs->push_back(stem + "_log.csv");
  const auto& last = res.log.back();
  std::printf("%s: clean_acc %.4f asr %s exp_err %.5f%s\n", attack_stem(a, seed).c_str(),
              last.clean_acc, last.asr < 0 ? "NA" : report::fmt(last.asr).c_str(),
              last.trig_exp_err, res.collapse_warning ? "  [clean-accuracy collapse]" : "");
}

int cmd_attack(const Common& c, const std::string& clean_path, const std::string& kind,
               const std::string& exp_loss, const std::string& explainer, int target_class,
               bool target_class_set, bool grid, int grid_seeds) {
  auto rc = load_config(c);
  if (!kind.empty()) {
    rc.atk.kind = attack::attack_kind_from_name(kind);
    if (rc.atk.kind == attack::AttackKind::SF && !target_class_set) rc.atk.target_class = -1;
    if (rc.atk.kind == attack::AttackKind::FD) rc.atk.target_expl.reset();
  }
  if (!exp_loss.empty()) rc.atk.exp_loss = explain::exp_loss_from_name(exp_loss);
  if (!explainer.empty()) rc.atk.explainer.id = explain::explainer_from_name(explainer);
  if (target_class_set) rc.atk.target_class = target_class;
  if (rc.atk.kind != attack::AttackKind::FD && !rc.atk.target_expl)
    rc.atk.target_expl.emplace();

  nn::Model clean = nn::load_weights(clean_path);
  auto ft = rc.make_train_set();
  auto test = rc.make_test_set();
  std::vector<std::string> outputs;

  if (!grid) {
    attack::validate_config(rc.atk, clean.arch.num_classes);
    run_one_attack(rc, clean, ft, test, rc.atk.seed, &outputs);
  } else {
    for (auto k : {attack::AttackKind::SF, attack::AttackKind::RH, attack::AttackKind::FD})
      for (auto l : {explain::ExpLoss::MSE, explain::ExpLoss::DSSIM})
        for (auto e : {explain::ExplainerId::Grad, explain::ExplainerId::GradCAM})
          for (int s = 0; s < grid_seeds; ++s) {
            config::RunConfig cell = rc;
            cell.atk.kind = k;
            cell.atk.exp_loss = l;
            cell.atk.explainer.id = e;
            if (k == attack::AttackKind::SF) cell.atk.target_class = -1;
            if (k == attack::AttackKind::FD)
              cell.atk.target_expl.reset();
            else if (!cell.atk.target_expl)
              cell.atk.target_expl.emplace();
            attack::validate_config(cell.atk, clean.arch.num_classes);
            run_one_attack(cell, clean, ft, test,
                           split_seed(rc.seed, "grid" + std::to_string(s)), &outputs);
          }
  }
  report::write_run_meta(rc.out_dir, grid ? "attack --grid" : "attack", rc.echo(), rc.seed,
                         {{"clean_snapshot", report::file_hash_hex(clean_path)}}, outputs);
  return 0;
}

int cmd_defend(const Common& c, const std::string& attacked_path, const std::string& ref_path,
               int batch_size) {
  auto rc = load_config(c);
  if (batch_size > 0) rc.def.eval_batch_size = batch_size;
  nn::Model attacked = nn::load_weights(attacked_path);
  nn::Model reference = nn::load_weights(ref_path);
  if (!(attacked.arch == reference.arch))
    throw ConfigError("defend: snapshot architectures differ");
  auto test = rc.make_test_set();

  auto spec = eval_spec_from(rc, &reference);
  auto attack_rep = defense::evaluate_plain(attacked, test, rc.def, spec);
  auto defense_rep = defense::evaluate_with_defense(attacked, test, rc.def, spec);

  std::vector<report::MetricsRow> rows;
  rows.push_back({"attack", explain::explainer_name(rc.atk.explainer.id),
                  explain::exp_loss_name(rc.atk.exp_loss), attack_rep});
  rows.push_back({"defense", explain::explainer_name(rc.atk.explainer.id),
                  explain::exp_loss_name(rc.atk.exp_loss), defense_rep});
  const std::string csv = rc.out_dir + "/defense_report.csv";
  report::atomic_write(csv, report::metrics_csv(rows));
  report::write_run_meta(rc.out_dir, "defend", rc.echo(), rc.seed,
                         {{"attacked_snapshot", report::file_hash_hex(attacked_path)},
                          {"reference_snapshot", report::file_hash_hex(ref_path)}},
                         {csv});
  std::printf("defense: asr %s -> %s, clean acc %.4f -> %.4f (%s)\n",
              report::fmt_opt(attack_rep.asr).c_str(), report::fmt_opt(defense_rep.asr).c_str(),
              attack_rep.accuracy_clean, defense_rep.accuracy_clean, csv.c_str());
  return 0;
}

int cmd_analyze(const Common& c, const std::string& ref_path,
                const std::vector<std::string>& snapshots) {
  auto rc = load_config(c);
  nn::Model reference = nn::load_weights(ref_path);
  auto ref_snap = nn::snapshot(reference);

  std::vector<forensics::SimilarityReport> reps;
  std::ostringstream summary;
  summary << "group,median_core_cka,median_bn_gamma_cka\n";
  for (const auto& path : snapshots) {
    auto snap = nn::snapshot(nn::load_weights(path));
    auto rep = forensics::layerwise_similarity_report(ref_snap, snap);
    rep.group = fs::path(path).stem().string();
    std::vector<double> gam;
    for (const auto& row : rep.rows)
      if (row.kind == nn::kKindBnGamma) gam.push_back(row.cka);
    summary << rep.group << "," << report::fmt(forensics::median_core_cka(rep)) << ","
            << (gam.empty() ? "NA" : report::fmt(forensics::median(gam))) << "\n";
    reps.push_back(std::move(rep));
  }
  const std::string long_csv = rc.out_dir + "/similarity_long.csv";
  const std::string sum_csv = rc.out_dir + "/similarity_summary.csv";
  report::atomic_write(long_csv, report::similarity_long_csv(reps));
  report::atomic_write(sum_csv, summary.str());
  report::write_run_meta(rc.out_dir, "analyze", rc.echo(), rc.seed,
                         {{"reference_snapshot", report::file_hash_hex(ref_path)}},
                         {long_csv, sum_csv});
  std::printf("analyzed %zu snapshots -> %s\n", snapshots.size(), long_csv.c_str());
  return 0;
}

int cmd_ablate(const Common& c, const std::string& attacked_path, const std::string& ref_path,
               const std::string& sizes_str) {
  auto rc = load_config(c);
  nn::Model attacked = nn::load_weights(attacked_path);
  nn::Model reference = nn::load_weights(ref_path);
  auto test = rc.make_test_set();
  std::vector<int> sizes;
  {
    std::istringstream is(sizes_str);
    std::string tok;
    while (std::getline(is, tok, ','))
      sizes.push_back(std::stoi(tok));
  }
  auto spec = eval_spec_from(rc, &reference);
  auto rows = forensics::batch_size_ablation(attacked, test, sizes, spec, rc.def.epsilon);
  const std::string csv = rc.out_dir + "/ablation.csv";
  report::atomic_write(csv, report::ablation_csv(rows));
  report::write_run_meta(rc.out_dir, "ablate", rc.echo(), rc.seed, {}, {csv});
  std::printf("ablation over %zu sizes -> %s\n", sizes.size(), csv.c_str());
  return 0;
}

int cmd_scenario(const Common& c, const std::string& clean_path, const std::string& c1,
                 const std::string& c3, const std::string& c5) {
  auto rc = load_config(c);
  nn::Model clean = nn::load_weights(clean_path);
  auto test = rc.make_test_set();
  std::optional<nn::Model> m1, m3, m5;
  if (!c1.empty()) m1 = nn::load_weights(c1);
  if (!c3.empty()) m3 = nn::load_weights(c3);
  if (!c5.empty()) m5 = nn::load_weights(c5);
  auto rows = forensics::scenario_matrix_run(clean, m1 ? &*m1 : nullptr, m3 ? &*m3 : nullptr,
                                             m5 ? &*m5 : nullptr, test, 0.5,
                                             rc.def.eval_batch_size);
  const std::string csv = rc.out_dir + "/scenario.csv";
  report::atomic_write(csv, report::scenario_csv(rows));
  report::write_run_meta(rc.out_dir, "scenario", rc.echo(), rc.seed, {}, {csv});
  std::printf("scenario matrix -> %s\n", csv.c_str());
  return 0;
}

int cmd_softplus_baseline(const Common& c) {
  auto rc = load_config(c);
  rc.arch.activation = nn::Activation::Softplus;
  rc.arch.softplus_beta = 5.0;
  auto train = rc.make_train_set();
  auto test = rc.make_test_set();

  nn::Model model = nn::build_model(rc.arch, rc.seed);
  nn::train_clean(model, train, rc.train, rc.seed);
  const std::string clean_snap = rc.out_dir + "/softplus_clean.xgw";
  nn::save_weights(model, clean_snap);

  attack::AttackConfig a = rc.atk;
  if (a.kind == attack::AttackKind::FD) a.target_expl.reset();
  attack::validate_config(a, rc.arch.num_classes);
  auto res = attack::run_attack(model, train, test, a);
  const std::string atk_snap = rc.out_dir + "/softplus_attacked.xgw";
  nn::save_weights(res.model, atk_snap);
  report::atomic_write(rc.out_dir + "/softplus_attack_log.csv",
                       report::attack_log_csv(res.log));

  const auto& last = res.log.back();
  std::ostringstream os;
  os << "beta,final_asr,final_clean_acc,final_exp_err\n";
  os << report::fmt(rc.arch.softplus_beta) << ","
     << (last.asr < 0 ? std::string("NA") : report::fmt(last.asr)) << ","
     << report::fmt(last.clean_acc) << "," << report::fmt(last.trig_exp_err) << "\n";
  const std::string csv = rc.out_dir + "/softplus_baseline.csv";
  report::atomic_write(csv, os.str());
  report::write_run_meta(rc.out_dir, "softplus-baseline", rc.echo(), rc.seed,
                         {{"softplus_beta", report::fmt(rc.arch.softplus_beta)}},
                         {clean_snap, atk_snap, csv, rc.out_dir + "/softplus_attack_log.csv"});
  std::printf("softplus baseline: final asr %s (%s)\n",
              last.asr < 0 ? "NA" : report::fmt(last.asr).c_str(), csv.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"explanation-aware backdoor toolkit"};
  app.require_subcommand(1);

  Common c_train, c_attack, c_defend, c_analyze, c_ablate, c_scenario, c_soft;

  auto* t = app.add_subcommand("train", "train a clean model");
  add_common(t, c_train);

  auto* a = app.add_subcommand("attack", "fine-tune a backdoor into a clean snapshot");
  add_common(a, c_attack);
  std::string clean_path, kind, exp_loss, explainer;
  int target_class = -1;
  bool grid = false;
  int grid_seeds = 3;
  a->add_option("--clean", clean_path, "clean model snapshot")->required();
  a->add_option("--kind", kind, "sf|rh|fd");
  a->add_option("--exp-loss", exp_loss, "mse|dssim");
  a->add_option("--explainer", explainer, "grad|gradcam");
  auto* tc = a->add_option("--target-class", target_class, "target class for rh/fd");
  a->add_flag("--grid", grid, "run the kind x loss x explainer x seed sweep");
  a->add_option("--grid-seeds", grid_seeds, "seeds per grid cell");

  auto* d = app.add_subcommand("defend", "evaluate an attacked snapshot with the CFN defense");
  add_common(d, c_defend);
  std::string attacked_path, ref_path;
  int batch_size = 0;
  d->add_option("--attacked", attacked_path, "attacked snapshot")->required();
  d->add_option("--reference", ref_path, "un-attacked reference snapshot")->required();
  d->add_option("--batch-size", batch_size, "defense evaluation batch size");

  auto* an = app.add_subcommand("analyze", "layerwise weight similarity vs a reference");
  add_common(an, c_analyze);
  std::string an_ref;
  std::vector<std::string> an_snaps;
  an->add_option("--reference", an_ref, "reference snapshot")->required();
  an->add_option("snapshots", an_snaps, "attacked snapshots")->required();

  auto* ab = app.add_subcommand("ablate", "defended evaluation across batch sizes");
  add_common(ab, c_ablate);
  std::string ab_attacked, ab_ref, ab_sizes = "1,2,5,16";
  ab->add_option("--attacked", ab_attacked, "attacked snapshot")->required();
  ab->add_option("--reference", ab_ref, "reference snapshot")->required();
  ab->add_option("--sizes", ab_sizes, "comma list of batch sizes");

  auto* sc = app.add_subcommand("scenario", "accuracy scenario matrix C1-C6");
  add_common(sc, c_scenario);
  std::string sc_clean, sc_c1, sc_c3, sc_c5;
  sc->add_option("--clean", sc_clean, "clean snapshot")->required();
  sc->add_option("--c1", sc_c1, "BN-hosted attacked snapshot");
  sc->add_option("--c3", sc_c3, "norm-bypassed attacked snapshot");
  sc->add_option("--c5", sc_c5, "CFN-trained attacked snapshot");

  auto* sp =
      app.add_subcommand("softplus-baseline", "train and attack a softplus(beta=5) model");
  add_common(sp, c_soft);

  CLI11_PARSE(app, argc, argv);

  try {
    if (t->parsed()) return cmd_train(c_train);
    if (a->parsed())
      return cmd_attack(c_attack, clean_path, kind, exp_loss, explainer, target_class,
                        tc->count() > 0, grid, grid_seeds);
    if (d->parsed()) return cmd_defend(c_defend, attacked_path, ref_path, batch_size);
    if (an->parsed()) return cmd_analyze(c_analyze, an_ref, an_snaps);
    if (ab->parsed()) return cmd_ablate(c_ablate, ab_attacked, ab_ref, ab_sizes);
    if (sc->parsed()) return cmd_scenario(c_scenario, sc_clean, sc_c1, sc_c3, sc_c5);
    if (sp->parsed()) return cmd_softplus_baseline(c_soft);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
