// Command-line front end: train / evaluate / cross-misreport / distill /
// baseline / heatmap.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "auctionlab/experiment.hpp"

using namespace auctionlab;

namespace {

int fail(const std::string& category, const std::string& message) {
  std::fprintf(stderr, "error: %s: %s\n", category.c_str(), message.c_str());
  return 1;
}

SettingSpec parse_setting(const std::string& name) {
  return setting_preset(name);
}

void print_report(const EvaluationReport& rep) {
  std::printf("setting      %s\n", rep.setting.c_str());
  std::printf("samples      %lld\n", static_cast<long long>(rep.samples));
  std::printf("inner steps  %d\n", rep.inner_steps);
  std::printf("revenue      %.6f\n", rep.revenue);
  std::printf("regret mean  %.6f\n", rep.regret_mean);
  std::printf("ratio        %.4f\n", rep.ratio);
  for (size_t i = 0; i < rep.per_bidder_payment.size(); ++i) {
    std::printf("bidder %zu     payment %.6f  regret %.6f\n", i,
                rep.per_bidder_payment[i], rep.per_bidder_regret[i]);
  }
}

void write_report_csv(const EvaluationReport& rep, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  out << "setting,samples,inner_steps,revenue,regret_mean,ratio\n";
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%lld,%d,%.17g,%.17g,%.17g\n",
                rep.setting.c_str(), static_cast<long long>(rep.samples),
                rep.inner_steps, rep.revenue, rep.regret_mean, rep.ratio);
  out << buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"learned and analytic multi-item auction mechanisms"};
  app.require_subcommand(1);

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "train a mechanism network");
  std::string config_path, resume_path, out_dir_override;
  std::vector<std::string> overrides;
  bool flag_budget = false, flag_lagrangian = false;
  uint64_t seed_override = 0;
  bool seed_set = false;
  train_cmd->add_option("--config", config_path, "run config file")->required();
  train_cmd->add_option("--resume", resume_path, "checkpoint to resume from");
  train_cmd->add_option("--out", out_dir_override, "output directory override");
  train_cmd->add_option("--set", overrides,
                        "config override key=value (e.g. train.batch_size=64)");
  train_cmd->add_flag("--budget", flag_budget, "use the regret-budget objective");
  train_cmd->add_flag("--lagrangian", flag_lagrangian,
                      "use the augmented-Lagrangian objective");
  train_cmd
      ->add_option("--seed", seed_override, "seed override")
      ->each([&](const std::string&) { seed_set = true; });

  // ---- evaluate ----
  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint");
  std::string ckpt_path, eval_setting = "1x2", eval_out;
  int64_t eval_profiles = 4096;
  int eval_inner = 1000;
  double eval_rmax = 0.001;
  uint64_t eval_seed = 7;
  int eval_workers = 1;
  eval_cmd->add_option("--checkpoint", ckpt_path)->required();
  eval_cmd->add_option("--setting", eval_setting);
  eval_cmd->add_option("--profiles", eval_profiles);
  eval_cmd->add_option("--inner-steps", eval_inner);
  eval_cmd->add_option("--r-max", eval_rmax);
  eval_cmd->add_option("--seed", eval_seed);
  eval_cmd->add_option("--workers", eval_workers);
  eval_cmd->add_option("--out", eval_out, "also write a one-row CSV here");

  // ---- cross-misreport ----
  auto* cross_cmd =
      app.add_subcommand("cross-misreport", "regret of one net at another's misreports");
  std::string target_path, prober_path, cross_setting = "1x2";
  int64_t cross_profiles = 2048;
  int cross_inner = 1000;
  uint64_t cross_seed = 7;
  int cross_workers = 1;
  cross_cmd->add_option("--target", target_path)->required();
  cross_cmd->add_option("--prober", prober_path)->required();
  cross_cmd->add_option("--setting", cross_setting);
  cross_cmd->add_option("--profiles", cross_profiles);
  cross_cmd->add_option("--inner-steps", cross_inner);
  cross_cmd->add_option("--seed", cross_seed);
  cross_cmd->add_option("--workers", cross_workers);

  // ---- distill ----
  auto* distill_cmd = app.add_subcommand("distill", "teacher-student distillation");
  std::string teacher_path, student_arch = "regretnet", distill_setting = "1x2";
  DistillConfig dcfg;
  distill_cmd->add_option("--teacher", teacher_path)->required();
  distill_cmd->add_option("--student-arch", student_arch);
  distill_cmd->add_option("--setting", distill_setting);
  distill_cmd->add_option("--iterations", dcfg.iterations);
  distill_cmd->add_option("--batch-size", dcfg.batch_size);
  distill_cmd->add_option("--inner-steps", dcfg.inner_steps);
  distill_cmd->add_option("--eval-profiles", dcfg.eval_profiles);
  distill_cmd->add_option("--eval-inner-steps", dcfg.eval_inner_steps);
  distill_cmd->add_option("--seed", dcfg.seed);
  distill_cmd->add_option("--workers", dcfg.workers);

  // ---- baseline ----
  auto* base_cmd = app.add_subcommand("baseline", "Monte-Carlo revenue of a classic mechanism");
  std::string base_mech = "vcg", base_setting = "2x2";
  int64_t base_samples = 1000000;
  uint64_t base_seed = 1;
  base_cmd->add_option("--mechanism", base_mech,
                       "vcg | myerson-itemwise | myerson-bundled");
  base_cmd->add_option("--setting", base_setting);
  base_cmd->add_option("--samples", base_samples);
  base_cmd->add_option("--seed", base_seed);

  // ---- heatmap ----
  auto* heat_cmd = app.add_subcommand("heatmap", "allocation probabilities over a value mesh");
  std::string heat_ckpt, heat_out = "heatmap", heat_setting = "1x2";
  int heat_grid = 64;
  heat_cmd->add_option("--checkpoint", heat_ckpt)->required();
  heat_cmd->add_option("--setting", heat_setting);
  heat_cmd->add_option("--grid", heat_grid);
  heat_cmd->add_option("--out", heat_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (train_cmd->parsed()) {
      if (flag_budget && flag_lagrangian) {
        std::fprintf(stderr, "error: usage: --budget and --lagrangian conflict\n");
        return 2;
      }
      RunConfig cfg = RunConfig::from_file(config_path);
      if (flag_budget) cfg.objective = Objective::budget;
      if (flag_lagrangian) cfg.objective = Objective::lagrangian;
      if (!out_dir_override.empty()) cfg.out_dir = out_dir_override;
      if (seed_set) cfg.seed = seed_override;
      for (const auto& kv : overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) {
          std::fprintf(stderr, "error: usage: --set expects key=value\n");
          return 2;
        }
        cfg.apply_override(kv.substr(0, eq), kv.substr(eq + 1));
      }
      cfg.finalize();
      RunArtifacts artifacts = run_training(cfg, resume_path);
      std::printf("final revenue %.6f regret %.6f ratio %.4f\n",
                  artifacts.result.final_row.revenue,
                  artifacts.result.final_row.regret_mean,
                  artifacts.result.final_row.ratio);
      std::printf("checkpoint %s\nmetrics %s\n", artifacts.checkpoint_path.c_str(),
                  artifacts.metrics_path.c_str());
      return 0;
    }

    if (eval_cmd->parsed()) {
      Checkpoint ckpt = load_checkpoint(ckpt_path);
      EvaluationReport rep =
          evaluate_checkpoint(ckpt, parse_setting(eval_setting), eval_profiles,
                              eval_inner, eval_rmax, eval_seed, eval_workers);
      print_report(rep);
      if (!eval_out.empty()) write_report_csv(rep, eval_out);
      return 0;
    }

    if (cross_cmd->parsed()) {
      MechanismNetwork target = restore_network(load_checkpoint(target_path));
      MechanismNetwork prober = restore_network(load_checkpoint(prober_path));
      target.params().set_requires_grad(false);
      prober.params().set_requires_grad(false);
      SettingSpec setting = parse_setting(cross_setting);
      SeededStream stream(cross_seed, 0xe0a1);
      Tensor profiles = sample_profiles(setting, cross_profiles, stream);
      CrossMisreportReport rep = cross_misreport_regret(
          target, prober, setting, profiles, cross_inner, 0.1, cross_workers);
      std::printf("cross regret mean %.6f\n", rep.mean);
      for (size_t i = 0; i < rep.per_bidder.size(); ++i) {
        std::printf("bidder %zu regret %.6f\n", i, rep.per_bidder[i]);
      }
      return 0;
    }

    if (distill_cmd->parsed()) {
      MechanismNetwork teacher = restore_network(load_checkpoint(teacher_path));
      teacher.params().set_requires_grad(false);
      SettingSpec setting = parse_setting(distill_setting);
      NetConfig scfg = default_net_config(arch_from_name(student_arch),
                                          setting.n, setting.m);
      MechanismNetwork student = MechanismNetwork::build(scfg, dcfg.seed);
      DistillReport rep = distill(teacher, student, setting, dcfg);
      std::printf("teacher revenue %.6f student revenue %.6f\n",
                  rep.teacher_revenue, rep.student_revenue);
      std::printf("regret teacher@teacher %.6f teacher@student %.6f\n",
                  rep.regret[0][0], rep.regret[0][1]);
      std::printf("regret student@teacher %.6f student@student %.6f\n",
                  rep.regret[1][0], rep.regret[1][1]);
      std::printf("final kl %.3e\n", rep.final_kl);
      return 0;
    }

    if (base_cmd->parsed()) {
      BaselineResult res =
          run_baseline(BaselineMechanism::kind_from_name(base_mech),
                       parse_setting(base_setting), base_samples, base_seed);
      std::printf("revenue %.6f +- %.6f (%lld samples)\n", res.revenue_mean,
                  res.standard_error, static_cast<long long>(res.samples));
      return 0;
    }

    if (heat_cmd->parsed()) {
      MechanismNetwork net = restore_network(load_checkpoint(heat_ckpt));
      net.params().set_requires_grad(false);
      HeatmapResult res = heatmap(net, parse_setting(heat_setting), heat_grid);
      write_heatmap(res, heat_out);
      std::printf("interior mad %.4f\nwrote %s\n", heatmap_interior_mad(res),
                  heat_out.c_str());
      return 0;
    }
  } catch (const FormatError& e) {
    return fail("format", e.what());
  } catch (const ShapeError& e) {
    return fail("shape", e.what());
  } catch (const NumericError& e) {
    return fail("numeric", e.what());
  } catch (const std::exception& e) {
    return fail("runtime", e.what());
  }
  return 0;
}
