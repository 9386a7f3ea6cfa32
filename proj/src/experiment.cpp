#include "auctionlab/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace auctionlab {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config: not a boolean: " + v);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto comment = line.find_first_of(";#");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw std::invalid_argument("config: malformed section at line " +
                                    std::to_string(line_no));
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: expected key = value at line " +
                                  std::to_string(line_no));
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw std::invalid_argument("config: empty key at line " +
                                  std::to_string(line_no));
    }
    out[section.empty() ? key : section + "." + key] = value;
  }
  return out;
}

void RunConfig::apply_override(const std::string& key, const std::string& value) {
  auto as_i64 = [&] { return static_cast<int64_t>(std::stoll(value)); };
  auto as_int = [&] { return std::stoi(value); };
  auto as_f64 = [&] { return std::stod(value); };

  if (key == "run.seed") seed = static_cast<uint64_t>(std::stoull(value));
  else if (key == "run.out_dir") out_dir = value;
  else if (key == "run.threads") threads = as_int();
  else if (key == "run.precision") {
    if (value == "f64") run_precision = Precision::f64;
    else if (value == "f32") run_precision = Precision::f32;
    else throw std::invalid_argument("config: precision must be f64 or f32");
  } else if (key == "setting.preset") setting = value;
  else if (key == "architecture.variant") arch = arch_from_name(value);
  else if (key == "architecture.use_pe") use_pe = parse_bool(value);
  else if (key == "architecture.pe_mode") {
    if (value == "embedded") pe_mode = PEMode::embedded;
    else if (value == "raw_input") pe_mode = PEMode::raw_input;
    else throw std::invalid_argument("config: pe_mode must be embedded or raw_input");
  } else if (key == "architecture.hidden") hidden = as_int();
  else if (key == "architecture.layers") layers = as_int();
  else if (key == "architecture.att_blocks") att_blocks = as_int();
  else if (key == "architecture.heads") heads = as_int();
  else if (key == "objective.kind") {
    if (value == "budget") objective = Objective::budget;
    else if (value == "lagrangian") objective = Objective::lagrangian;
    else throw std::invalid_argument("config: objective must be budget or lagrangian");
  } else if (key == "objective.r_max_start") r_max_start = as_f64();
  else if (key == "objective.r_max_end") r_max_end = as_f64();
  else if (key == "objective.gamma") gamma0 = as_f64();
  else if (key == "objective.gamma_lr") gamma_lr = as_f64();
  else if (key == "objective.lambda") lambda0 = as_f64();
  else if (key == "objective.rho") rho0 = as_f64();
  else if (key == "objective.rho_lr") rho_lr = as_f64();
  else if (key == "objective.update_period") update_period = as_int();
  else if (key == "train.outer_iterations") train.outer_iterations = as_i64();
  else if (key == "train.batch_size") train.batch_size = as_int();
  else if (key == "train.lr_outer") train.lr_outer = as_f64();
  else if (key == "train.lr_inner") train.lr_inner = as_f64();
  else if (key == "train.inner_steps_train") train.inner_steps_train = as_int();
  else if (key == "train.inner_steps_valid") train.inner_steps_valid = as_int();
  else if (key == "train.dataset_size") train.dataset_size = as_i64();
  else if (key == "train.valid_every") train.valid_every = as_i64();
  else if (key == "train.valid_profiles") train.valid_profiles = as_i64();
  else if (key == "train.valid_profiles_periodic")
    train.valid_profiles_periodic = as_i64();
  else if (key == "train.inner_steps_valid_periodic")
    train.inner_steps_valid_periodic = as_int();
  else if (key == "train.schedule_period") train.schedule_period = as_i64();
  else if (key == "train.checkpoint_every") train.checkpoint_every = as_i64();
  else if (key == "train.fresh_batches") train.fresh_batches = parse_bool(value);
  else if (key == "train.wall_clock") train.wall_clock = parse_bool(value);
  else throw std::invalid_argument("config: unknown key: " + key);
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  for (const auto& [key, value] : parse_config_text(text)) {
    cfg.apply_override(key, value);
  }
  cfg.finalize();
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

void RunConfig::finalize() {
  train.seed = seed;
  train.run_precision = run_precision;
  train.objective = objective;
  train.workers = threads;
  train.out_dir = out_dir;
  train.validate();
}

// ---------------------------------------------------------------------------
// Metrics CSV

void export_metrics(const std::vector<HistoryRow>& history,
                    const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("metrics: cannot open " + path);
  out << "iteration,revenue,regret_mean,ratio,gamma,r_max,wall_ms\n";
  for (const auto& row : history) {
    out << row.iteration << ',' << format_double(row.revenue) << ','
        << format_double(row.regret_mean) << ',' << format_double(row.ratio)
        << ',' << format_double(row.gamma) << ',' << format_double(row.r_max)
        << ',' << format_double(row.wall_ms) << '\n';
  }
}

std::vector<HistoryRow> load_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("metrics: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) ||
      line != "iteration,revenue,regret_mean,ratio,gamma,r_max,wall_ms") {
    throw std::runtime_error("metrics: bad header in " + path);
  }
  std::vector<HistoryRow> rows;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    HistoryRow row;
    std::istringstream ls(line);
    std::string cell;
    auto next = [&]() {
      if (!std::getline(ls, cell, ',')) {
        throw std::runtime_error("metrics: short row in " + path);
      }
      return cell;
    };
    row.iteration = std::stoll(next());
    row.revenue = std::stod(next());
    row.regret_mean = std::stod(next());
    row.ratio = std::stod(next());
    row.gamma = std::stod(next());
    row.r_max = std::stod(next());
    row.wall_ms = std::stod(next());
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Training pipeline

namespace {

MultiSettingSpec settings_from_name(const std::string& name) {
  if (is_multi_preset(name)) return multi_setting_preset(name);
  MultiSettingSpec multi;
  multi.settings.push_back(setting_preset(name));
  return multi;
}

NetConfig net_config_from(const RunConfig& cfg, const MultiSettingSpec& multi) {
  int max_n = 0, max_m = 0;
  for (const auto& s : multi.settings) {
    max_n = std::max(max_n, s.n);
    max_m = std::max(max_m, s.m);
  }
  NetConfig net = default_net_config(cfg.arch, max_n, max_m);
  if (cfg.hidden) net.hidden = *cfg.hidden;
  if (cfg.layers) net.layers = *cfg.layers;
  if (cfg.att_blocks) net.att_blocks = *cfg.att_blocks;
  if (cfg.heads) net.heads = *cfg.heads;
  net.use_pe = cfg.use_pe;
  net.pe_mode = cfg.pe_mode;
  if (cfg.arch != Arch::regretnet) {
    net.fixed_n = 0;
    net.fixed_m = 0;
  }
  return net;
}

}  // namespace

RunArtifacts run_training(const RunConfig& run_cfg, const std::string& resume_from) {
  RunConfig cfg = run_cfg;
  cfg.finalize();
  set_precision(cfg.run_precision);
  bool strict_before = strict_checks();
  set_strict_checks(false);

  std::filesystem::create_directories(cfg.out_dir);
  MultiSettingSpec multi = settings_from_name(cfg.setting);

  NetConfig net_cfg = net_config_from(cfg, multi);
  std::optional<std::pair<int, int>> frame;
  if (cfg.arch == Arch::regretnet) {
    frame = std::make_pair(net_cfg.fixed_n, net_cfg.fixed_m);
  }

  MechanismNetwork net = MechanismNetwork::build(net_cfg, cfg.seed);
  BatchSource source(multi, cfg.train.dataset_size, cfg.train.batch_size,
                     cfg.seed, cfg.train.fresh_batches, frame);

  TrainState state;
  state.objective = cfg.objective;
  int64_t schedule_steps = cfg.train.outer_iterations / cfg.train.schedule_period;
  state.dual.gamma = cfg.gamma0;
  state.dual.gamma_lr = cfg.gamma_lr;
  state.dual.r_max = cfg.r_max_start;
  state.dual.r_max_end = cfg.r_max_end;
  state.dual.r_max_mult =
      budget_schedule_multiplier(cfg.r_max_start, cfg.r_max_end,
                                 std::max<int64_t>(schedule_steps, 1));
  state.dual.validate();
  if (cfg.objective == Objective::lagrangian) {
    int n = multi.settings.front().n;
    state.lagrangian.lambdas.assign(static_cast<size_t>(n), cfg.lambda0);
    state.lagrangian.rho = cfg.rho0;
    state.lagrangian.rho_lr = cfg.rho_lr;
    state.lagrangian.update_period = cfg.update_period;
  }

  AdamOptimizer opt(cfg.train.lr_outer);
  if (!resume_from.empty()) {
    Checkpoint ckpt = load_checkpoint(resume_from);
    net.load_params(ckpt.params);
    state = ckpt.state;
    restore_training(ckpt, opt, &source);
  }

  // Held-out validation profiles, one block per constituent setting.
  std::vector<Tensor> held_out;
  for (size_t k = 0; k < multi.settings.size(); ++k) {
    SeededStream vs(cfg.seed, 0xa11d + k);
    held_out.push_back(
        sample_profiles(multi.settings[k], cfg.train.valid_profiles, vs));
  }

  auto validate = [&](const MechanismNetwork& current, int64_t iter, bool final,
                      double r_max) {
    (void)iter;
    int64_t count = final ? cfg.train.valid_profiles
                          : std::min(cfg.train.valid_profiles,
                                     cfg.train.valid_profiles_periodic);
    int steps = final ? cfg.train.inner_steps_valid
                      : cfg.train.inner_steps_valid_periodic;
    double sum_rev = 0.0, sum_reg_mean = 0.0, sum_r = 0.0, sum_p = 0.0;
    for (size_t k = 0; k < multi.settings.size(); ++k) {
      EvalOptions opts;
      opts.lr_inner = cfg.train.lr_inner;
      opts.workers = cfg.threads;
      opts.pad_frame = frame;
      EvaluationReport rep = evaluate_mechanism(
          current, multi.settings[k], slice(held_out[k], 0, 0, count), steps,
          r_max, opts);
      sum_rev += rep.revenue;
      sum_reg_mean += rep.regret_mean;
      sum_r += rep.regret_sum;
      sum_p += rep.revenue;
    }
    double ns = static_cast<double>(multi.settings.size());
    HistoryRow row;
    row.revenue = sum_rev / ns;
    row.regret_mean = sum_reg_mean / ns;
    row.ratio = sum_p > 0.0 ? (sum_r / sum_p) / r_max
                            : std::numeric_limits<double>::quiet_NaN();
    return row;
  };

  std::string latest = cfg.out_dir + "/checkpoint_latest.bin";
  auto checkpoint_hook = [&](const MechanismNetwork& current,
                             const TrainState& st, const AdamOptimizer& o) {
    Checkpoint snap = make_checkpoint(current, st, o, &source);
    save_checkpoint(latest, snap);
    char tag[32];
    std::snprintf(tag, sizeof tag, "/checkpoint_%08lld.bin",
                  static_cast<long long>(st.iteration));
    save_checkpoint(cfg.out_dir + tag, snap);
  };

  TrainResult result = train(net, source, state, cfg.train, opt, validate,
                             checkpoint_hook);

  RunArtifacts artifacts{std::move(net), std::move(result), "", ""};
  artifacts.checkpoint_path = cfg.out_dir + "/checkpoint_final.bin";
  save_checkpoint(artifacts.checkpoint_path,
                  make_checkpoint(artifacts.net, artifacts.result.state, opt,
                                  &source));
  artifacts.metrics_path = cfg.out_dir + "/metrics.csv";
  export_metrics(artifacts.result.history, artifacts.metrics_path);

  set_strict_checks(strict_before);
  return artifacts;
}

EvaluationReport evaluate_checkpoint(const Checkpoint& ckpt,
                                     const SettingSpec& setting,
                                     int64_t profiles, int inner_steps,
                                     double r_max, uint64_t seed, int workers) {
  MechanismNetwork net = restore_network(ckpt);
  net.params().set_requires_grad(false);
  SeededStream stream(seed, 0xe0a1);
  Tensor batch = sample_profiles(setting, profiles, stream);
  EvalOptions opts;
  opts.workers = workers;
  if (ckpt.net_config.arch == Arch::regretnet &&
      (setting.n < ckpt.net_config.fixed_n ||
       setting.m < ckpt.net_config.fixed_m)) {
    opts.pad_frame =
        std::make_pair(ckpt.net_config.fixed_n, ckpt.net_config.fixed_m);
  }
  return evaluate_mechanism(net, setting, batch, inner_steps, r_max, opts);
}

// ---------------------------------------------------------------------------
// Baselines

BaselineResult run_baseline(BaselineMechanism::Kind kind,
                            const SettingSpec& setting, int64_t samples,
                            uint64_t seed) {
  if (kind != BaselineMechanism::Kind::vcg && !setting.unit_box()) {
    throw std::invalid_argument(
        "baseline: Myerson reserves assume U[0,1] valuations");
  }
  BaselineMechanism mech(kind);
  SeededStream stream(seed, 0xba5e);
  double sum = 0.0, sum_sq = 0.0;
  ValuationProfile profile;
  profile.n = setting.n;
  profile.m = setting.m;
  profile.values.assign(static_cast<size_t>(setting.n * setting.m), 0.0);
  for (int64_t s = 0; s < samples; ++s) {
    for (int i = 0; i < setting.n; ++i) {
      for (int j = 0; j < setting.m; ++j) {
        profile.at(i, j) = stream.uniform(setting.lo[static_cast<size_t>(j)],
                                          setting.hi[static_cast<size_t>(j)]);
      }
    }
    double rev = revenue(mech.run(profile));
    sum += rev;
    sum_sq += rev * rev;
  }
  BaselineResult res;
  res.samples = samples;
  res.revenue_mean = sum / static_cast<double>(samples);
  double var = sum_sq / static_cast<double>(samples) -
               res.revenue_mean * res.revenue_mean;
  res.standard_error = std::sqrt(std::max(var, 0.0) / static_cast<double>(samples));
  return res;
}

// ---------------------------------------------------------------------------
// Heatmaps

HeatmapResult heatmap(const Mechanism& mech, const SettingSpec& setting,
                      int grid) {
  if (setting.n != 1 || setting.m != 2) {
    throw std::invalid_argument("heatmap: needs a 1-bidder 2-item setting");
  }
  if (grid < 2) throw std::invalid_argument("heatmap: grid must be >= 2");
  if (!mech.accepts(1, 2)) {
    throw ShapeError("heatmap: mechanism rejects the 1x2 shape");
  }

  HeatmapResult res;
  res.grid = grid;
  for (int a = 0; a < grid; ++a) {
    double t = static_cast<double>(a) / static_cast<double>(grid - 1);
    res.axis1.push_back(setting.lo[0] + (setting.hi[0] - setting.lo[0]) * t);
    res.axis2.push_back(setting.lo[1] + (setting.hi[1] - setting.lo[1]) * t);
  }

  std::vector<double> bids(static_cast<size_t>(grid) * grid * 2);
  for (int a = 0; a < grid; ++a) {
    for (int b = 0; b < grid; ++b) {
      size_t cell = (static_cast<size_t>(a) * grid + b) * 2;
      bids[cell] = res.axis1[static_cast<size_t>(a)];
      bids[cell + 1] = res.axis2[static_cast<size_t>(b)];
    }
  }
  ForwardOutput out =
      mech.forward(Tensor::from({static_cast<int64_t>(grid) * grid, 1, 2},
                                std::move(bids)));

  res.item_probability.assign(2, std::vector<double>(static_cast<size_t>(grid) * grid));
  for (int64_t cell = 0; cell < static_cast<int64_t>(grid) * grid; ++cell) {
    for (int j = 0; j < 2; ++j) {
      res.item_probability[static_cast<size_t>(j)][static_cast<size_t>(cell)] =
          out.allocation.values()[static_cast<size_t>(cell * 2 * 2 + j)];
    }
  }

  // Known optimal-region boundaries.
  if (setting.unit_box()) {
    // Two symmetric items on [0,1]: single-item price 2/3, bundle price
    // (4 - sqrt(2)) / 3.
    double p = 2.0 / 3.0;
    double q = (4.0 - std::sqrt(2.0)) / 3.0;
    res.overlay = {
        {"item1-price", p, 0.0, p, q - p},
        {"item2-price", 0.0, p, q - p, p},
        {"bundle-diagonal", p, q - p, q - p, p},
        {"item1-vs-bundle", p, q - p, 1.0, q - p},
        {"item2-vs-bundle", q - p, p, q - p, 1.0},
    };
  } else {
    // Asymmetric box: best menu of the family
    // {skip, (item1 + q2-lottery on item2) at pa, bundle at pb},
    // found by nested grid search over the box distribution.
    double lo1 = setting.lo[0], hi1 = setting.hi[0];
    double lo2 = setting.lo[1], hi2 = setting.hi[1];
    const int quad = 160;
    auto revenue_of = [&](double q2, double pa, double pb) {
      double acc = 0.0;
      for (int a = 0; a < quad; ++a) {
        double v1 = lo1 + (hi1 - lo1) * (a + 0.5) / quad;
        for (int b = 0; b < quad; ++b) {
          double v2 = lo2 + (hi2 - lo2) * (b + 0.5) / quad;
          double ua = v1 + q2 * v2 - pa;
          double ub = v1 + v2 - pb;
          if (ub >= ua && ub >= 0.0) acc += pb;
          else if (ua > 0.0) acc += pa;
        }
      }
      return acc / static_cast<double>(quad * quad);
    };
    double best_rev = -1.0, best_q2 = 0.5, best_pa = 0.0, best_pb = 0.0;
    double pa_lo = lo1, pa_hi = hi1 + hi2, step = 0.25;
    for (int refine = 0; refine < 3; ++refine) {
      for (double q2 = 0.0; q2 <= 1.0 + 1e-9; q2 += refine == 0 ? 0.125 : 0.03125) {
        for (double pa = pa_lo; pa <= pa_hi; pa += step) {
          for (double pb = pa; pb <= pa_hi; pb += step) {
            double rev = revenue_of(q2, pa, pb);
            if (rev > best_rev) {
              best_rev = rev;
              best_q2 = q2;
              best_pa = pa;
              best_pb = pb;
            }
          }
        }
      }
      pa_lo = std::max(lo1, best_pa - 2.0 * step);
      pa_hi = std::min(hi1 + hi2, best_pb + 2.0 * step);
      step *= 0.25;
    }
    double split = best_q2 < 1.0 ? (best_pb - best_pa) / (1.0 - best_q2) : hi2;
    res.overlay = {
        {"menu-a-boundary", best_pa - best_q2 * lo2, lo2,
         best_pa - best_q2 * std::min(split, hi2), std::min(split, hi2)},
        {"bundle-boundary", best_pb - std::min(split, hi2), std::min(split, hi2),
         best_pb - hi2, hi2},
        {"lottery-vs-bundle", std::max(lo1, best_pa - best_q2 * lo2),
         std::min(split, hi2), hi1, std::min(split, hi2)},
    };
  }
  return res;
}

void write_heatmap(const HeatmapResult& res, const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (size_t j = 0; j < res.item_probability.size(); ++j) {
    std::ofstream out(dir + "/heatmap_item" + std::to_string(j) + ".csv",
                      std::ios::trunc);
    for (int a = 0; a < res.grid; ++a) {
      for (int b = 0; b < res.grid; ++b) {
        if (b) out << ',';
        out << format_double(
            res.item_probability[j][static_cast<size_t>(a) * res.grid + b]);
      }
      out << '\n';
    }
  }
  {
    std::ofstream out(dir + "/heatmap_axes.csv", std::ios::trunc);
    out << "axis,values\n";
    for (int axis = 0; axis < 2; ++axis) {
      out << (axis == 0 ? "item0" : "item1");
      const auto& vals = axis == 0 ? res.axis1 : res.axis2;
      for (double v : vals) out << ',' << format_double(v);
      out << '\n';
    }
  }
  {
    std::ofstream out(dir + "/heatmap_overlay.csv", std::ios::trunc);
    out << "name,x0,y0,x1,y1\n";
    for (const auto& seg : res.overlay) {
      out << seg.name << ',' << format_double(seg.x0) << ','
          << format_double(seg.y0) << ',' << format_double(seg.x1) << ','
          << format_double(seg.y1) << '\n';
    }
  }
}

double heatmap_interior_mad(const HeatmapResult& res) {
  int g = res.grid;
  int margin = std::max(1, g / 10);
  double acc = 0.0;
  int64_t count = 0;
  for (const auto& item : res.item_probability) {
    for (int a = margin; a < g - margin; ++a) {
      for (int b = margin; b < g - margin; ++b) {
        double z = item[static_cast<size_t>(a) * g + b];
        acc += std::min(z, 1.0 - z);
        ++count;
      }
    }
  }
  return acc / static_cast<double>(count);
}

}  // namespace auctionlab
