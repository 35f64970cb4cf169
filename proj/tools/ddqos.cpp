// Command-line front end: ARMA fitting, reference calibration, closed-loop
// runs, parameter sweeps and post-run analysis.

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ddqos/ddqos.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

double parse_number(const std::string& s) {
  if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ddqos::ConfigError("not a number: '" + s + "'");
  }
  if (used != s.size()) throw ddqos::ConfigError("not a number: '" + s + "'");
  return v;
}

/// "start:stop:count" (inclusive, evenly spaced) or a comma list.
std::vector<double> parse_eps(const std::string& spec) {
  const auto parts = split(spec, ':');
  if (parts.size() == 3 && spec.find(',') == std::string::npos) {
    const double a = parse_number(parts[0]), b = parse_number(parts[1]);
    const double n = parse_number(parts[2]);
    if (n < 1 || n != std::floor(n)) throw ddqos::ConfigError("--eps count must be a positive integer");
    std::vector<double> out;
    const auto count = static_cast<int>(n);
    for (int k = 0; k < count; ++k) out.push_back(count == 1 ? a : a + (b - a) * k / (count - 1));
    return out;
  }
  std::vector<double> out;
  for (const auto& p : split(spec, ',')) out.push_back(parse_number(p));
  if (out.empty()) throw ddqos::ConfigError("--eps is empty");
  return out;
}

/// Comma list; each item is a half-width "b" (interval [-b, b]), "lo:hi", or "none".
std::vector<ddqos::QosBounds> parse_bounds(const std::string& spec) {
  std::vector<ddqos::QosBounds> out;
  for (const auto& item : split(spec, ',')) {
    if (item == "none") {
      out.push_back({});
      continue;
    }
    const auto lh = split(item, ':');
    ddqos::QosBounds b;
    if (lh.size() == 2) {
      b = {parse_number(lh[0]), parse_number(lh[1])};
    } else if (lh.size() == 1) {
      const double w = parse_number(lh[0]);
      b = {-w, w};
    } else {
      throw ddqos::ConfigError("bad bounds item '" + item + "'");
    }
    if (!(b.lower <= b.upper)) throw ddqos::ConfigError("bounds item '" + item + "' has lower > upper");
    out.push_back(b);
  }
  if (out.empty()) throw ddqos::ConfigError("bounds list is empty");
  return out;
}

std::string csv_num(double v) { return ddqos::detail::fmt(v); }

int cmd_fit_arma(const std::string& csv, const std::string& out_path) {
  if (!std::filesystem::exists(csv)) {
    std::cerr << "error: input file not found: " << csv << "\n";
    return kConfigError;
  }
  const auto series = ddqos::read_series_csv(csv);
  const auto model = ddqos::els_fit(series);
  nlohmann::json j = model;
  j["samples"] = series.size();
  std::ofstream out(out_path);
  if (!out) throw ddqos::Error("cannot write " + out_path);
  out << j.dump(2) << "\n";
  std::cout << j.dump(2) << "\n";
  return kOk;
}

int cmd_calibrate(const std::string& config_path, const ddqos::CalibrationOptions& opt, const std::string& write_to) {
  auto cfg = ddqos::load_config(config_path);
  const auto res = ddqos::calibrate_reference(cfg, opt);
  nlohmann::json j{{"scale", res.scale}, {"nrmse", res.nrmse}, {"iterations", res.iterations},
                   {"population", cfg.population}, {"seed", cfg.seed}};
  std::cout << j.dump(2) << "\n";
  if (!write_to.empty()) {
    cfg.reference.scale = res.scale;
    std::ofstream out(write_to);
    if (!out) throw ddqos::Error("cannot write " + write_to);
    out << ddqos::write_config(cfg);
  }
  return kOk;
}

int cmd_run(const std::string& config_path, const std::string& out_dir) {
  const auto cfg = ddqos::load_config(config_path);
  const auto report = ddqos::run_experiment(cfg);
  ddqos::emit_results(report, out_dir);
  const auto s = ddqos::summary_json(report);
  std::cout << "nrmse " << s["tracking"].value("nrmse", nlohmann::json()).dump() << ", opt-outs "
            << report.outcome.result.total_optouts << ", QoS variance " << report.outcome.result.qos_moments.variance()
            << " (predicted " << report.prediction->variance << ")\n";
  std::cout << "wrote " << out_dir << "\n";
  return kOk;
}

int cmd_sweep(const std::string& config_path, const std::string& eps_spec, const std::string& bounds_spec,
              const std::string& cycling_spec, const std::string& out_path) {
  const auto cfg = ddqos::load_config(config_path);
  const auto eps = parse_eps(eps_spec);
  for (double e : eps)
    if (!(e >= 0.0 && e <= 1.0)) throw ddqos::ConfigError("--eps values must lie in [0, 1]");
  const auto bounds = bounds_spec.empty() ? std::vector<ddqos::QosBounds>{cfg.cleaning.bounds} : parse_bounds(bounds_spec);
  std::vector<std::optional<ddqos::QosBounds>> cycling{std::nullopt};
  if (!cycling_spec.empty()) {
    cycling.clear();
    for (const auto& b : parse_bounds(cycling_spec)) cycling.emplace_back(b);
  }
  std::vector<ddqos::SweepCell> cells;
  for (const auto& c : cycling)
    for (const auto& b : bounds)
      for (double e : eps) cells.push_back({e, b, c});

  const auto rows = ddqos::sweep(cfg, cells);
  std::ostringstream os;
  os << "epsilon,lower,upper,cycling_lower,cycling_upper,nrmse,rms_error,rms_reference,total_optouts,"
        "max_optout_fraction,out_of_bounds,qos_variance,saturations,error\n";
  for (const auto& r : rows) {
    const double inf = std::numeric_limits<double>::infinity();
    os << csv_num(r.cell.epsilon) << ',' << csv_num(r.cell.cleaning.lower) << ',' << csv_num(r.cell.cleaning.upper)
       << ',' << csv_num(r.cell.cycling ? r.cell.cycling->lower : -inf) << ','
       << csv_num(r.cell.cycling ? r.cell.cycling->upper : inf) << ',' << csv_num(r.nrmse) << ','
       << csv_num(r.rms_error) << ',' << csv_num(r.rms_reference) << ',' << r.total_optouts << ','
       << csv_num(r.max_optout_fraction) << ',' << r.out_of_bounds << ',' << csv_num(r.qos_variance) << ','
       << r.saturations << ',' << '"' << r.error << '"' << "\n";
  }
  if (out_path.empty()) {
    std::cout << os.str();
  } else {
    std::ofstream out(out_path);
    if (!out) throw ddqos::Error("cannot write " + out_path);
    out << os.str();
    std::cout << "wrote " << rows.size() << " rows to " << out_path << "\n";
  }
  for (const auto& r : rows)
    if (!r.ok) return kRuntimeError;
  return kOk;
}

int cmd_analyze(const std::string& dir) {
  if (!std::filesystem::is_directory(dir)) {
    std::cerr << "error: not a directory: " << dir << "\n";
    return kConfigError;
  }
  const auto a = ddqos::analyze(dir);
  const auto j = ddqos::analysis_json(a);
  std::ofstream out(std::filesystem::path(dir) / "analysis.json");
  if (!out) throw ddqos::Error("cannot write analysis.json in " + dir);
  out << j.dump(2) << "\n";
  std::cout << j.dump(2) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mean-field demand dispatch with QoS guarantees"};
  app.require_subcommand(1);

  std::string csv, model_out = "model.json";
  auto* fit = app.add_subcommand("fit-arma", "Fit an ARMA(2,1) model to a one-column CSV by extended least squares");
  fit->add_option("csv", csv, "Input series")->required();
  fit->add_option("-o,--output", model_out, "Model JSON");

  std::string config;
  ddqos::CalibrationOptions cal_opt;
  std::string cal_write;
  auto* cal = app.add_subcommand("calibrate", "Find the largest reference scale with NRMSE below the target");
  cal->add_option("-c,--config", config, "Experiment config (TOML)")->required();
  cal->add_option("--lower", cal_opt.lower, "Lower end of the scale bracket");
  cal->add_option("--upper", cal_opt.upper, "Upper end of the scale bracket");
  cal->add_option("--target", cal_opt.target_nrmse, "NRMSE target");
  cal->add_option("--tol", cal_opt.tolerance, "Relative bracket width at which bisection stops");
  cal->add_option("--write-config", cal_write, "Write the config with the calibrated scale to this file");

  std::string out_dir;
  auto* run = app.add_subcommand("run", "Closed-loop simulation; writes tracking, histogram, PSD and summary files");
  run->add_option("-c,--config", config, "Experiment config (TOML)")->required();
  run->add_option("-o,--output", out_dir, "Output directory")->required();

  std::string eps_spec = "1", bounds_spec, cycling_spec, sweep_out;
  auto* sw = app.add_subcommand("sweep", "Grid of runs over eps and QoS bounds with a shared seed");
  sw->add_option("-c,--config", config, "Experiment config (TOML)")->required();
  sw->add_option("--eps", eps_spec, "start:stop:count or comma list");
  sw->add_option("--bounds", bounds_spec, "Cleaning bounds: comma list of half-widths, lo:hi pairs or none");
  sw->add_option("--cycling-bounds", cycling_spec, "Cycling bounds, same syntax; enables the cycling metric");
  sw->add_option("-o,--output", sweep_out, "CSV output (default stdout)");

  std::string analyze_dir;
  auto* an = app.add_subcommand("analyze", "Gaussian overlays and variance checks for a run directory");
  an->add_option("outdir", analyze_dir, "Directory written by run")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (*fit) return cmd_fit_arma(csv, model_out);
    if (*cal) return cmd_calibrate(config, cal_opt, cal_write);
    if (*run) return cmd_run(config, out_dir);
    if (*sw) return cmd_sweep(config, eps_spec, bounds_spec, cycling_spec, sweep_out);
    if (*an) return cmd_analyze(analyze_dir);
  } catch (const ddqos::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kOk;
}
