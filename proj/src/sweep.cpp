#include "lightpeft/sweep.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "lightpeft/errors.hpp"

namespace lightpeft {

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::rho: return "rho";
    case SweepAxis::t_prime: return "t_prime";
    case SweepAxis::lambda: return "lambda";
  }
  return "?";
}

SweepAxis parse_sweep_axis(const std::string& text) {
  if (text == "rho") return SweepAxis::rho;
  if (text == "t_prime" || text == "t-prime") return SweepAxis::t_prime;
  if (text == "lambda") return SweepAxis::lambda;
  throw ConfigError("unknown sweep axis '" + text + "' (expected rho, t_prime or lambda)");
}

RunConfig apply_sweep_value(const RunConfig& base, SweepAxis axis, double value) {
  RunConfig c = base;
  switch (axis) {
    case SweepAxis::rho:
      if (!(value >= 0.0 && value < 1.0)) throw ConfigError("rho sweep values must lie in [0, 1)");
      c.train.rho_heads = value;
      c.train.rho_ffn = value;
      break;
    case SweepAxis::t_prime:
      if (!(value >= 0.0 && value < 1.0)) throw ConfigError("t_prime sweep values are fractions in [0, 1)");
      c.train.estimation_steps =
          static_cast<std::size_t>(std::llround(value * static_cast<double>(base.train.total_steps)));
      break;
    case SweepAxis::lambda:
      if (!(value >= 0.0)) throw ConfigError("lambda sweep values must be nonnegative");
      c.train.penalty.lambda_heads = value;
      c.train.penalty.lambda_ffn = value;
      break;
  }
  return c;
}

SweepResult run_sweep(const RunConfig& base, SweepAxis axis, const std::vector<double>& values,
                      std::size_t seeds) {
  if (values.size() < 2) throw ConfigError("a sweep needs at least two values");
  if (seeds == 0) throw ConfigError("a sweep needs at least one seed");
  SweepResult result;
  result.axis = axis;
  for (double value : values) {
    SweepRow row;
    row.value = value;
    row.mean_head_mask = 0.0;
    row.mean_ffn_mask = 0.0;
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t k = 0; k < seeds; ++k) {
      RunConfig cfg = apply_sweep_value(base, axis, value);
      cfg.train.seed = base.train.seed + k;
      const RunReport report = run_light_peft(cfg).report;
      row.accuracies.push_back(report.accuracy);
      row.accuracy += report.accuracy / static_cast<double>(seeds);
      row.foundation_retention = report.foundation_retention;
      row.trainable_retention = report.trainable_retention;
      row.mean_head_mask += report.mean_head_mask / static_cast<double>(seeds);
      row.mean_ffn_mask += report.mean_ffn_mask / static_cast<double>(seeds);
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.rows.push_back(std::move(row));
  }
  return result;
}

void write_sweep(const SweepResult& result, std::ostream& out, ReportFormat format) {
  const char* cols[] = {"axis", "value", "accuracy", "foundation_retention", "trainable_retention",
                        "mean_abs_head_mask", "mean_abs_ffn_mask", "time.seconds"};
  const bool tsv = format == ReportFormat::tsv;
  auto cell = [&](const auto& v, int width) {
    if (tsv) {
      out << v;
    } else {
      out << std::left << std::setw(width) << v;
    }
  };
  for (std::size_t i = 0; i < std::size(cols); ++i) {
    if (tsv && i) out << '\t';
    cell(cols[i], i == 0 ? 9 : 22);
  }
  out << '\n';
  out << std::setprecision(6);
  for (const SweepRow& r : result.rows) {
    const double values[] = {r.value, r.accuracy, r.foundation_retention, r.trainable_retention,
                             r.mean_head_mask, r.mean_ffn_mask, r.seconds};
    cell(to_string(result.axis), 9);
    for (double v : values) {
      if (tsv) out << '\t';
      cell(v, 22);
    }
    out << '\n';
  }
}

}  // namespace lightpeft
