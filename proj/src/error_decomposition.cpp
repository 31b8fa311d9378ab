#include <random>

#include "geom/csv.hpp"
#include "geom/errors.hpp"
#include "geom/evaluator.hpp"

namespace geom {

double ErrorDecomposition::matching_sum_norm() const {
  double total = 0.0;
  for (const auto& d : matching) total += d.norm();
  return total;
}

ErrorDecomposition error_decomposition(const std::vector<ParameterVector>& expert, const StudentRun& student,
                                       int p, int q, int stages, const ParameterVector& eps0,
                                       double tolerance) {
  if (p < 1 || q < 0 || stages < 1) throw ConfigError("error_decomposition: need p >= 1, q >= 0, stages >= 1");
  const auto need = static_cast<std::size_t>(stages) * static_cast<std::size_t>(p) + 1;
  if (expert.size() < need) {
    throw ConfigError("error_decomposition: " + std::to_string(stages) + " stages of p=" + std::to_string(p) +
                      " need " + std::to_string(need) + " snapshots, trajectory has " +
                      std::to_string(expert.size()));
  }
  if (eps0.size() != expert.front().size()) throw DimensionError("error_decomposition: eps0 has the wrong length");

  ErrorDecomposition d;
  d.stages = stages;
  d.p = p;
  d.q = q;
  d.epsilon.push_back(eps0);
  ParameterVector sum_init = ParameterVector::Zero(eps0.size());
  ParameterVector sum_match = ParameterVector::Zero(eps0.size());
  for (int n = 0; n < stages; ++n) {
    const ParameterVector& start = expert[static_cast<std::size_t>(n * p)];
    const ParameterVector& end = expert[static_cast<std::size_t>((n + 1) * p)];
    const ParameterVector entry = start + d.epsilon.back();

    const ParameterVector clean_end = student(start, q);
    const ParameterVector student_end = student(entry, q);
    const ParameterVector theta_s_clean = clean_end - start;
    const ParameterVector theta_s_entry = student_end - entry;
    const ParameterVector theta_t = end - start;

    d.initialization.push_back(theta_s_entry - theta_s_clean);
    d.matching.push_back(theta_s_clean - theta_t);
    d.epsilon.push_back(student_end - end);

    sum_init += d.initialization.back();
    sum_match += d.matching.back();
    const double r = (d.epsilon.back() - (eps0 + sum_init + sum_match)).cwiseAbs().maxCoeff();
    d.residual.push_back(r);
    d.max_residual = std::max(d.max_residual, r);
  }
  if (!(d.max_residual <= tolerance)) {
    throw AnalyzerError("error decomposition identity violated: max coordinate residual " +
                        csv::format_double(d.max_residual) + " > " + csv::format_double(tolerance));
  }
  return d;
}

ErrorDecomposition error_decomposition(const ExpertTrajectory& traj, const CondensedSet& s, int p, int q,
                                       double eta, int stages, std::optional<ParameterVector> eps0,
                                       double tolerance) {
  traj.validate();
  s.validate();
  const ParameterVector e0 = eps0 ? *eps0 : ParameterVector::Zero(traj.snapshots.front().size());
  const StudentRun run = [&](const ParameterVector& theta, int steps) {
    return inner_loop(traj.spec, theta, s, steps, eta, true);
  };
  return error_decomposition(traj.snapshots, run, p, q, stages, e0, tolerance);
}

void write_decomposition_csv(const ErrorDecomposition& d, const std::filesystem::path& path) {
  std::string out = "stage,eps_norm,init_norm,match_norm,residual\n";
  out += "0," + csv::format_double(d.epsilon.front().norm()) + ",,,\n";
  for (int n = 0; n < d.stages; ++n) {
    const auto k = static_cast<std::size_t>(n);
    out += std::to_string(n + 1) + "," + csv::format_double(d.epsilon[k + 1].norm()) + "," +
           csv::format_double(d.initialization[k].norm()) + "," + csv::format_double(d.matching[k].norm()) + "," +
           csv::format_double(d.residual[k]) + "\n";
  }
  csv::write_text(path, out);
}

LinearRegressionToy LinearRegressionToy::random(std::uint64_t seed, std::size_t n_t, std::size_t n_s) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  LinearRegressionToy toy;
  const double w_true = 1.5;
  for (std::size_t i = 0; i < n_t; ++i) {
    toy.xt.push_back(u(rng));
    toy.yt.push_back(w_true * toy.xt.back() + noise(rng));
  }
  for (std::size_t i = 0; i < n_s; ++i) {
    toy.xs.push_back(u(rng));
    toy.ys.push_back(u(rng));
  }
  toy.w0 = u(rng);
  return toy;
}

namespace {

double mse_grad(double w, const std::vector<double>& x, const std::vector<double>& y) {
  double g = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) g += (w * x[i] - y[i]) * x[i];
  return g / static_cast<double>(x.size());
}

}  // namespace

std::vector<ParameterVector> LinearRegressionToy::expert(int epochs) const {
  std::vector<ParameterVector> out;
  ParameterVector w = ParameterVector::Constant(1, w0);
  out.push_back(w);
  for (int t = 0; t < epochs; ++t) {
    w(0) -= lr_t * mse_grad(w(0), xt, yt);
    out.push_back(w);
  }
  return out;
}

ParameterVector LinearRegressionToy::student(const ParameterVector& w, int steps) const {
  ParameterVector out = w;
  for (int i = 0; i < steps; ++i) out(0) -= lr_s * mse_grad(out(0), xs, ys);
  return out;
}

}  // namespace geom
