#include "koopguide/nlp_solver.hpp"

#include <cmath>
#include <deque>
#include <limits>
#include <utility>

#include "koopguide/errors.hpp"

namespace koopguide {

Eigen::Index NlpProblem::eq_count() const {
  Eigen::Index n = 0;
  for (const auto& b : eq_constraints) n += b.dim;
  return n;
}

Eigen::Index NlpProblem::ineq_count() const {
  Eigen::Index n = 0;
  for (const auto& b : ineq_constraints) n += b.dim;
  return n;
}

namespace {

void eval_blocks(const std::vector<ConstraintBlock>& blocks, Eigen::Index n,
                 const Eigen::VectorXd& z, Eigen::VectorXd& c,
                 Eigen::MatrixXd* jac) {
  Eigen::Index total = 0;
  for (const auto& b : blocks) total += b.dim;
  c.resize(total);
  if (jac) jac->resize(total, n);
  Eigen::Index row = 0;
  Eigen::VectorXd v;
  Eigen::MatrixXd j;
  for (const auto& b : blocks) {
    if (b.dim == 0) continue;
    b.eval(z, v, jac ? &j : nullptr);
    c.segment(row, b.dim) = v;
    if (jac) jac->middleRows(row, b.dim) = j;
    row += b.dim;
  }
}

}  // namespace

void NlpProblem::eval_eq(const Eigen::VectorXd& z, Eigen::VectorXd& c,
                         Eigen::MatrixXd* jac) const {
  eval_blocks(eq_constraints, decision_dim, z, c, jac);
}

void NlpProblem::eval_ineq(const Eigen::VectorXd& z, Eigen::VectorXd& c,
                           Eigen::MatrixXd* jac) const {
  eval_blocks(ineq_constraints, decision_dim, z, c, jac);
}

void NlpProblem::check() const {
  if (decision_dim <= 0) throw PreconditionError("nlp: empty decision vector");
  if (!objective) throw PreconditionError("nlp: missing objective");
  if (lower.size() != decision_dim || upper.size() != decision_dim)
    throw PreconditionError("nlp: box bounds have the wrong size");
  if ((lower.array() > upper.array()).any())
    throw PreconditionError("nlp: lower bound exceeds upper bound");
  for (const auto* blocks : {&eq_constraints, &ineq_constraints})
    for (const auto& b : *blocks)
      if (b.dim < 0 || (b.dim > 0 && !b.eval))
        throw PreconditionError("nlp: malformed constraint block");
}

std::string to_string(SolverStatus s) {
  switch (s) {
    case SolverStatus::Converged:
      return "converged";
    case SolverStatus::IterationLimit:
      return "iteration_limit";
    case SolverStatus::EvaluationError:
      return "evaluation_error";
  }
  return "unknown";
}

namespace {

class AugmentedLagrangian {
 public:
  AugmentedLagrangian(const NlpProblem& p, Eigen::Index n_eq,
                      Eigen::Index n_in, double rho)
      : p_(p),
        lam_eq_(Eigen::VectorXd::Zero(n_eq)),
        lam_in_(Eigen::VectorXd::Zero(n_in)),
        rho_(rho) {}

  double operator()(const Eigen::VectorXd& z, Eigen::VectorXd* grad) const {
    Eigen::VectorXd fg;
    const double f = p_.objective(z, grad ? &fg : nullptr);
    Eigen::VectorXd ce, ci;
    Eigen::MatrixXd je, ji;
    p_.eval_eq(z, ce, grad ? &je : nullptr);
    p_.eval_ineq(z, ci, grad ? &ji : nullptr);

    double phi = f - lam_eq_.dot(ce) + 0.5 * rho_ * ce.squaredNorm();
    Eigen::VectorXd wi(ci.size());
    for (Eigen::Index i = 0; i < ci.size(); ++i) {
      if (ci(i) - lam_in_(i) / rho_ < 0.0) {
        phi += -lam_in_(i) * ci(i) + 0.5 * rho_ * ci(i) * ci(i);
        wi(i) = -lam_in_(i) + rho_ * ci(i);
      } else {
        phi -= 0.5 * lam_in_(i) * lam_in_(i) / rho_;
        wi(i) = 0.0;
      }
    }
    if (!std::isfinite(phi)) throw DomainError("non-finite merit value");
    if (grad) {
      *grad = fg;
      if (ce.size() > 0) *grad += je.transpose() * (rho_ * ce - lam_eq_);
      if (ci.size() > 0) *grad += ji.transpose() * wi;
      if (!grad->allFinite()) throw DomainError("non-finite gradient");
    }
    return phi;
  }

  // max(|c_eq|, |min(c_in, lambda_in / rho)|): zero exactly at a KKT pair.
  double kkt_residual(const Eigen::VectorXd& ce, const Eigen::VectorXd& ci) const {
    double r = ce.size() ? ce.lpNorm<Eigen::Infinity>() : 0.0;
    for (Eigen::Index i = 0; i < ci.size(); ++i)
      r = std::max(r, std::abs(std::min(ci(i), lam_in_(i) / rho_)));
    return r;
  }

  void update_multipliers(const Eigen::VectorXd& ce, const Eigen::VectorXd& ci) {
    lam_eq_ -= rho_ * ce;
    lam_in_ = (lam_in_ - rho_ * ci).cwiseMax(0.0);
  }

  double rho() const { return rho_; }
  void set_rho(double r) { rho_ = r; }

 private:
  const NlpProblem& p_;
  Eigen::VectorXd lam_eq_;
  Eigen::VectorXd lam_in_;
  double rho_;
};

struct InnerResult {
  Eigen::VectorXd z;
  double pg_norm = 0.0;
  int iterations = 0;
};

class BoxProjection {
 public:
  BoxProjection(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi)
      : lo_(lo), hi_(hi) {}
  Eigen::VectorXd operator()(const Eigen::VectorXd& z) const {
    return z.cwiseMax(lo_).cwiseMin(hi_);
  }
  double pg_norm(const Eigen::VectorXd& z, const Eigen::VectorXd& g) const {
    return (z - (*this)(z - g)).lpNorm<Eigen::Infinity>();
  }
  // Coordinates held at a bound by the gradient are fixed for this step.
  Eigen::VectorXd free_mask(const Eigen::VectorXd& z,
                            const Eigen::VectorXd& g) const {
    Eigen::VectorXd m = Eigen::VectorXd::Ones(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i)
      if ((z(i) <= lo_(i) && g(i) > 0.0) || (z(i) >= hi_(i) && g(i) < 0.0))
        m(i) = 0.0;
    return m;
  }

 private:
  Eigen::VectorXd lo_, hi_;
};

// Projected L-BFGS on the box. The first evaluation is allowed to throw.
InnerResult projected_lbfgs(const AugmentedLagrangian& phi_fn,
                            const BoxProjection& proj, Eigen::VectorXd z,
                            double tol, int max_iter, int memory) {
  Eigen::VectorXd g;
  double phi = phi_fn(z, &g);
  std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> mem;

  InnerResult res;
  int it = 0;
  for (; it < max_iter; ++it) {
    if (proj.pg_norm(z, g) <= tol) break;
    const Eigen::VectorXd mask = proj.free_mask(z, g);
    Eigen::VectorXd q = g.cwiseProduct(mask);

    // Two-loop recursion restricted to the free coordinates.
    std::vector<double> alpha(mem.size(), 0.0), rho(mem.size(), 0.0);
    double gamma = 1.0;
    bool have_pair = false;
    for (int i = static_cast<int>(mem.size()) - 1; i >= 0; --i) {
      const Eigen::VectorXd s = mem[i].first.cwiseProduct(mask);
      const Eigen::VectorXd y = mem[i].second.cwiseProduct(mask);
      const double sy = s.dot(y);
      if (sy <= 1e-12) continue;
      rho[i] = 1.0 / sy;
      alpha[i] = rho[i] * s.dot(q);
      q -= alpha[i] * y;
      if (!have_pair) {
        gamma = sy / y.squaredNorm();
        have_pair = true;
      }
    }
    Eigen::VectorXd r = gamma * q;
    for (std::size_t i = 0; i < mem.size(); ++i) {
      if (rho[i] == 0.0) continue;
      const Eigen::VectorXd s = mem[i].first.cwiseProduct(mask);
      const Eigen::VectorXd y = mem[i].second.cwiseProduct(mask);
      const double beta = rho[i] * y.dot(r);
      r += s * (alpha[i] - beta);
    }
    Eigen::VectorXd d = -r.cwiseProduct(mask);
    if (!have_pair) {
      const double gmax = d.lpNorm<Eigen::Infinity>();
      if (gmax > 1.0) d /= gmax;
    }
    if (!(g.dot(d) < 0.0)) {
      d = -g.cwiseProduct(mask);
      const double gmax = d.lpNorm<Eigen::Infinity>();
      if (gmax > 1.0) d /= gmax;
      mem.clear();
    }

    bool accepted = false;
    Eigen::VectorXd z_new, g_new;
    double phi_new = 0.0;
    double step = 1.0;
    for (int k = 0; k < 40; ++k, step *= 0.5) {
      z_new = proj(z + step * d);
      const Eigen::VectorXd dz = z_new - z;
      if (dz.lpNorm<Eigen::Infinity>() == 0.0) break;
      try {
        phi_new = phi_fn(z_new, &g_new);
      } catch (const DomainError&) {
        continue;
      }
      if (phi_new <= phi + 1e-4 * g.dot(dz)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (!mem.empty()) {
        mem.clear();
        continue;
      }
      break;
    }
    const Eigen::VectorXd s = z_new - z;
    const Eigen::VectorXd y = g_new - g;
    if (s.dot(y) > 1e-10 * s.norm() * y.norm()) {
      mem.emplace_back(s, y);
      if (static_cast<int>(mem.size()) > memory) mem.pop_front();
    }
    z = std::move(z_new);
    g = std::move(g_new);
    phi = phi_new;
  }
  res.pg_norm = proj.pg_norm(z, g);
  res.z = std::move(z);
  res.iterations = it;
  return res;
}

struct Evaluated {
  Eigen::VectorXd z;
  double f = 0.0;
  double eq_viol = 0.0;
  double in_viol = 0.0;
  double viol() const { return std::max(eq_viol, in_viol); }
};

Evaluated evaluate_point(const NlpProblem& p, const Eigen::VectorXd& z,
                         Eigen::VectorXd* ce_out, Eigen::VectorXd* ci_out) {
  Evaluated e;
  e.z = z;
  e.f = p.objective(z, nullptr);
  Eigen::VectorXd ce, ci;
  p.eval_eq(z, ce, nullptr);
  p.eval_ineq(z, ci, nullptr);
  e.eq_viol = ce.size() ? ce.lpNorm<Eigen::Infinity>() : 0.0;
  e.in_viol = ci.size() ? std::max(0.0, -ci.minCoeff()) : 0.0;
  if (ce_out) *ce_out = std::move(ce);
  if (ci_out) *ci_out = std::move(ci);
  return e;
}

bool better(const Evaluated& a, const Evaluated& b, double feas_tol) {
  const bool fa = a.viol() <= feas_tol;
  const bool fb = b.viol() <= feas_tol;
  if (fa && fb) return a.f < b.f;
  if (fa != fb) return fa;
  return a.viol() < b.viol();
}

NlpSolution to_solution(const Evaluated& e) {
  NlpSolution s;
  s.point = e.z;
  s.objective_value = e.f;
  s.max_eq_violation = e.eq_viol;
  s.max_ineq_violation = e.in_viol;
  return s;
}

}  // namespace

NlpSolution minimize(const NlpProblem& p, const Eigen::VectorXd& x0,
                     const SolverOptions& opts) {
  p.check();
  if (x0.size() != p.decision_dim)
    throw PreconditionError("minimize: start point has the wrong size");
  const BoxProjection proj(p.lower, p.upper);
  const Eigen::VectorXd z0 = proj(x0);

  Evaluated best;
  try {
    best = evaluate_point(p, z0, nullptr, nullptr);
  } catch (const DomainError& e) {
    NlpSolution s;
    s.point = z0;
    s.status = SolverStatus::EvaluationError;
    s.message = std::string("start point not evaluable: ") + e.what();
    return s;
  }

  const Eigen::Index n_eq = p.eq_count();
  const Eigen::Index n_in = p.ineq_count();
  const bool constrained = n_eq + n_in > 0;
  int total_iters = 0;
  bool converged = false;

  // Unconverged runs restart from z0 with a stiffer initial penalty.
  const double escalation = opts.penalty_growth * opts.penalty_growth;
  double rho0 = opts.initial_penalty;
  for (int attempt = 0; attempt < (constrained ? 3 : 1) && !converged; ++attempt) {
    if (attempt > 0) {
      if (rho0 >= opts.max_penalty) break;
      rho0 = std::min(rho0 * escalation, opts.max_penalty);
    }
    AugmentedLagrangian al(p, n_eq, n_in, rho0);
    Eigen::VectorXd z = z0;
    double inner_tol = constrained ? std::max(opts.opt_tol, 1e-1) : opts.opt_tol;
    double prev_viol = std::numeric_limits<double>::infinity();

    for (int outer = 0; outer < opts.max_outer; ++outer) {
      InnerResult inner;
      try {
        inner = projected_lbfgs(al, proj, z, inner_tol, opts.max_inner,
                                opts.lbfgs_memory);
      } catch (const DomainError&) {
        break;  // only the first evaluation can throw; keep the best iterate
      }
      total_iters += inner.iterations;
      z = inner.z;

      Eigen::VectorXd ce, ci;
      const Evaluated last = evaluate_point(p, z, &ce, &ci);
      if (better(last, best, opts.feas_tol)) best = last;
      const double viol = al.kkt_residual(ce, ci);
      if (viol <= opts.feas_tol && inner.pg_norm <= opts.opt_tol) {
        converged = true;
        best = last;
        break;
      }
      al.update_multipliers(ce, ci);
      if (viol > 0.25 * prev_viol)
        al.set_rho(std::min(al.rho() * opts.penalty_growth, opts.max_penalty));
      prev_viol = viol;
      inner_tol = std::max(opts.opt_tol, 0.1 * inner_tol);
    }
  }

  NlpSolution sol = to_solution(best);
  sol.iterations = total_iters;
  sol.converged = converged;
  sol.status = converged ? SolverStatus::Converged : SolverStatus::IterationLimit;
  if (!converged) sol.message = "iteration limit reached; returning best iterate";
  return sol;
}

Eigen::VectorXd fd_objective_gradient(const NlpProblem& p,
                                      const Eigen::VectorXd& z, double h) {
  Eigen::VectorXd g(z.size());
  Eigen::VectorXd zp = z, zm = z;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    zp(i) = z(i) + h;
    zm(i) = z(i) - h;
    g(i) = (p.objective(zp, nullptr) - p.objective(zm, nullptr)) / (2.0 * h);
    zp(i) = zm(i) = z(i);
  }
  return g;
}

Eigen::MatrixXd fd_constraint_jacobian(const ConstraintBlock& block,
                                       const Eigen::VectorXd& z, double h) {
  Eigen::MatrixXd jac(block.dim, z.size());
  Eigen::VectorXd zp = z, zm = z, cp, cm;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    zp(i) = z(i) + h;
    zm(i) = z(i) - h;
    block.eval(zp, cp, nullptr);
    block.eval(zm, cm, nullptr);
    jac.col(i) = (cp - cm) / (2.0 * h);
    zp(i) = zm(i) = z(i);
  }
  return jac;
}

}  // namespace koopguide
