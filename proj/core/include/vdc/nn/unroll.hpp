#pragma once

#include <cmath>
#include <concepts>
#include <span>
#include <vector>

#include "vdc/dual.hpp"
#include "vdc/error.hpp"

namespace vdc::nn {

// Inner objective of an unrolled loop. `phi` packs every differentiable
// non-parameter input (synthetic pixels, label logits). For S in {R, Dual<R>}
//   S loss<S>(step, theta, phi, g_theta, g_phi)
// returns the step-`step` loss and accumulates its gradients into g_theta and
// (unless empty) g_phi.
template <class O, class R>
concept InnerObjective = requires(const O& o, int k, std::span<const R> t, std::span<R> g,
                                  std::span<const Dual<R>> td, std::span<Dual<R>> gd) {
  { o.template loss<R>(k, t, t, g, g) } -> std::convertible_to<R>;
  { o.template loss<Dual<R>>(k, td, td, gd, gd) } -> std::convertible_to<Dual<R>>;
};

template <class R>
struct UnrollPath {
  std::vector<std::vector<R>> thetas;  // steps + 1 iterates, thetas[0] = start
  std::vector<std::vector<R>> grads;   // inner gradient at each iterate
  std::vector<R> losses;

  const std::vector<R>& end() const { return thetas.back(); }
};

// `steps` plain gradient-descent steps theta <- theta - lr * grad, using the
// objective's batches first_step .. first_step + steps - 1.
template <class R, class O>
  requires InnerObjective<O, R>
UnrollPath<R> unrolled_steps(const O& obj, std::span<const R> theta0, std::span<const R> phi, R lr, int steps,
                             int first_step = 0) {
  if (steps < 1) throw DomainError("unrolled_steps: need at least one step");
  if (!(lr >= R(0))) throw DomainError("unrolled_steps: learning rate must be nonnegative");
  UnrollPath<R> path;
  path.thetas.reserve(static_cast<std::size_t>(steps) + 1);
  path.thetas.emplace_back(theta0.begin(), theta0.end());
  for (int k = 0; k < steps; ++k) {
    const std::vector<R>& theta = path.thetas.back();
    std::vector<R> g(theta.size(), R(0));
    const R l = obj.template loss<R>(first_step + k, theta, phi, g, std::span<R>{});
    if (!std::isfinite(static_cast<double>(l))) throw UnrollError("non-finite inner loss", k);
    std::vector<R> next(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) next[i] = theta[i] - lr * g[i];
    path.losses.push_back(l);
    path.grads.push_back(std::move(g));
    path.thetas.push_back(std::move(next));
  }
  return path;
}

template <class R>
struct UnrollGrad {
  std::vector<R> phi;  // dL/dphi
  R lr = R(0);         // dL/dlr
};

// Vector-Jacobian product of the unrolled map (phi, lr) -> theta_end against
// grad_end = dL/dtheta_end. Each reverse step needs one Hessian-vector
// product, obtained by running the objective's reverse pass on dual numbers
// whose tangent is the current adjoint.
template <class R, class O>
  requires InnerObjective<O, R>
UnrollGrad<R> unrolled_vjp(const O& obj, const UnrollPath<R>& path, std::span<const R> phi, R lr,
                           std::span<const R> grad_end, int first_step = 0) {
  const std::size_t P = grad_end.size();
  std::vector<R> a(grad_end.begin(), grad_end.end());
  UnrollGrad<R> out;
  out.phi.assign(phi.size(), R(0));

  std::vector<Dual<R>> phi_d(phi.size());
  for (std::size_t i = 0; i < phi.size(); ++i) phi_d[i] = Dual<R>(phi[i], R(0));
  std::vector<Dual<R>> theta_d(P), g_theta(P), g_phi(phi.size());

  for (int k = static_cast<int>(path.grads.size()) - 1; k >= 0; --k) {
    const std::vector<R>& theta = path.thetas[static_cast<std::size_t>(k)];
    const std::vector<R>& g = path.grads[static_cast<std::size_t>(k)];
    R dot(0);
    for (std::size_t i = 0; i < P; ++i) dot += a[i] * g[i];
    out.lr -= dot;

    for (std::size_t i = 0; i < P; ++i) {
      theta_d[i] = Dual<R>(theta[i], a[i]);
      g_theta[i] = Dual<R>();
    }
    for (auto& v : g_phi) v = Dual<R>();
    const Dual<R> l = obj.template loss<Dual<R>>(first_step + k, theta_d, phi_d, g_theta, g_phi);
    if (!std::isfinite(static_cast<double>(l.v)) || !std::isfinite(static_cast<double>(l.d))) {
      throw UnrollError("non-finite second-order pass", k);
    }
    for (std::size_t i = 0; i < phi.size(); ++i) out.phi[i] -= lr * g_phi[i].d;
    for (std::size_t i = 0; i < P; ++i) a[i] -= lr * g_theta[i].d;
  }
  return out;
}

}  // namespace vdc::nn
