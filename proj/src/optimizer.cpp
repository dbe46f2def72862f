#include "dxchoice/optimizer.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "dxchoice/errors.hpp"

namespace dxchoice {

BfgsResult minimize_bfgs(const Objective& objective, Eigen::VectorXd x0, const BfgsOptions& options) {
    const Eigen::Index n = x0.size();
    BfgsResult out;
    out.x = std::move(x0);
    out.gradient = Eigen::VectorXd::Zero(n);
    out.value = objective(out.x, out.gradient);
    out.evaluations = 1;
    if (!std::isfinite(out.value) || !out.gradient.allFinite())
        throw NumericalError("objective is not finite at the starting point");

    Eigen::MatrixXd inv_hessian = Eigen::MatrixXd::Identity(n, n);
    bool first_update = true;
    Eigen::VectorXd trial_x(n);
    Eigen::VectorXd trial_g(n);

    while (true) {
        if (out.gradient.norm() < options.gradient_tolerance) {
            out.converged = true;
            out.status = "gradient tolerance reached";
            return out;
        }
        if (out.iterations >= options.max_iterations) {
            out.status = "iteration limit reached";
            return out;
        }

        Eigen::VectorXd direction = -inv_hessian * out.gradient;
        double slope = out.gradient.dot(direction);
        if (!(slope < 0.0)) {
            inv_hessian.setIdentity();
            first_update = true;
            direction = -out.gradient;
            slope = out.gradient.dot(direction);
        }
        const double dir_norm = direction.norm();
        if (dir_norm > options.max_step_norm) {
            direction *= options.max_step_norm / dir_norm;
            slope *= options.max_step_norm / dir_norm;
        }

        double alpha = 1.0;
        double trial_f = 0.0;
        bool accepted = false;
        for (int k = 0; k < options.max_backtracks; ++k) {
            trial_x = out.x + alpha * direction;
            trial_f = objective(trial_x, trial_g);
            ++out.evaluations;
            if (std::isfinite(trial_f) && trial_g.allFinite() &&
                trial_f <= out.value + options.armijo_constant * alpha * slope) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) {
            // Sufficient decrease may be invisible at rounding level; take the
            // full step if it is flat in value and improves the gradient.
            trial_x = out.x + direction;
            trial_f = objective(trial_x, trial_g);
            ++out.evaluations;
            const double flat = 1e-12 * (1.0 + std::abs(out.value));
            if (std::isfinite(trial_f) && trial_g.allFinite() && std::abs(trial_f - out.value) <= flat &&
                trial_g.norm() < out.gradient.norm()) {
                alpha = 1.0;
            } else {
                out.status = "line search failed";
                return out;
            }
        }

        const Eigen::VectorXd s = trial_x - out.x;
        const Eigen::VectorXd yv = trial_g - out.gradient;
        out.x = trial_x;
        out.value = trial_f;
        out.gradient = trial_g;
        ++out.iterations;

        const double sy = s.dot(yv);
        if (sy > 1e-12 * s.norm() * yv.norm()) {
            if (first_update) {
                inv_hessian *= sy / yv.squaredNorm();
                first_update = false;
            }
            const double rho = 1.0 / sy;
            const Eigen::MatrixXd left = Eigen::MatrixXd::Identity(n, n) - rho * s * yv.transpose();
            inv_hessian = left * inv_hessian * left.transpose() + rho * s * s.transpose();
        }
    }
}

}  // namespace dxchoice
