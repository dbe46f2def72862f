#pragma once

#include <Eigen/Core>
#include <functional>
#include <string>

namespace dxchoice {

/// Objective for minimization: returns f(x) and writes the gradient.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& gradient)>;

struct BfgsOptions {
    double gradient_tolerance{1e-6};  ///< on the Euclidean norm of the gradient
    int max_iterations{500};
    double armijo_constant{1e-4};
    int max_backtracks{50};
    double max_step_norm{5.0};  ///< longest trial step; guards against wild first steps
};

struct BfgsResult {
    Eigen::VectorXd x;
    double value{0.0};
    Eigen::VectorXd gradient;
    int iterations{0};
    int evaluations{0};
    bool converged{false};
    std::string status;
};

/// Quasi-Newton minimization with an inverse-Hessian BFGS update and
/// Armijo backtracking. Non-finite trial values count as failed steps.
/// When backtracking cannot show a decrease because the change is below
/// floating-point resolution, a step that reduces the gradient norm is still
/// accepted. Throws NumericalError if f(x0) is not finite.
BfgsResult minimize_bfgs(const Objective& objective, Eigen::VectorXd x0, const BfgsOptions& options = {});

}  // namespace dxchoice
