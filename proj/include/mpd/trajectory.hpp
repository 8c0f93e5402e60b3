#pragma once

#include <Eigen/Core>
#include <Eigen/Cholesky>

namespace mpd {

/// Discrete-time trajectory: row t holds s_t = [q_t, qdot_t].
struct Trajectory {
    Eigen::MatrixXd states;  // H x 2*dof
    double dt = 1.0;

    Trajectory() = default;
    Trajectory(Eigen::MatrixXd states, double dt);

    Eigen::Index horizon() const { return states.rows(); }
    Eigen::Index dof() const { return states.cols() / 2; }
    Eigen::Index state_dim() const { return states.cols(); }
    auto positions() const { return states.leftCols(dof()); }
    auto velocities() const { return states.rightCols(dof()); }
    Eigen::VectorXd position(Eigen::Index t) const { return states.row(t).head(dof()).transpose(); }
};

/// Constant-velocity (white-noise-on-acceleration) GP transition model.
struct GpParams {
    double dt = 1.0;
    Eigen::MatrixXd Qc;    // dof x dof power spectral density
    Eigen::MatrixXd Phi;   // 2dof x 2dof
    Eigen::MatrixXd Q;     // 2dof x 2dof
    Eigen::MatrixXd Qinv;

    Eigen::Index dof() const { return Qc.rows(); }
};

GpParams build_gp_params(double dt, const Eigen::MatrixXd& Qc);
/// Convenience: Qc = sigma2 * I.
GpParams build_gp_params(double dt, Eigen::Index dof, double sigma2);

/// 0.5 * sum_{t=0}^{H-2} |Phi s_t - s_{t+1}|^2_{Q^-1}
double gp_cost(const Trajectory& traj, const GpParams& gp);
Eigen::MatrixXd gp_cost_grad(const Trajectory& traj, const GpParams& gp);

/// Constant Hessian of gp_cost w.r.t. the stacked interior states s_1..s_{H-2}
/// (endpoints held fixed). Row-major stacking: index = (t-1)*d + k.
Eigen::MatrixXd gp_interior_hessian(Eigen::Index horizon, const GpParams& gp);

Trajectory straight_line_init(const Eigen::VectorXd& q_start, const Eigen::VectorXd& q_goal,
                              Eigen::Index horizon, double dt);

}  // namespace mpd
