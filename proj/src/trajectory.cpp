#include "mpd/trajectory.hpp"


#include "mpd/error.hpp"

namespace mpd {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

Trajectory::Trajectory(MatrixXd s, double step) : states(std::move(s)), dt(step) {
    if (states.rows() < 2) {
        throw DimensionError("trajectory horizon must be at least 2");
    }
    if (states.cols() < 2 || states.cols() % 2 != 0) {
        throw DimensionError("trajectory state dimension must be 2*dof");
    }
    if (!(dt > 0.0)) {
        throw DimensionError("trajectory dt must be positive");
    }
    if (!states.allFinite()) {
        throw DimensionError("trajectory contains non-finite entries");
    }
}

GpParams build_gp_params(double dt, const MatrixXd& Qc) {
    if (!(dt > 0.0)) {
        throw ConfigError("GP dt must be positive");
    }
    const Index n = Qc.rows();
    if (n < 1 || Qc.cols() != n) {
        throw ConfigError("Qc must be a non-empty square matrix");
    }
    if (!Qc.isApprox(Qc.transpose()) || Eigen::LLT<MatrixXd>(Qc).info() != Eigen::Success) {
        throw ConfigError("Qc must be symmetric positive definite");
    }
    GpParams gp;
    gp.dt = dt;
    gp.Qc = Qc;
    const MatrixXd I = MatrixXd::Identity(n, n);
    gp.Phi = MatrixXd::Identity(2 * n, 2 * n);
    gp.Phi.topRightCorner(n, n) = dt * I;

    gp.Q.resize(2 * n, 2 * n);
    gp.Q.topLeftCorner(n, n) = (dt * dt * dt / 3.0) * Qc;
    gp.Q.topRightCorner(n, n) = (dt * dt / 2.0) * Qc;
    gp.Q.bottomLeftCorner(n, n) = (dt * dt / 2.0) * Qc;
    gp.Q.bottomRightCorner(n, n) = dt * Qc;

    // Closed-form block inverse: [[12/dt^3, -6/dt^2], [-6/dt^2, 4/dt]] (x) Qc^-1.
    const MatrixXd Qc_inv = Eigen::LLT<MatrixXd>(Qc).solve(I);
    gp.Qinv.resize(2 * n, 2 * n);
    gp.Qinv.topLeftCorner(n, n) = (12.0 / (dt * dt * dt)) * Qc_inv;
    gp.Qinv.topRightCorner(n, n) = (-6.0 / (dt * dt)) * Qc_inv;
    gp.Qinv.bottomLeftCorner(n, n) = (-6.0 / (dt * dt)) * Qc_inv;
    gp.Qinv.bottomRightCorner(n, n) = (4.0 / dt) * Qc_inv;
    gp.Qinv = 0.5 * (gp.Qinv + gp.Qinv.transpose()).eval();
    return gp;
}

GpParams build_gp_params(double dt, Index dof, double sigma2) {
    return build_gp_params(dt, sigma2 * MatrixXd::Identity(dof, dof));
}

namespace {

void check_gp(const Trajectory& traj, const GpParams& gp) {
    if (traj.state_dim() != 2 * gp.dof()) {
        throw DimensionError("trajectory dof does not match GP parameters");
    }
}

}  // namespace

double gp_cost(const Trajectory& traj, const GpParams& gp) {
    check_gp(traj, gp);
    double cost = 0.0;
    for (Index t = 0; t + 1 < traj.horizon(); ++t) {
        const VectorXd e = gp.Phi * traj.states.row(t).transpose() - traj.states.row(t + 1).transpose();
        cost += 0.5 * e.dot(gp.Qinv * e);
    }
    return cost;
}

MatrixXd gp_cost_grad(const Trajectory& traj, const GpParams& gp) {
    check_gp(traj, gp);
    MatrixXd grad = MatrixXd::Zero(traj.horizon(), traj.state_dim());
    const MatrixXd phi_t_qinv = gp.Phi.transpose() * gp.Qinv;
    for (Index t = 0; t + 1 < traj.horizon(); ++t) {
        const VectorXd e = gp.Phi * traj.states.row(t).transpose() - traj.states.row(t + 1).transpose();
        grad.row(t) += (phi_t_qinv * e).transpose();
        grad.row(t + 1) -= (gp.Qinv * e).transpose();
    }
    return grad;
}

MatrixXd gp_interior_hessian(Index horizon, const GpParams& gp) {
    if (horizon < 3) {
        throw DimensionError("interior GP Hessian needs a horizon of at least 3");
    }
    const Index d = 2 * gp.dof();
    const Index m = horizon - 2;
    MatrixXd hess = MatrixXd::Zero(m * d, m * d);
    const MatrixXd a = gp.Phi.transpose() * gp.Qinv * gp.Phi;  // s_t appears as Phi s_t
    const MatrixXd b = -gp.Phi.transpose() * gp.Qinv;          // cross term s_t, s_{t+1}
    // Transition t couples s_t and s_{t+1}; interior index i = t - 1.
    for (Index t = 0; t + 1 < horizon; ++t) {
        const Index i = t - 1;  // may be -1 (start) or m (goal)
        const Index j = t;      // interior index of s_{t+1}
        const bool ti = i >= 0 && i < m;
        const bool tj = j >= 0 && j < m;
        if (ti) {
            hess.block(i * d, i * d, d, d) += a;
        }
        if (tj) {
            hess.block(j * d, j * d, d, d) += gp.Qinv;
        }
        if (ti && tj) {
            hess.block(i * d, j * d, d, d) += b;
            hess.block(j * d, i * d, d, d) += b.transpose();
        }
    }
    return hess;
}

Trajectory straight_line_init(const VectorXd& q_start, const VectorXd& q_goal, Index horizon,
                              double dt) {
    if (horizon < 2) {
        throw DimensionError("straight-line init needs a horizon of at least 2");
    }
    if (q_start.size() != q_goal.size() || q_start.size() < 1) {
        throw DimensionError("start and goal dof mismatch");
    }
    const Index n = q_start.size();
    const VectorXd vel = (q_goal - q_start) / (static_cast<double>(horizon - 1) * dt);
    MatrixXd s(horizon, 2 * n);
    for (Index t = 0; t < horizon; ++t) {
        const double a = static_cast<double>(t) / static_cast<double>(horizon - 1);
        s.row(t).head(n) = ((1.0 - a) * q_start + a * q_goal).transpose();
        s.row(t).tail(n) = vel.transpose();
    }
    s.row(0).head(n) = q_start.transpose();
    s.row(horizon - 1).head(n) = q_goal.transpose();
    return Trajectory(std::move(s), dt);
}

}  // namespace mpd
