//! Six-point perspective-n-point solve: multi-start Levenberg-Marquardt on
//! the reprojection error.
//!
//! The rotation is updated multiplicatively, `R ← exp([δω]×)·R`, so the
//! Jacobian with respect to the rotation increment is `−[R·P]×` and the
//! parameter vector never crosses the axis-angle singularity at π.

use nalgebra::{Matrix3, Matrix6, SMatrix, SVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::model::{CameraModel, FaceModel3D};
use super::rotation::{euler_to_rotation, rodrigues, rotation_log, rotation_to_euler, skew};
use super::{HeadPose, PoseError};
use crate::geometry::{chin_from_midpoints, LandmarkSet6, Point2};

pub const RESIDUALS: usize = 12;
type Residuals = SVector<f64, RESIDUALS>;
type Jacobian = SMatrix<f64, RESIDUALS, 6>;

/// Yaw angles (degrees) of the initial rotations.
const START_YAWS: [f64; 3] = [-45.0, 0.0, 45.0];
/// Model eye-line to mouth-line distance used to guess depth, mm.
const EYE_MOUTH_MM: f64 = 340.0;
const COLLINEAR_TOL_PX: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    pub max_iters: usize,
    pub tol: f64,
    pub lambda0: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-12,
            lambda0: 1e-3,
        }
    }
}

/// How the sixth (chin) observation is predicted from the model.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ChinModel {
    /// Project the model's 3D chin point.
    #[default]
    Anatomical,
    /// Apply the image-space chin extrapolation to the projected eye and
    /// mouth points. Use this when the observed chin was itself derived
    /// from the other five landmarks.
    Derived { k: f64 },
}

/// Reprojection residuals and their Jacobian for one set of correspondences.
#[derive(Debug, Clone)]
pub struct ReprojectionProblem {
    model: [Vector3<f64>; 6],
    observed: [Point2; 6],
    cam: CameraModel,
    chin: ChinModel,
}

impl ReprojectionProblem {
    pub fn new(
        observed: &LandmarkSet6,
        model: &FaceModel3D,
        cam: &CameraModel,
        chin: ChinModel,
    ) -> Self {
        Self {
            model: model.points(),
            observed: observed.points(),
            cam: *cam,
            chin,
        }
    }

    /// Predicted image points; `None` if any point is not in front of the camera.
    pub fn predict(&self, r: &Matrix3<f64>, t: &Vector3<f64>) -> Option<[Point2; 6]> {
        let mut out = [Point2::default(); 6];
        for (o, p) in out.iter_mut().zip(&self.model) {
            let x = r * p + t;
            if x.z <= 1e-9 {
                return None;
            }
            *o = self.cam.to_pixel(&x);
        }
        if let ChinModel::Derived { k } = self.chin {
            out[5] = chin_from_midpoints(out[0].midpoint(out[1]), out[3].midpoint(out[4]), k);
        }
        Some(out)
    }

    pub fn residuals(&self, r: &Matrix3<f64>, t: &Vector3<f64>) -> Option<Residuals> {
        let pred = self.predict(r, t)?;
        let mut res = Residuals::zeros();
        for (i, (p, o)) in pred.iter().zip(&self.observed).enumerate() {
            res[2 * i] = p.x - o.x;
            res[2 * i + 1] = p.y - o.y;
        }
        Some(res)
    }

    /// Jacobian of the residuals with respect to `(δω, δt)` at `δ = 0`.
    pub fn jacobian(&self, r: &Matrix3<f64>, t: &Vector3<f64>) -> Jacobian {
        let mut jac = Jacobian::zeros();
        let (fx, fy) = (self.cam.fx, self.cam.fy);
        for (i, p) in self.model.iter().enumerate() {
            let rp = r * p;
            let x = rp + t;
            let iz = 1.0 / x.z;
            let du = Vector3::new(fx * iz, 0.0, -fx * x.x * iz * iz);
            let dv = Vector3::new(0.0, -fy * iz, fy * x.y * iz * iz);
            let drot = -skew(&rp);
            let du_w = drot.transpose() * du;
            let dv_w = drot.transpose() * dv;
            for c in 0..3 {
                jac[(2 * i, c)] = du_w[c];
                jac[(2 * i, 3 + c)] = du[c];
                jac[(2 * i + 1, c)] = dv_w[c];
                jac[(2 * i + 1, 3 + c)] = dv[c];
            }
        }
        if let ChinModel::Derived { k } = self.chin {
            let a = (1.0 + k) / 2.0;
            let b = k / 2.0;
            for row in 0..2 {
                for c in 0..6 {
                    jac[(10 + row, c)] = a * (jac[(6 + row, c)] + jac[(8 + row, c)])
                        - b * (jac[(row, c)] + jac[(2 + row, c)]);
                }
            }
        }
        jac
    }

    fn cost(&self, r: &Matrix3<f64>, t: &Vector3<f64>) -> f64 {
        self.residuals(r, t)
            .map_or(f64::INFINITY, |res| 0.5 * res.norm_squared())
    }
}

/// Outcome of one damped least-squares run.
#[derive(Debug, Clone)]
pub struct Refinement {
    pub rotation: Matrix3<f64>,
    pub tvec: Vector3<f64>,
    /// Half the sum of squared residuals after each accepted step, starting
    /// with the initial guess.
    pub cost_history: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl Refinement {
    pub fn cost(&self) -> f64 {
        *self.cost_history.last().unwrap_or(&f64::INFINITY)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PnpSolver {
    pub params: SolverParams,
    pub chin: ChinModel,
}

impl PnpSolver {
    pub fn new(params: SolverParams, chin: ChinModel) -> Self {
        Self { params, chin }
    }

    /// Levenberg-Marquardt from a given starting pose.
    pub fn refine(
        &self,
        problem: &ReprojectionProblem,
        rotation: Matrix3<f64>,
        tvec: Vector3<f64>,
    ) -> Refinement {
        let SolverParams {
            max_iters,
            tol,
            lambda0,
        } = self.params;
        let mut r = rotation;
        let mut t = tvec;
        let mut cost = problem.cost(&r, &t);
        let mut history = vec![cost];
        let mut lambda = lambda0;
        let mut converged = false;
        let mut iterations = 0;
        let mut normal: Option<(Matrix6<f64>, Vector6<f64>)> = None;

        if !cost.is_finite() {
            return Refinement {
                rotation: r,
                tvec: t,
                cost_history: history,
                converged,
                iterations,
            };
        }

        while iterations < max_iters {
            if cost <= f64::MIN_POSITIVE {
                converged = true;
                break;
            }
            iterations += 1;
            let (jtj, jtr) = *normal.get_or_insert_with(|| {
                let jac = problem.jacobian(&r, &t);
                let res = problem.residuals(&r, &t).unwrap_or_else(Residuals::zeros);
                (jac.transpose() * jac, jac.transpose() * res)
            });
            let scale = jtj.diagonal().amax().max(f64::MIN_POSITIVE);
            let mut damped = jtj;
            for i in 0..6 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12 * scale);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-jtr))) else {
                lambda *= 10.0;
                continue;
            };
            if step.norm() < tol {
                converged = true;
                break;
            }
            let dw = Vector3::new(step[0], step[1], step[2]);
            let cand_r = rodrigues(&dw) * r;
            let cand_t = t + Vector3::new(step[3], step[4], step[5]);
            let cand_cost = problem.cost(&cand_r, &cand_t);
            if cand_cost < cost {
                let rel = (cost - cand_cost) / cost;
                r = cand_r;
                t = cand_t;
                cost = cand_cost;
                history.push(cost);
                lambda = (lambda / 10.0).max(1e-15);
                normal = None;
                if rel < tol {
                    converged = true;
                    break;
                }
            } else {
                lambda *= 10.0;
                if lambda > 1e20 {
                    break;
                }
            }
        }
        Refinement {
            rotation: r,
            tvec: t,
            cost_history: history,
            converged,
            iterations,
        }
    }

    /// Estimates head pose from six image points.
    pub fn solve(
        &self,
        points: &LandmarkSet6,
        model: &FaceModel3D,
        cam: &CameraModel,
    ) -> Result<HeadPose, PoseError> {
        let pts = points.points();
        if pts.iter().any(|p| !p.is_finite()) {
            return Err(PoseError::InvalidInput("non-finite image point"));
        }
        if collinear(&pts) {
            return Err(PoseError::NoConvergence(None));
        }
        let problem = ReprojectionProblem::new(points, model, cam, self.chin);
        let eye_mid = points.left_eye.midpoint(points.right_eye);
        let mouth_mid = points.mouth_left.midpoint(points.mouth_right);
        let axis_px = eye_mid.distance(mouth_mid).max(1.0);
        let z0 = cam.fx * EYE_MOUTH_MM / axis_px;
        let t0 = Vector3::new(
            (points.nose.x - cam.cx) * z0 / cam.fx,
            -(points.nose.y - cam.cy) * z0 / cam.fy,
            z0,
        );

        let best = START_YAWS
            .iter()
            .map(|&yaw| self.refine(&problem, euler_to_rotation(yaw, 0.0, 0.0), t0))
            .min_by(|a, b| a.cost().total_cmp(&b.cost()))
            .expect("at least one start");

        if !best.cost().is_finite() {
            return Err(PoseError::NoConvergence(None));
        }
        let pose = self.to_pose(&problem, &best)?;
        let in_front = model
            .points()
            .iter()
            .all(|p| (best.rotation * p + best.tvec).z > 0.0);
        if !in_front {
            return Err(PoseError::SolutionBehindCamera(Box::new(pose)));
        }
        if !pose.converged {
            return Err(PoseError::NoConvergence(Some(Box::new(pose))));
        }
        Ok(pose)
    }

    fn to_pose(&self, problem: &ReprojectionProblem, fit: &Refinement) -> Result<HeadPose, PoseError> {
        let euler = rotation_to_euler(&fit.rotation)?;
        let rvec = rotation_log(&fit.rotation);
        let rms = problem
            .residuals(&fit.rotation, &fit.tvec)
            .map_or(f64::INFINITY, |r| (r.norm_squared() / 6.0).sqrt());
        Ok(HeadPose {
            rvec: rvec.into(),
            tvec: fit.tvec.into(),
            yaw_deg: euler.yaw_deg,
            pitch_deg: euler.pitch_deg,
            roll_deg: euler.roll_deg,
            reproj_rms_px: rms,
            converged: fit.converged,
            iterations: fit.iterations,
        })
    }
}

/// Solves with the anatomical chin and default parameters.
pub fn solve_pnp(
    points: &LandmarkSet6,
    model: &FaceModel3D,
    cam: &CameraModel,
) -> Result<HeadPose, PoseError> {
    PnpSolver::default().solve(points, model, cam)
}

fn collinear(pts: &[Point2; 6]) -> bool {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.x).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.y).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in pts {
        let (dx, dy) = (p.x - mx, p.y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    // principal direction of the scatter
    let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (s, c) = angle.sin_cos();
    pts.iter()
        .map(|p| (-(p.x - mx) * s + (p.y - my) * c).abs())
        .fold(0.0, f64::max)
        <= COLLINEAR_TOL_PX
}
