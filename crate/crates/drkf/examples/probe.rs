// scratch probe
use drkf::psd::SymMatrix;
use drkf::sdp::{self, SolveOpts};
use drkf::filters::AmbiguityRadii;
use nalgebra::DMatrix;

fn main() {
    let stage = sdp::StageData {
        a: DMatrix::from_element(1, 1, 1.0),
        c: DMatrix::from_element(1, 1, 1.0),
        sigma_w_hat: SymMatrix::scalar(1.0),
        sigma_v_hat: SymMatrix::scalar(1.0),
    };
    for theta in [0.0, 0.001, 0.01, 0.05, 0.1, 0.5, 1.0] {
        let radii = AmbiguityRadii { theta_w: theta, theta_v: theta, theta_x0: 0.0 };
        let p = sdp::build_stage_sdp(&stage, &SymMatrix::scalar(1.0), &radii).unwrap();
        let t0 = std::time::Instant::now();
        let mut opts = SolveOpts::default();
        opts.max_iter = 200_000;
        match sdp::solve_sdp(&p, &opts) {
            Ok(sol) => {
                let oracle = sdp::scalar_oracle(1.0, 1.0, 1.0, 1.0, 1.0, theta, theta, 400).unwrap();
                println!("theta={theta:>6}: obj={:+.9} oracle={:+.9} diff={:+.2e} iters={} primal={:.1e} dual={:.1e} gap={:.1e} t={:?}",
                    -sol.objective, oracle.objective, -sol.objective - oracle.objective, sol.iterations, sol.primal_infeas, sol.dual_infeas, sol.duality_gap, t0.elapsed());
            }
            Err(e) => println!("theta={theta:>6}: ERR {e} t={:?}", t0.elapsed()),
        }
    }
    // 4x2 system at typical sweep radii
    let th = std::f64::consts::PI / 8.0; let _ = th;
    let a4 = DMatrix::from_row_slice(4, 4, &[1.0,0.2,0.0,0.0, 0.0,0.2,0.2,0.0, 0.0,0.0,0.2,0.2, 0.0,0.0,0.0,-1.0]);
    let c4 = DMatrix::from_row_slice(2, 4, &[1.0,0.0,0.0,0.0, 0.0,0.0,1.0,0.0]);
    let stage4 = sdp::StageData {
        a: a4, c: c4,
        sigma_w_hat: SymMatrix::identity(4).scale(0.01),
        sigma_v_hat: SymMatrix::identity(2).scale(0.01),
    };
    for theta in [0.01, 0.1, 1.0] {
        let radii = AmbiguityRadii { theta_w: theta, theta_v: theta, theta_x0: 0.0 };
        let p = sdp::build_stage_sdp(&stage4, &SymMatrix::identity(4).scale(0.02), &radii).unwrap();
        let t0 = std::time::Instant::now();
        let mut opts = SolveOpts::default();
        opts.max_iter = 200_000;
        match sdp::solve_sdp(&p, &opts) {
            Ok(sol) => println!("4x2 theta={theta:>5}: obj={:+.9} iters={} primal={:.1e} dual={:.1e} gap={:.1e} t={:?}",
                -sol.objective, sol.iterations, sol.primal_infeas, sol.dual_infeas, sol.duality_gap, t0.elapsed()),
            Err(e) => println!("4x2 theta={theta:>5}: ERR {e} t={:?}", t0.elapsed()),
        }
    }
}
